import json
import re

import numpy as np
import pytest

from rangan import cli, metrics
from rangan.pipeline import ConfigError, RunConfig
from rangan.plot import PlotError, anomalous_runs, score_svg

FAST = {"scenario": {"duration_steps": 1500, "n_events": 3},
        "model": {"latent_dim": 4, "model_dim": 8, "attention_heads": 2, "feedforward_dim": 16},
        "train": {"epochs": 1}, "score": {"inversion_steps": 2}}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({**FAST, "window_size": 10, "stride": 3}))
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


# ------------------------------------------------------------------ config

def test_config_defaults_valid():
    cfg = RunConfig()
    assert cfg.window_size == 60 and cfg.method == "rangan" and cfg.model_seed == 67


@pytest.mark.parametrize("field, value", [("window_size", 1), ("method", "ocsvm"), ("split", 1.5),
                                          ("stride", 0), ("threshold", "best"), ("kpis", [])])
def test_invalid_fields_named(field, value):
    with pytest.raises(ConfigError, match=f"^{field}"):
        RunConfig.from_dict({field: value})


def test_unknown_fields_named():
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.from_dict({"colour": 1})
    with pytest.raises(ConfigError, match=r"model\.depth"):
        RunConfig.from_dict({"model": {"depth": 3}})
    with pytest.raises(ConfigError, match="train"):
        RunConfig.from_dict({"train": {"epochs": -1}})


# -------------------------------------------------------------------- usage

def test_no_command_is_usage_error(capsys):
    assert run() == 1


def test_bad_flag_is_usage_error(tmp_path):
    assert run("--out", tmp_path, "eval", "--window-size", "abc") == 1


def test_invalid_config_exits_1_without_outputs(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"window_size": 1}))
    out = tmp_path / "o"
    assert run("--config", bad, "--out", out, "eval", "--method", "zscore") == 1
    assert not out.exists()


def test_help_exits_zero():
    assert run("--help") == 0


# --------------------------------------------------------------------- gen

def test_gen_writes_loadable_csv(tmp_path, capsys):
    assert run("--seed", 3, "--out", tmp_path, "gen", "--duration", 800, "--events", 2) == 0
    assert "rows 800 events 2" in capsys.readouterr().out
    from rangan.windowing import load_csv
    f = load_csv(tmp_path / "kpis.csv")
    assert len(f) == 800 and f.labels.sum() > 0


def test_gen_is_deterministic(tmp_path):
    run("--seed", 4, "--out", tmp_path / "a", "gen", "--duration", 500, "--events", 1)
    run("--seed", 4, "--out", tmp_path / "b", "gen", "--duration", 500, "--events", 1)
    assert (tmp_path / "a/kpis.csv").read_bytes() == (tmp_path / "b/kpis.csv").read_bytes()


# ---------------------------------------------------------------- pipeline

def test_eval_report_schema(tmp_path, cfg_file):
    assert run("--config", cfg_file, "--out", tmp_path, "eval", "--method", "zscore,iforest") == 0
    for m in ("zscore", "iforest"):
        d = json.loads((tmp_path / f"report_{m}_w10.json").read_text())
        assert list(d) == list(metrics.REPORT_KEYS)
        assert d["method"] == m and d["window_size"] == 10
        assert (tmp_path / f"scores_{m}_w10.svg").exists()


def test_eval_missing_data_file_exits_2(tmp_path):
    assert run("--out", tmp_path, "eval", "--method", "zscore", "--data", tmp_path / "nope.csv") == 2


def test_eval_malformed_csv_exits_2(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp,a,label\n1,1,0\n1,2,0\n")
    assert run("--out", tmp_path / "o", "eval", "--method", "zscore", "--data", p) == 2


def test_eval_on_csv_matches_generated(tmp_path, cfg_file):
    run("--seed", 7, "--config", cfg_file, "--out", tmp_path / "g", "gen")
    run("--seed", 7, "--config", cfg_file, "--out", tmp_path / "a", "eval", "--method", "zscore")
    run("--seed", 7, "--config", cfg_file, "--out", tmp_path / "b", "eval", "--method", "zscore",
        "--data", tmp_path / "g/kpis.csv")
    assert (tmp_path / "a/report_zscore_w10.json").read_text() == \
        (tmp_path / "b/report_zscore_w10.json").read_text()


def test_train_then_score_with_checkpoint(tmp_path, cfg_file):
    assert run("--config", cfg_file, "--out", tmp_path, "train") == 0
    log_lines = (tmp_path / "train_log.tsv").read_text().splitlines()
    assert log_lines[0] == "epoch\td_loss\tg_loss" and len(log_lines) == 2
    assert run("--config", cfg_file, "--out", tmp_path, "score", "--checkpoint", tmp_path / "model.ck") == 0
    scores, labels = cli.read_trace(tmp_path / "scores_rangan_w10.csv")
    assert scores.size > 0 and labels is not None
    # eval from the same checkpoint reproduces the scored trace
    assert run("--config", cfg_file, "--out", tmp_path / "e", "eval", "--checkpoint", tmp_path / "model.ck") == 0
    assert (tmp_path / "e/scores_rangan_w10.csv").read_bytes() == (tmp_path / "scores_rangan_w10.csv").read_bytes()


def test_train_rejects_baseline_method(tmp_path, cfg_file):
    assert run("--config", cfg_file, "--out", tmp_path, "train", "--method", "lof") == 1


def test_score_with_corrupt_checkpoint_exits_2(tmp_path, cfg_file):
    (tmp_path / "x.ck").write_bytes(b"garbage")
    assert run("--config", cfg_file, "--out", tmp_path, "score", "--checkpoint", tmp_path / "x.ck") == 2


def test_sweep_matches_independent_evals(tmp_path, cfg_file):
    assert run("--config", cfg_file, "--out", tmp_path / "s", "sweep", "--method", "rangan",
               "--windows", "8,12") == 0
    rows = (tmp_path / "s/sweep_rangan.csv").read_text().splitlines()
    assert rows[0] == ",".join(cli.SWEEP_HEADER) and len(rows) == 3
    for w in (8, 12):
        assert run("--config", cfg_file, "--out", tmp_path / f"e{w}", "eval", "--window-size", w) == 0
        assert (tmp_path / f"s/report_rangan_w{w}.json").read_bytes() == \
            (tmp_path / f"e{w}/report_rangan_w{w}.json").read_bytes()


def test_seed_flag_overrides_config(tmp_path, cfg_file):
    run("--config", cfg_file, "--seed", 1, "--out", tmp_path / "a", "eval", "--method", "zscore")
    run("--config", cfg_file, "--seed", 2, "--out", tmp_path / "b", "eval", "--method", "zscore")
    assert (tmp_path / "a/scores_zscore_w10.csv").read_text() != (tmp_path / "b/scores_zscore_w10.csv").read_text()


def test_flags_after_command_accepted(tmp_path, cfg_file):
    assert run("eval", "--config", cfg_file, "--out", tmp_path, "--method", "zscore") == 0
    assert (tmp_path / "report_zscore_w10.json").exists()


# -------------------------------------------------------------------- plot

def write_trace(path, scores, labels):
    path.write_text(cli.trace_csv(np.asarray(scores), np.arange(len(scores)), labels))


def test_plot_100_points_one_polyline(tmp_path):
    r = np.random.default_rng(0)
    labels = np.zeros(100, dtype=int)
    labels[10:20] = 1
    labels[50:51] = 1
    labels[90:] = 1
    write_trace(tmp_path / "t.csv", r.random(100), labels)
    assert run("--out", tmp_path, "plot", "--scores", tmp_path / "t.csv", "--threshold", 0.5) == 0
    svg = (tmp_path / "t.svg").read_text()
    polylines = re.findall(r'<polyline[^>]*points="([^"]*)"', svg)
    assert len(polylines) == 1 and len(polylines[0].split()) == 100
    assert svg.count('class="anomaly"') == 3
    assert svg.count('class="threshold"') == 1
    assert 'version="1.1"' in svg and svg.startswith("<?xml")


def test_plot_empty_trace_exits_nonzero(tmp_path):
    (tmp_path / "e.csv").write_text(",".join(cli.TRACE_HEADER) + "\n")
    assert run("--out", tmp_path, "plot", "--scores", tmp_path / "e.csv") == 2
    assert not (tmp_path / "e.svg").exists()


def test_plot_missing_trace_exits_2(tmp_path):
    assert run("--out", tmp_path, "plot", "--scores", tmp_path / "none.csv") == 2


def test_plot_is_valid_xml():
    import xml.etree.ElementTree as ET
    root = ET.fromstring(score_svg([0.1, 0.4, 0.2], [0, 1, 0], 0.3, "a < b & c"))
    assert root.tag == "{http://www.w3.org/2000/svg}svg"


def test_plot_rejects_empty():
    with pytest.raises(PlotError):
        score_svg([])


@pytest.mark.parametrize("seed", range(20))
def test_shaded_rects_equal_maximal_runs(seed):
    r = np.random.default_rng(seed)
    labels = (r.random(int(r.integers(1, 200))) < r.uniform(0.05, 0.6)).astype(int)
    # loop oracle for maximal runs
    runs, prev = 0, 0
    for v in labels:
        runs += v == 1 and prev == 0
        prev = v
    svg = score_svg(r.random(len(labels)), labels, 0.5)
    assert svg.count('class="anomaly"') == runs == len(anomalous_runs(labels))
