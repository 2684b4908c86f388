"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary (see conftest.py) and can also
be produced with ``python tests/test_acceptance.py``.
"""
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gradcheck import check  # noqa: E402

from rangan import autograd as ag  # noqa: E402
from rangan import cli, metrics, pipeline  # noqa: E402
from rangan import windowing as wd  # noqa: E402
from rangan.gan import attention  # noqa: E402

RESULTS: dict[int, str] = {}

# tolerances and budgets, pinned
METRIC_TOL = 1e-12
METRIC_BUDGET_S = 30.0
GRAD_TOL = 1e-4
GRAD_BUDGET_S = 60.0
E2E_BUDGET_S = 600.0
F1_MIN, AUC_MIN, MARGIN_OVER_Z = 0.70, 0.75, 0.10
TREND_F1_GAP = 0.05
SEPARATION_SE = 2.0
TREND_SEEDS = (7, 8, 9)


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])


# ---------------------------------------------------------------- helpers

def pairwise_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def naive_slide(x, labels, w, s):
    wins, labs = [], []
    start = 0
    while start + w <= len(x):
        wins.append(x[start:start + w])
        labs.append(1 if any(labels[start:start + w]) else 0)
        start += s
    return wins, labs


# ------------------------------------------------------------ criteria 1-4

def test_1_metric_exactness():
    r = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_f1 = worst_auc = 0.0
    for _ in range(1000):
        n = int(r.integers(2, 120))
        scores = np.round(r.normal(size=n), int(r.integers(0, 4)))
        labels = (r.random(n) < r.uniform(0.05, 0.95)).astype(int)
        if labels.min() == labels.max():
            labels[int(r.integers(n))] ^= 1
        t = float(r.choice(scores))
        tp = int(np.sum((scores > t) & (labels == 1)))
        fp = int(np.sum((scores > t) & (labels == 0)))
        fn = int(np.sum((scores <= t) & (labels == 1)))
        p = tp / (tp + fp) if tp + fp else 0.0
        rc = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * rc / (p + rc) if p + rc else 0.0
        rep = metrics.evaluate(scores, labels, threshold=t)
        worst_f1 = max(worst_f1, abs(rep.precision - p), abs(rep.recall - rc), abs(rep.f1 - f1))
        worst_auc = max(worst_auc, abs(metrics.roc_auc(scores, labels) - pairwise_auc(scores, labels)))
    elapsed = time.perf_counter() - t0
    ok = worst_f1 <= METRIC_TOL and worst_auc <= METRIC_TOL and elapsed < METRIC_BUDGET_S
    record(1, ok, f"max |dPRF1|={worst_f1:.1e} max |dAUC|={worst_auc:.1e} "
                  f"(tol {METRIC_TOL}) in {elapsed:.1f}s (< {METRIC_BUDGET_S:.0f}s)")
    assert ok


def test_2_table_consistency():
    a = metrics.f1_from(0.75, 0.93)
    b = metrics.f1_from(0.66, 0.83)
    ok = abs(a - 0.830) <= 0.005 and abs(b - 0.73) <= 0.01
    record(2, ok, f"f1(0.75,0.93)={a:.4f} (0.830+-0.005)  f1(0.66,0.83)={b:.4f} (0.73+-0.01)")
    assert ok


def _grad_ops(r):
    """(name, op, input arrays) for every differentiable op."""
    x35 = r.standard_normal((3, 5))
    away = np.where(np.abs(x35) < 1e-3, 0.5, x35)
    drop_rng = 5
    return [
        ("add", ag.add, [r.standard_normal((4, 3)), r.standard_normal((4, 3))]),
        ("sub", ag.sub, [r.standard_normal((4, 3)), r.standard_normal((4, 3))]),
        ("mul", ag.mul, [r.standard_normal((4, 3)), r.standard_normal((4, 3))]),
        ("scale", lambda x: ag.scale(x, -1.7), [x35]),
        ("relu", ag.relu, [away]),
        ("sigmoid", ag.sigmoid, [x35]),
        ("tanh", ag.tanh, [x35]),
        ("absolute", ag.absolute, [away]),
        ("square", ag.square, [x35]),
        ("add_bias", ag.add_bias, [r.standard_normal((2, 3, 4)), r.standard_normal((3, 4))]),
        ("dropout", lambda x: ag.dropout(x, 0.3, np.random.default_rng(drop_rng)), [x35]),
        ("reshape", lambda x: ag.reshape(x, (5, 3)), [x35]),
        ("transpose", lambda x: ag.transpose(x, (1, 0)), [x35]),
        ("swap_last", ag.swap_last, [r.standard_normal((2, 3, 4))]),
        ("total", ag.total, [x35]),
        ("mean", lambda x: ag.mean(x, axis=1), [x35]),
        ("matmul", ag.matmul, [r.standard_normal((3, 4)), r.standard_normal((4, 2))]),
        ("matmul_batched", ag.matmul, [r.standard_normal((2, 3, 4)), r.standard_normal((2, 4, 2))]),
        ("linear", ag.linear, [r.standard_normal((2, 3, 4)), r.standard_normal((4, 5)), r.standard_normal(5)]),
        ("softmax", lambda x: ag.softmax(x, axis=-1), [x35]),
        ("layer_norm", lambda x, g, b: ag.layer_norm(x, g, b, 1e-5),
         [r.standard_normal((4, 8)), r.standard_normal(8), r.standard_normal(8)]),
        ("bce_loss", lambda p: ag.bce_loss(p, (np.arange(6) % 2).astype(float)), [r.uniform(0.05, 0.95, 6)]),
        ("mse_loss", lambda p: ag.mse_loss(p, np.ones(6)), [r.standard_normal(6)]),
        ("attention", lambda q, k, v, wo, bo: attention(q, k, v, 2, wo, bo),
         [r.standard_normal((4, 8)) for _ in range(3)] + [r.standard_normal((8, 8)) * 0.3, r.standard_normal(8)]),
    ]


def test_3_gradient_suite():
    t0 = time.perf_counter()
    worst: dict[str, float] = {}
    for seed in range(20):
        for name, op, arrays in _grad_ops(np.random.default_rng(seed)):
            worst[name] = max(worst.get(name, 0.0), check(op, arrays))
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < GRAD_TOL}
    ok = not bad and elapsed < GRAD_BUDGET_S
    record(3, ok, f"{len(worst)} ops x 20 seeds, worst rel err {max(worst.values()):.1e} "
                  f"(attention {worst['attention']:.1e}, layer_norm {worst['layer_norm']:.1e}; "
                  f"< {GRAD_TOL}) in {elapsed:.1f}s (< {GRAD_BUDGET_S:.0f}s)" + (f" failing: {bad}" if bad else ""))
    assert ok


def test_4_windowing_oracle():
    r = np.random.default_rng(4)
    mismatches = 0
    for _ in range(500):
        t, w, s = int(r.integers(1, 120)), int(r.integers(1, 50)), int(r.integers(1, 15))
        x = r.random((t, 3))
        labels = (r.random(t) < r.uniform(0.0, 0.3)).astype(int)
        frame = wd.KpiFrame(np.arange(t), x, ["a", "b", "c"], labels)
        ws = wd.slide(frame, w, s)
        wins, labs = naive_slide(x, labels, w, s)
        same = (len(ws) == len(wins) and ws.window_labels.tolist() == labs
                and all(np.array_equal(ws.windows[i], wins[i]) for i in range(len(wins))))
        mismatches += not same
    record(4, mismatches == 0, f"500 fuzzed (T, w, s) triples, {mismatches} mismatches against the loop oracle")
    assert mismatches == 0


# ------------------------------------------------------- end-to-end runs

@pytest.fixture(scope="module")
def benchmark_eval(tmp_path_factory):
    """Two identical CLI eval runs on the seed-7 benchmark at w=60."""
    runs = []
    for tag in ("a", "b"):
        out = tmp_path_factory.mktemp(f"eval_{tag}")
        t0 = time.perf_counter()
        code = cli.main(["--seed", "7", "--out", str(out), "eval", "--window-size", "60",
                         "--stride", "1", "--method", "rangan"])
        elapsed = time.perf_counter() - t0
        code_z = cli.main(["--seed", "7", "--out", str(out), "eval", "--window-size", "60",
                           "--stride", "1", "--method", "zscore"])
        runs.append({"out": out, "code": code, "code_z": code_z, "elapsed": elapsed})
    return runs


def _report(out: Path, method: str, w: int) -> dict:
    return json.loads((out / f"report_{method}_w{w}.json").read_text())


@pytest.fixture(scope="module")
def trend_reports(benchmark_eval):
    reports = {(7, 60): _report(benchmark_eval[0]["out"], "rangan", 60)}
    for seed in TREND_SEEDS:
        for w in (20, 60):
            if (seed, w) not in reports:
                res = pipeline.run(pipeline.RunConfig(seed=seed, window_size=w))
                reports[(seed, w)] = res.report.to_dict()
    return reports


@pytest.mark.slow
def test_5_end_to_end_detection(benchmark_eval):
    run = benchmark_eval[0]
    assert run["code"] == 0 and run["code_z"] == 0
    rg, zs = _report(run["out"], "rangan", 60), _report(run["out"], "zscore", 60)
    ok = (rg["f1"] >= F1_MIN and rg["roc_auc"] >= AUC_MIN and rg["f1"] - zs["f1"] >= MARGIN_OVER_Z
          and run["elapsed"] <= E2E_BUDGET_S)
    record(5, ok, f"rangan F1={rg['f1']:.3f} (>= {F1_MIN}) AUC={rg['roc_auc']:.3f} (>= {AUC_MIN}) "
                  f"zscore F1={zs['f1']:.3f} margin={rg['f1'] - zs['f1']:.3f} (>= {MARGIN_OVER_Z}) "
                  f"in {run['elapsed']:.0f}s (<= {E2E_BUDGET_S:.0f}s)")
    assert ok


@pytest.mark.slow
def test_6_window_size_trend(trend_reports):
    f1 = {w: np.mean([trend_reports[(s, w)]["f1"] for s in TREND_SEEDS]) for w in (20, 60)}
    fp = {w: np.mean([trend_reports[(s, w)]["fp"] for s in TREND_SEEDS]) for w in (20, 60)}
    ok = f1[60] >= f1[20] + TREND_F1_GAP and fp[60] < fp[20]
    per_seed = " ".join(f"s{s}:{trend_reports[(s, 20)]['f1']:.2f}/{trend_reports[(s, 60)]['f1']:.2f}"
                        for s in TREND_SEEDS)
    record(6, ok, f"mean F1 w60={f1[60]:.3f} w20={f1[20]:.3f} (gap >= {TREND_F1_GAP}); "
                  f"mean FP w60={fp[60]:.1f} < w20={fp[20]:.1f}; per seed w20/w60 {per_seed}")
    assert ok


@pytest.mark.slow
def test_7_score_separation(benchmark_eval):
    scores, labels = cli.read_trace(benchmark_eval[0]["out"] / "scores_rangan_w60.csv")
    a, n = scores[labels == 1], scores[labels == 0]
    se = math.sqrt(a.var(ddof=1) / len(a) + n.var(ddof=1) / len(n))
    gap = a.mean() - n.mean()
    ok = gap >= SEPARATION_SE * se
    record(7, ok, f"mean anomalous {a.mean():.4f} - mean normal {n.mean():.4f} = {gap:.4f}, "
                  f"pooled SE {se:.5f}, ratio {gap / se:.1f} (>= {SEPARATION_SE})")
    assert ok


@pytest.mark.slow
def test_8_determinism(benchmark_eval):
    a, b = benchmark_eval[0]["out"], benchmark_eval[1]["out"]
    names = [f"{kind}_{m}_w60.{ext}" for m in ("rangan", "zscore") for kind, ext in (("report", "json"),
                                                                                     ("scores", "svg"))]
    diffs = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    record(8, not diffs, f"{len(names)} files compared across two eval runs, differing: {diffs or 'none'}")
    assert not diffs


def test_9_checkpoint_round_trip(tmp_path):
    from rangan import gan
    cfg = pipeline.RunConfig(seed=7, window_size=60, train={"epochs": 2})
    prep = pipeline.prepare(cfg)
    model, _ = pipeline.train_model(cfg, prep)
    windows = prep.test.windows[:100]
    before = gan.score_windows(model, windows, cfg.score_config())
    gan.save_model(model, tmp_path / "m.ck")
    after = gan.score_windows(gan.load_model(tmp_path / "m.ck"), windows, cfg.score_config())
    ok = before.tobytes() == after.tobytes() and len(before) == 100
    record(9, ok, f"100 windows, save -> load -> score bit-identical: {ok}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
