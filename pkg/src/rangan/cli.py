"""Command-line front end: ``rangan {gen,train,score,eval,sweep,plot}``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
problems with the data, checkpoints or score traces.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from rangan import gan, metrics, synthgen
from rangan import windowing as wd
from rangan.pipeline import METHODS, ConfigError, RunConfig, prepare, run, score_method
from rangan.plot import PlotError, score_svg

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DEFAULT_SWEEP = (20, 30, 40, 50, 60)
TRACE_HEADER = ("window", "origin_index", "score", "label")
SWEEP_HEADER = ("method", "window_size", "f1", "precision", "recall", "roc_auc", "fp")

DATA_ERRORS = (wd.DataError, synthgen.ScenarioError, gan.CheckpointError, PlotError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ------------------------------------------------------------------ outputs

class Outputs:
    """Buffers files in memory and writes them only once a command succeeds."""

    def __init__(self, root):
        self.root = Path(root)
        self.files: dict[Path, bytes] = {}

    def add(self, name: str, content: str | bytes) -> Path:
        path = self.root / name
        self.files[path] = content.encode() if isinstance(content, str) else content
        return path

    def commit(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        for path, blob in self.files.items():
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_bytes(blob)
            os.replace(tmp, path)
            print(f"wrote {path}")


def trace_csv(scores, origin_index, labels=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for i, (o, s) in enumerate(zip(np.asarray(origin_index).tolist(), np.asarray(scores).tolist())):
        w.writerow([i, o, repr(float(s)), "" if labels is None else int(labels[i])])
    return buf.getvalue()


def read_trace(path) -> tuple[np.ndarray, np.ndarray | None]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise wd.DataError(f"{path}: {e.strerror}") from e
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise wd.DataError(f"{path}: line 1: expected header {','.join(TRACE_HEADER)}")
    scores, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(TRACE_HEADER):
            raise wd.DataError(f"{path}: line {lineno}: expected {len(TRACE_HEADER)} fields")
        try:
            scores.append(float(row[2]))
            labels.append(None if row[3] == "" else int(row[3]))
        except ValueError as e:
            raise wd.DataError(f"{path}: line {lineno}: {e}") from e
    has_labels = bool(labels) and all(v is not None for v in labels)
    return np.array(scores), (np.array(labels, dtype=np.int8) if has_labels else None)


def sweep_csv(reports: list[metrics.EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in reports:
        d = r.to_dict()
        w.writerow([d[k] if isinstance(d[k], str) else repr(d[k]) if isinstance(d[k], float) else d[k]
                    for k in SWEEP_HEADER])
    return buf.getvalue()


def _plot_title(cfg: RunConfig) -> str:
    return f"{cfg.method} anomaly score, window size {cfg.window_size}"


# ----------------------------------------------------------------- commands

def cmd_gen(args, cfg: RunConfig, out: Outputs) -> None:
    spec = synthgen.default_benchmark_spec(cfg.seed, **cfg.scenario_kwargs())
    sc = synthgen.generate(spec)
    out.add(args.name, wd.csv_text(sc.frame))
    print(f"rows {len(sc.frame)} events {len(spec.contention_events)} "
          f"anomalous_rows {int(sc.labels.sum())}")


def cmd_train(args, cfg: RunConfig, out: Outputs) -> None:
    if cfg.method != "rangan":
        raise UsageError(f"method: train builds the GAN detector only, got {cfg.method!r}")
    prep = prepare(cfg)
    model = gan.GanModel(cfg.model_config(prep.train.windows.shape[2]), seed=cfg.model_seed)
    log_ = gan.train(model, prep.train, cfg.train_config())
    out.add(args.checkpoint_name, gan.checkpoint_bytes(model))
    out.add("train_log.tsv", "epoch\td_loss\tg_loss\n" + "".join(line + "\n" for line in log_.lines()))


def _load_checkpoint(path) -> gan.GanModel | None:
    if path is None:
        return None
    if not Path(path).is_file():
        raise wd.DataError(f"checkpoint: no such file {path}")
    return gan.load_model(path)


def cmd_score(args, cfg: RunConfig, out: Outputs) -> None:
    prep = prepare(cfg)
    model = _load_checkpoint(args.checkpoint)
    scores, _, _ = score_method(cfg, prep, model)
    out.add(f"scores_{cfg.method}_w{cfg.window_size}.csv",
            trace_csv(scores, prep.test.origin_index, prep.test.window_labels))


def _eval_one(cfg: RunConfig, out: Outputs, model=None) -> metrics.EvalReport:
    res = run(cfg, model)
    stem = f"{cfg.method}_w{cfg.window_size}"
    out.add(f"report_{stem}.json", res.report.to_json())
    out.add(f"scores_{stem}.csv", trace_csv(res.scores, res.origin_index, res.labels))
    out.add(f"scores_{stem}.svg", score_svg(res.scores, res.labels, res.report.threshold, _plot_title(cfg)))
    r = res.report
    print(f"{cfg.method} w={cfg.window_size} f1={r.f1:.4f} precision={r.precision:.4f} "
          f"recall={r.recall:.4f} roc_auc={r.roc_auc:.4f} fp={r.fp}")
    return r


def cmd_eval(args, cfg: RunConfig, out: Outputs) -> None:
    model = _load_checkpoint(args.checkpoint)
    for method in args.methods:
        _eval_one(cfg.replace(method=method), out, model if method == "rangan" else None)


def cmd_sweep(args, cfg: RunConfig, out: Outputs) -> None:
    reports = [_eval_one(cfg.replace(window_size=w), out) for w in args.windows]
    out.add(f"sweep_{cfg.method}.csv", sweep_csv(reports))


def cmd_plot(args, cfg: RunConfig, out: Outputs) -> None:
    scores, labels = read_trace(args.scores)
    if scores.size == 0:
        raise PlotError(f"{args.scores}: score trace is empty")
    threshold = args.threshold
    if threshold is None and args.report is not None:
        try:
            threshold = float(json.loads(Path(args.report).read_text())["threshold"])
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise wd.DataError(f"{args.report}: cannot read threshold ({e})") from e
    if threshold is None:
        threshold = metrics.select_threshold(scores, labels, "max_f1" if labels is not None else "percentile",
                                             cfg.percentile)
    name = args.name or Path(args.scores).with_suffix(".svg").name
    out.add(name, score_svg(scores, labels, threshold, Path(args.scores).stem))


# ------------------------------------------------------------------ parsing

def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _method_list(text: str) -> list[str]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in vals if v not in METHODS]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"unknown method {bad[0] if bad else text!r}; "
                                         f"choose from {', '.join(METHODS)}")
    return vals


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {"default": None}
    p.add_argument("--config", metavar="PATH", help="JSON run configuration", **d)
    p.add_argument("--seed", type=_u64, help="seed for every random stream", **d)
    p.add_argument("--out", metavar="DIR", help="output directory", **d)


def _run_flags(p: argparse.ArgumentParser, method: bool = True) -> None:
    p.add_argument("--data", metavar="CSV", help="KPI CSV instead of the synthetic benchmark")
    p.add_argument("--window-size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--train-stride", type=int)
    p.add_argument("--epochs", type=int, help="GAN training epochs")
    p.add_argument("--inversion-steps", type=int)
    if method:
        p.add_argument("--method", choices=METHODS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rangan", description="Transformer-GAN anomaly detection for RAN KPI series")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic KPI scenario as CSV")
    _global_flags(p, True)
    p.add_argument("--duration", type=int, help="time steps")
    p.add_argument("--events", type=int, help="contention events")
    p.add_argument("--name", default="kpis.csv", help="output file name")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the GAN detector and write a checkpoint")
    _global_flags(p, True)
    _run_flags(p)
    p.add_argument("--checkpoint-name", default="model.ck")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write the per-window score trace of the test split")
    _global_flags(p, True)
    _run_flags(p)
    p.add_argument("--checkpoint", metavar="PATH", help="trained GAN checkpoint (else train first)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="score and evaluate; one JSON report per method")
    _global_flags(p, True)
    _run_flags(p, method=False)
    p.add_argument("--method", dest="methods", type=_method_list, metavar="M[,M...]",
                   help=f"one or more of {', '.join(METHODS)}")
    p.add_argument("--checkpoint", metavar="PATH")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate one method over several window sizes")
    _global_flags(p, True)
    _run_flags(p)
    p.add_argument("--windows", type=_int_list, default=list(DEFAULT_SWEEP), metavar="W[,W...]")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render a score trace as SVG")
    _global_flags(p, True)
    p.add_argument("--scores", required=True, metavar="CSV", help="score trace written by score/eval")
    p.add_argument("--threshold", type=float)
    p.add_argument("--report", metavar="JSON", help="take the threshold from this report")
    p.add_argument("--name", help="output file name")
    p.set_defaults(func=cmd_plot)
    return parser


def resolve_config(args) -> RunConfig:
    d = {}
    if args.config is not None:
        if not Path(args.config).is_file():
            raise ConfigError(f"config: no such file {args.config}")
        d = json.loads(Path(args.config).read_text()) if Path(args.config).stat().st_size else {}
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be a JSON object")
    d = {k: (dict(v) if isinstance(v, dict) else v) for k, v in d.items()}
    for flag, key in (("seed", "seed"), ("out", "out"), ("data", "data"), ("window_size", "window_size"),
                      ("stride", "stride"), ("train_stride", "train_stride"), ("method", "method")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    for flag, section, key in (("epochs", "train", "epochs"), ("inversion_steps", "score", "inversion_steps"),
                               ("duration", "scenario", "duration_steps"), ("events", "scenario", "n_events")):
        v = getattr(args, flag, None)
        if v is not None:
            d.setdefault(section, {})[key] = v
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"rangan: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "eval" and args.methods is None:
            args.methods = [cfg.method]
        out = Outputs(cfg.out)
        args.func(args, cfg, out)
        out.commit()
    except (UsageError, ConfigError, json.JSONDecodeError) as e:
        print(f"rangan: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"rangan: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
