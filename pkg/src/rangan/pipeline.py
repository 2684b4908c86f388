"""Run configuration and the load -> window -> fit -> score -> evaluate chain."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rangan import baselines, gan, metrics, synthgen
from rangan import windowing as wd
from rangan.windowing import DataError, KpiFrame, WindowSet

METHODS = ("rangan", "autoencoder", "zscore", "iforest", "lof")
STRATEGIES = ("max_f1", "percentile")


class ConfigError(ValueError):
    """A configuration field is missing, mistyped or out of range."""


@dataclass
class RunConfig:
    data: str | None = None  # CSV path; None means the synthetic benchmark
    seed: int = 7
    kpis: list[str] | None = None
    window_size: int = 60
    stride: int = 1
    train_stride: int = 10
    split: float = 0.6
    method: str = "rangan"
    threshold: str = "max_f1"
    percentile: float = 95.0
    out: str = "out"
    scenario: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    score: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        for name in ("seed", "window_size", "stride", "train_stride"):
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), name, f"expected an integer, got {v!r}")
        need(self.seed >= 0, "seed", "must be >= 0")
        need(self.window_size >= 2, "window_size", f"must be >= 2, got {self.window_size}")
        need(self.stride >= 1, "stride", "must be >= 1")
        need(self.train_stride >= 1, "train_stride", "must be >= 1")
        need(isinstance(self.split, (int, float)) and 0 < self.split < 1, "split", "must be in (0, 1)")
        need(self.method in METHODS, "method", f"must be one of {', '.join(METHODS)}")
        need(self.threshold in STRATEGIES, "threshold", f"must be one of {', '.join(STRATEGIES)}")
        need(isinstance(self.percentile, (int, float)) and 0 <= self.percentile <= 100,
             "percentile", "must be in [0, 100]")
        need(self.kpis is None or (isinstance(self.kpis, list) and self.kpis),
             "kpis", "must be a non-empty list of column names")
        for name in ("scenario", "model", "train", "score", "baseline"):
            need(isinstance(getattr(self, name), dict), name, "must be an object")
        # build the nested configs once so bad overrides fail before any work
        self.scenario_kwargs()
        self.model_config(1)
        self.train_config()
        self.score_config()
        self.baseline_kwargs()
        self.autoencoder_config()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(f"{k}: unknown config field")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"config: cannot read {path}: {e.strerror}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: {path} is not valid JSON ({e})") from e
        return cls.from_dict(d)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # every random stream hangs off one seed; model-side streams also mix in
    # the window size so sizes in a sweep train independent models
    @property
    def model_seed(self) -> int:
        return self.seed + self.window_size

    def _build(self, cls, section: str, base: dict):
        args = {**base, **getattr(self, section)}
        names = {f.name for f in dataclasses.fields(cls)}
        for k in args:
            if k not in names:
                raise ConfigError(f"{section}.{k}: unknown field")
        try:
            return cls(**args)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{section}: {e}") from e

    def scenario_kwargs(self) -> dict:
        allowed = {"duration_steps", "n_events"}
        for k, v in self.scenario.items():
            if k not in allowed:
                raise ConfigError(f"scenario.{k}: unknown field")
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"scenario.{k}: must be a positive integer")
        return dict(self.scenario)

    def model_config(self, feature_count: int) -> gan.ModelConfig:
        return self._build(gan.ModelConfig, "model",
                           {"window_size": self.window_size, "feature_count": feature_count})

    def train_config(self) -> gan.TrainConfig:
        return self._build(gan.TrainConfig, "train", {"seed": self.model_seed})

    def score_config(self) -> gan.ScoreConfig:
        return self._build(gan.ScoreConfig, "score", {"seed": self.model_seed})

    def baseline_kwargs(self) -> dict:
        ae = {f.name for f in dataclasses.fields(baselines.AutoencoderConfig)} - {"seed"}
        allowed = {"n_trees", "subsample", "k"} | ae
        for k in self.baseline:
            if k not in allowed:
                raise ConfigError(f"baseline.{k}: unknown field")
        opts = {"n_trees": 100, "subsample": 256, "k": 20, **self.baseline}
        for k in ("n_trees", "subsample", "k"):
            if not isinstance(opts[k], int) or opts[k] < 1:
                raise ConfigError(f"baseline.{k}: must be a positive integer")
        return opts

    def autoencoder_config(self) -> baselines.AutoencoderConfig:
        ae = {k: v for k, v in self.baseline.items() if k not in ("n_trees", "subsample", "k")}
        try:
            return baselines.AutoencoderConfig(**{**ae, "seed": self.model_seed})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"baseline: {e}") from e


@dataclass
class Prepared:
    train: WindowSet
    test: WindowSet
    norm: wd.NormalizationParams


@dataclass
class RunResult:
    config: RunConfig
    scores: np.ndarray
    labels: np.ndarray
    origin_index: np.ndarray
    report: metrics.EvalReport
    model: gan.GanModel | None = None
    train_log: gan.TrainLog | None = None


def load_frame(cfg: RunConfig) -> KpiFrame:
    if cfg.data is not None:
        if not Path(cfg.data).is_file():
            raise DataError(f"data: no such file {cfg.data}")
        frame = wd.load_csv(cfg.data)
    else:
        spec = synthgen.default_benchmark_spec(cfg.seed, **cfg.scenario_kwargs())
        frame = synthgen.generate(spec).frame
    if cfg.kpis is not None:
        frame = frame.select(cfg.kpis)
    return frame


def prepare(cfg: RunConfig, frame: KpiFrame | None = None) -> Prepared:
    """Chronological split, min-max fitted on the training part, then windows."""
    frame = load_frame(cfg) if frame is None else frame
    if frame.labels is None:
        raise DataError("data: evaluation needs a label column")
    train, test = wd.split(frame, cfg.split)
    norm = wd.fit_minmax(train)
    train_w = wd.slide(wd.apply_minmax(train, norm), cfg.window_size, cfg.train_stride)
    test_w = wd.slide(wd.apply_minmax(test, norm), cfg.window_size, cfg.stride)
    for name, ws in (("training", train_w), ("test", test_w)):
        if len(ws) == 0:
            raise DataError(f"window_size: {cfg.window_size} leaves the {name} split with no windows")
    return Prepared(train_w, test_w, norm)


def train_model(cfg: RunConfig, prep: Prepared) -> tuple[gan.GanModel, gan.TrainLog]:
    model = gan.GanModel(cfg.model_config(prep.train.windows.shape[2]), seed=cfg.model_seed)
    return model, gan.train(model, prep.train, cfg.train_config())


def score_method(cfg: RunConfig, prep: Prepared, model: gan.GanModel | None = None):
    """Scores for the test windows. Returns (scores, model, train_log)."""
    train, test = prep.train, prep.test
    log_ = None
    if cfg.method == "rangan":
        if model is None:
            model, log_ = train_model(cfg, prep)
        elif model.config.window_size != cfg.window_size:
            raise DataError(f"window_size: checkpoint was trained with w={model.config.window_size}")
        return gan.score_windows(model, test, cfg.score_config()), model, log_
    opts = cfg.baseline_kwargs()
    if cfg.method == "zscore":
        s = baselines.zscore_score(test, baselines.zscore_fit(train))
    elif cfg.method == "iforest":
        forest = baselines.iforest_fit(train.flattened(), opts["n_trees"], opts["subsample"], cfg.model_seed)
        s = baselines.iforest_score(forest, test)
    elif cfg.method == "lof":
        s = baselines.lof_score(test, opts["k"])
    else:
        ae = baselines.autoencoder_fit(train, cfg.autoencoder_config())
        s = baselines.autoencoder_score(ae, test)
    return s.scores, None, None


def evaluate_scores(cfg: RunConfig, scores, labels) -> metrics.EvalReport:
    return metrics.evaluate(scores, labels, strategy=cfg.threshold, method=cfg.method,
                            window_size=cfg.window_size, percentile=cfg.percentile)


def run(cfg: RunConfig, model: gan.GanModel | None = None, frame: KpiFrame | None = None) -> RunResult:
    prep = prepare(cfg, frame)
    scores, model, log_ = score_method(cfg, prep, model)
    labels = prep.test.window_labels
    report = evaluate_scores(cfg, scores, labels)
    return RunResult(cfg, scores, labels, prep.test.origin_index, report, model, log_)
