"""KPI frame ingestion, min-max scaling and sliding-window segmentation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rangan import _kernels


class DataError(ValueError):
    """Input data violates the CSV schema or a frame invariant."""


@dataclass
class KpiFrame:
    timestamps: np.ndarray
    features: np.ndarray
    feature_names: list[str]
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError(f"features must be T x F, got shape {self.features.shape}")
        t, f = self.features.shape
        if self.timestamps.shape != (t,):
            raise DataError(f"{len(self.timestamps)} timestamps for {t} feature rows")
        if len(self.feature_names) != f:
            raise DataError(f"{len(self.feature_names)} feature names for {f} columns")
        if t > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (t,):
                raise DataError(f"{len(self.labels)} labels for {t} rows")
            if np.any((self.labels != 0) & (self.labels != 1)):
                raise DataError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def select(self, names: Sequence[str]) -> "KpiFrame":
        """Keep only the named KPI columns, in the given order."""
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise DataError(f"unknown KPI columns: {', '.join(missing)}")
        cols = [self.feature_names.index(n) for n in names]
        return KpiFrame(self.timestamps, self.features[:, cols], list(names), self.labels)

    def slice_rows(self, lo: int, hi: int) -> "KpiFrame":
        labels = None if self.labels is None else self.labels[lo:hi]
        return KpiFrame(self.timestamps[lo:hi], self.features[lo:hi], list(self.feature_names), labels)


@dataclass(frozen=True)
class NormalizationParams:
    minimum: np.ndarray
    maximum: np.ndarray


@dataclass
class WindowSet:
    window_size: int
    stride: int
    windows: np.ndarray  # N x w x F
    window_labels: np.ndarray  # N
    origin_index: np.ndarray  # N
    feature_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.windows.shape[0]

    def flattened(self) -> np.ndarray:
        return self.windows.reshape(len(self), -1)


def _parse_float(cell: str, lineno: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric value {cell!r} in column {column!r}") from None


def load_csv(path) -> KpiFrame:
    """Read a KPI CSV: ``timestamp`` first, optional trailing ``label``.

    Empty KPI cells are forward-filled; gaps before the first observed value
    of a column become 0.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "timestamp":
            raise DataError(f"{path}: first column must be 'timestamp'")
        has_label = header[-1] == "label"
        names = header[1:-1] if has_label else header[1:]
        if not names:
            raise DataError(f"{path}: no KPI columns")
        stamps, rows, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                ts = int(row[0])
            except ValueError:
                raise DataError(f"line {lineno}: bad timestamp {row[0]!r}") from None
            if stamps and ts <= stamps[-1]:
                raise DataError(f"line {lineno}: timestamp {ts} not after {stamps[-1]}")
            stamps.append(ts)
            kpi_cells = row[1:-1] if has_label else row[1:]
            rows.append([np.nan if not c.strip() else _parse_float(c, lineno, n)
                         for c, n in zip(kpi_cells, names)])
            if has_label:
                lab = row[-1].strip()
                if lab not in ("0", "1"):
                    raise DataError(f"line {lineno}: label must be 0 or 1, got {lab!r}")
                labels.append(int(lab))
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return KpiFrame(np.array(stamps, dtype=np.int64), fill_missing(feats), names,
                    np.array(labels, dtype=np.int64) if has_label else None)


def fill_missing(x: np.ndarray) -> np.ndarray:
    """Forward-fill NaNs down each column, then zero-fill leading gaps."""
    x = np.array(x, dtype=np.float64, copy=True)
    if x.size == 0:
        return x
    t = x.shape[0]
    idx = np.where(np.isnan(x), 0, np.arange(t)[:, None])
    np.maximum.accumulate(idx, axis=0, out=idx)
    filled = x[idx, np.arange(x.shape[1])]
    return np.nan_to_num(filled, nan=0.0)


def csv_text(frame: KpiFrame) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["timestamp", *frame.feature_names]
    if frame.labels is not None:
        header.append("label")
    writer.writerow(header)
    for i in range(len(frame)):
        row = [str(int(frame.timestamps[i]))]
        row += [repr(float(v)) for v in frame.features[i]]
        if frame.labels is not None:
            row.append(str(int(frame.labels[i])))
        writer.writerow(row)
    return buf.getvalue()


def save_csv(frame: KpiFrame, path) -> None:
    Path(path).write_text(csv_text(frame), encoding="utf-8")


def fit_minmax(frame: KpiFrame) -> NormalizationParams:
    if len(frame) < 1:
        raise DataError("cannot fit normalization on an empty frame")
    return NormalizationParams(frame.features.min(axis=0), frame.features.max(axis=0))


def apply_minmax(frame: KpiFrame, params: NormalizationParams) -> KpiFrame:
    if params.minimum.shape[0] != frame.n_features:
        raise DataError(f"normalization fitted on {params.minimum.shape[0]} features, "
                        f"frame has {frame.n_features}")
    span = params.maximum - params.minimum
    safe = np.where(span > 0, span, 1.0)
    scaled = (frame.features - params.minimum) / safe
    # constant training columns carry no information
    scaled[:, span <= 0] = 0.0
    return KpiFrame(frame.timestamps, np.clip(scaled, 0.0, 1.0), list(frame.feature_names), frame.labels)


def window_count(t: int, w: int, s: int) -> int:
    return 0 if t < w else (t - w) // s + 1


def slide(frame: KpiFrame, w: int, s: int = 1) -> WindowSet:
    """Cut overlapping ``w``-step windows every ``s`` steps; the short tail is dropped.

    A window is labelled anomalous when any of its rows is.
    """
    if w < 1 or s < 1:
        raise ValueError(f"window size and stride must be >= 1, got w={w}, s={s}")
    t, f = frame.features.shape
    n = window_count(t, w, s)
    starts = np.arange(n, dtype=np.int64) * s
    if n:
        view = np.lib.stride_tricks.sliding_window_view(frame.features, w, axis=0)
        windows = np.ascontiguousarray(view[starts].transpose(0, 2, 1))
    else:
        windows = np.zeros((0, w, f))
    if frame.labels is None or n == 0:
        labels = np.zeros(n, dtype=np.int64)
    else:
        labels = _kernels.any_in_windows(frame.labels.astype(bool), starts, w).astype(np.int64)
    return WindowSet(w, s, windows, labels, starts, list(frame.feature_names))


def split(frame: KpiFrame, train_fraction: float = 0.6) -> tuple[KpiFrame, KpiFrame]:
    """Chronological prefix/suffix split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    cut = int(round(len(frame) * train_fraction))
    return frame.slice_rows(0, cut), frame.slice_rows(cut, len(frame))
