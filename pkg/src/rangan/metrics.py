"""Window-level detection metrics: confusion counts, F1, ROC AUC, thresholds."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

REPORT_KEYS = ("method", "window_size", "threshold", "tp", "fp", "fn", "tn",
               "precision", "recall", "f1", "roc_auc")


def _check_lengths(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores but {labels.size} labels")
    return scores, labels


def confusion(scores, labels, threshold: float) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) with a window flagged when its score exceeds ``threshold``."""
    scores, labels = _check_lengths(scores, labels)
    pred = scores > threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return tp, fp, fn, tn


def precision(tp: int, fp: int) -> float:
    return tp / (tp + fp) if tp + fp else 0.0


def recall(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn else 0.0


def f1_from(prec: float, rec: float) -> float:
    return 2.0 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0


def f1(tp: int, fp: int, fn: int) -> float:
    return f1_from(precision(tp, fp), recall(tp, fn))


def roc_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) via average ranks; NaN for one class."""
    from scipy.stats import rankdata

    scores, labels = _check_lengths(scores, labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _sweep(scores: np.ndarray, labels: np.ndarray):
    """Confusion counts when thresholding at each distinct score value."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    lab = labels[order]
    # flagged set at threshold v is {score > v}; cumulate over descending scores
    uniq, first = np.unique(-s, return_index=True)
    thresholds = -uniq  # descending distinct values
    tp_cum = np.concatenate(([0], np.cumsum(lab == 1)))
    fp_cum = np.concatenate(([0], np.cumsum(lab != 1)))
    tp = tp_cum[first]
    fp = fp_cum[first]
    return thresholds, tp, fp


def select_threshold(scores, labels=None, strategy: str = "max_f1", percentile: float = 95.0) -> float:
    """Pick a decision threshold.

    ``max_f1`` tries every distinct score value and keeps the F1-maximizing one
    (lowest on ties); ``percentile`` ignores labels and returns that percentile
    of ``scores``.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValueError("cannot select a threshold from an empty score set")
    if strategy == "percentile":
        return float(np.percentile(scores, percentile))
    if strategy != "max_f1":
        raise ValueError(f"unknown threshold strategy {strategy!r}")
    if labels is None:
        raise ValueError("max_f1 threshold selection needs labels")
    scores, labels = _check_lengths(scores, labels)
    thresholds, tp, fp = _sweep(scores, labels)
    n_pos = int(np.sum(labels == 1))
    fn = n_pos - tp
    denom = 2 * tp + fp + fn
    f1s = np.where(denom > 0, 2.0 * tp / np.where(denom > 0, denom, 1), 0.0)
    best = f1s.max()
    # thresholds are descending, so the last maximal entry is the lowest one
    i = int(np.flatnonzero(f1s == best)[-1])
    return float(thresholds[i])


@dataclass
class EvalReport:
    method: str
    window_size: int
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    roc_auc: float

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in REPORT_KEYS}
        if isinstance(d["roc_auc"], float) and math.isnan(d["roc_auc"]):
            d["roc_auc"] = "NaN"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        if d.get("roc_auc") == "NaN":
            d["roc_auc"] = math.nan
        return cls(**{k: d[k] for k in REPORT_KEYS})


def evaluate(scores, labels, strategy: str = "max_f1", method: str = "", window_size: int = 0,
             threshold: float | None = None, percentile: float = 95.0) -> EvalReport:
    """Full report; pass ``threshold`` to skip selection (e.g. one fixed on a calibration set)."""
    scores, labels = _check_lengths(scores, labels)
    if threshold is None:
        threshold = select_threshold(scores, labels, strategy, percentile)
    tp, fp, fn, tn = confusion(scores, labels, threshold)
    p, r = precision(tp, fp), recall(tp, fn)
    return EvalReport(method, int(window_size), float(threshold), tp, fp, fn, tn,
                      p, r, f1_from(p, r), roc_auc(scores, labels))
