"""Standalone SVG 1.1 line chart of a per-window score trace."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 300
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 30, 40


class PlotError(ValueError):
    pass


def anomalous_runs(labels) -> list[tuple[int, int]]:
    """Maximal runs of consecutive anomalous windows as inclusive (start, end)."""
    lab = np.asarray(labels, dtype=bool)
    if lab.size == 0:
        return []
    edges = np.diff(np.concatenate(([0], lab.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _f(v: float) -> str:
    return f"{v:.2f}"


def score_svg(scores, labels=None, threshold: float | None = None, title: str = "") -> str:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise PlotError("score trace is empty")
    if not np.all(np.isfinite(s)):
        raise PlotError("score trace contains non-finite values")
    if labels is not None and len(labels) != s.size:
        raise PlotError(f"{len(labels)} labels for {s.size} scores")
    n = s.size
    lo, hi = float(s.min()), float(s.max())
    if threshold is not None and np.isfinite(threshold):
        lo, hi = min(lo, threshold), max(hi, threshold)
    if hi == lo:
        hi = lo + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    step = pw / max(n - 1, 1)

    def x_at(i):
        return LEFT + i * step

    def y_at(v):
        return TOP + ph * (1.0 - (v - lo) / (hi - lo))

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH // 2}" y="18" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="13">{escape(title)}</text>')
    half = step / 2 if n > 1 else pw / 2
    for a, b in anomalous_runs(labels if labels is not None else []):
        x0 = max(LEFT, x_at(a) - half)
        x1 = min(LEFT + pw, x_at(b) + half)
        out.append(f'<rect class="anomaly" x="{_f(x0)}" y="{TOP}" width="{_f(x1 - x0)}" '
                   f'height="{ph}" fill="#f4a6a6" fill-opacity="0.5"/>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    pts = " ".join(f"{_f(x_at(i))},{_f(y_at(v))}" for i, v in enumerate(s.tolist()))
    out.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1" points="{pts}"/>')
    if threshold is not None and np.isfinite(threshold):
        y = _f(y_at(threshold))
        out.append(f'<line class="threshold" x1="{LEFT}" y1="{y}" x2="{LEFT + pw}" y2="{y}" '
                   f'stroke="#c00000" stroke-dasharray="6,4"/>')
    font = 'font-family="sans-serif" font-size="11"'
    out += [
        f'<text x="{LEFT - 6}" y="{_f(TOP + 4)}" text-anchor="end" {font}>{hi:.4g}</text>',
        f'<text x="{LEFT - 6}" y="{_f(TOP + ph)}" text-anchor="end" {font}>{lo:.4g}</text>',
        f'<text x="{LEFT}" y="{HEIGHT - BOTTOM + 16}" {font}>0</text>',
        f'<text x="{LEFT + pw}" y="{HEIGHT - BOTTOM + 16}" text-anchor="end" {font}>{n - 1}</text>',
        f'<text x="{LEFT + pw // 2}" y="{HEIGHT - 8}" text-anchor="middle" {font}>window index</text>',
        f'<text x="14" y="{TOP + ph // 2}" text-anchor="middle" {font} '
        f'transform="rotate(-90 14 {TOP + ph // 2})">anomaly score</text>',
        "</svg>",
    ]
    return "\n".join(out) + "\n"
