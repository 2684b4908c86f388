"""Hot loops with a numba path and a pure-numpy path.

Set ``RANGAN_NUMBA=0`` in the environment before import to force the numpy
path (also used automatically when numba is not importable). Both paths
return the same values; the numba path is only faster.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("RANGAN_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


# --------------------------------------------------------------- numpy paths

def _ema_numpy(x: np.ndarray, alpha: float) -> np.ndarray:
    out = np.empty_like(x)
    acc = x[0] if len(x) else 0.0
    for i in range(len(x)):
        acc = alpha * x[i] + (1.0 - alpha) * acc
        out[i] = acc
    return out


def _any_in_windows_numpy(flags: np.ndarray, starts: np.ndarray, w: int) -> np.ndarray:
    csum = np.concatenate(([0], np.cumsum(flags.astype(np.int64))))
    return (csum[starts + w] - csum[starts]) > 0


def _sq_dist_blocks(x: np.ndarray):
    """Row blocks of squared distances with the self-distance set to inf."""
    n = x.shape[0]
    sq = np.einsum("ij,ij->i", x, x)
    chunk = max(1, 2_000_000 // max(n, 1))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        d2 = sq[lo:hi, None] + sq[None, :] - 2.0 * (x[lo:hi] @ x.T)
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        yield lo, hi, d2


def _knn_numpy(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    dist = np.empty((n, k))
    idx = np.empty((n, k), dtype=np.int64)
    for lo, hi, d2 in _sq_dist_blocks(x):
        # stable sort keeps lower index first among equal distances
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx[lo:hi] = order
        dist[lo:hi] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return dist, idx


def _path_lengths_numpy(x, feature, threshold, left, right, leaf_adjust, roots):
    n = x.shape[0]
    out = np.zeros(n)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        depth = np.zeros(n)
        active = feature[node] >= 0
        while active.any():
            a = node[active]
            go_left = x[rows[active], feature[a]] < threshold[a]
            node[active] = np.where(go_left, left[a], right[a])
            depth[active] += 1.0
            active = feature[node] >= 0
        out += depth + leaf_adjust[node]
    return out / len(roots)


def _softmax_numpy(x: np.ndarray) -> np.ndarray:
    e = x - x.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def _softmax_grad_numpy(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    gs = g * s
    gs -= s * gs.sum(axis=-1, keepdims=True)
    return gs


def _layer_norm_numpy(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, xhat, inv[..., 0]


def _layer_norm_grad_numpy(g, xhat, inv, gamma):
    gx = g * gamma
    gx = inv[..., None] * (gx - gx.mean(axis=-1, keepdims=True)
                           - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
    return gx


# --------------------------------------------------------------- numba paths

if _HAVE_NUMBA:

    @njit(cache=True)
    def _ema_numba(x, alpha):
        out = np.empty_like(x)
        acc = x[0] if x.shape[0] > 0 else 0.0
        for i in range(x.shape[0]):
            acc = alpha * x[i] + (1.0 - alpha) * acc
            out[i] = acc
        return out

    @njit(cache=True)
    def _any_in_windows_numba(flags, starts, w):
        csum = np.zeros(flags.shape[0] + 1, dtype=np.int64)
        for i in range(flags.shape[0]):
            csum[i + 1] = csum[i] + (1 if flags[i] else 0)
        out = np.empty(starts.shape[0], dtype=np.bool_)
        for i in range(starts.shape[0]):
            out[i] = csum[starts[i] + w] > csum[starts[i]]
        return out

    @njit(cache=True)
    def _softmax_grad_numba(s, g):
        out = np.empty_like(s)
        for r in range(s.shape[0]):
            dot = 0.0
            for j in range(s.shape[1]):
                dot += g[r, j] * s[r, j]
            for j in range(s.shape[1]):
                out[r, j] = s[r, j] * (g[r, j] - dot)
        return out

    @njit(cache=True)
    def _layer_norm_numba(x, gamma, beta, eps):
        rows, d = x.shape
        out = np.empty_like(x)
        xhat = np.empty_like(x)
        inv = np.empty(rows)
        for r in range(rows):
            mu = 0.0
            for j in range(d):
                mu += x[r, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[r, j] - mu
                var += c * c
            var /= d
            iv = 1.0 / np.sqrt(var + eps)
            inv[r] = iv
            for j in range(d):
                h = (x[r, j] - mu) * iv
                xhat[r, j] = h
                out[r, j] = h * gamma[j] + beta[j]
        return out, xhat, inv

    @njit(cache=True)
    def _layer_norm_grad_numba(g, xhat, inv, gamma):
        rows, d = g.shape
        out = np.empty_like(g)
        for r in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                gx = g[r, j] * gamma[j]
                m1 += gx
                m2 += gx * xhat[r, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                out[r, j] = inv[r] * (g[r, j] * gamma[j] - m1 - xhat[r, j] * m2)
        return out

    @njit(cache=True)
    def _select_k_numba(d2, k):
        # insertion into a sorted k-buffer; strict comparison keeps the
        # lower index first among equal distances
        rows, n = d2.shape
        dist = np.empty((rows, k))
        idx = np.empty((rows, k), dtype=np.int64)
        for r in range(rows):
            filled = 0
            for j in range(n):
                v = d2[r, j]
                if filled == k and v >= dist[r, k - 1]:
                    continue
                pos = filled if filled < k else k - 1
                while pos > 0 and dist[r, pos - 1] > v:
                    if pos < k:
                        dist[r, pos] = dist[r, pos - 1]
                        idx[r, pos] = idx[r, pos - 1]
                    pos -= 1
                dist[r, pos] = v
                idx[r, pos] = j
                if filled < k:
                    filled += 1
            for m in range(k):
                dist[r, m] = np.sqrt(dist[r, m])
        return dist, idx

    def _knn_numba(x, k):
        n = x.shape[0]
        dist = np.empty((n, k))
        idx = np.empty((n, k), dtype=np.int64)
        for lo, hi, d2 in _sq_dist_blocks(x):
            dist[lo:hi], idx[lo:hi] = _select_k_numba(d2, k)
        return dist, idx

    @njit(cache=True)
    def _path_lengths_numba(x, feature, threshold, left, right, leaf_adjust, roots):
        n = x.shape[0]
        out = np.zeros(n)
        for t in range(roots.shape[0]):
            for i in range(n):
                node = roots[t]
                depth = 0.0
                while feature[node] >= 0:
                    if x[i, feature[node]] < threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                    depth += 1.0
                out[i] += depth + leaf_adjust[node]
        return out / roots.shape[0]


# ------------------------------------------------------------------ dispatch

def _rows(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64).reshape(-1, x.shape[-1])


def softmax_last(x: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis.

    The forward pass is bound by ``exp``; numpy's vectorised version beats a
    compiled scalar loop, so there is a single path here.
    """
    return _softmax_numpy(x)


def softmax_last_grad(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax given its output ``s``."""
    if not USE_NUMBA:
        return _softmax_grad_numpy(s, g)
    return _softmax_grad_numba(_rows(s), _rows(g)).reshape(s.shape)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float):
    """Returns (output, normalized input, per-row inverse std)."""
    if not USE_NUMBA:
        return _layer_norm_numpy(x, gamma, beta, eps)
    out, xhat, inv = _layer_norm_numba(_rows(x), gamma, beta, float(eps))
    return out.reshape(x.shape), xhat.reshape(x.shape), inv.reshape(x.shape[:-1])


def layer_norm_grad(g, xhat, inv, gamma) -> np.ndarray:
    if not USE_NUMBA:
        return _layer_norm_grad_numpy(g, xhat, inv, gamma)
    return _layer_norm_grad_numba(_rows(g), _rows(xhat), inv.reshape(-1), gamma).reshape(g.shape)


def ema(x: np.ndarray, alpha: float) -> np.ndarray:
    """Exponential moving average seeded with the first sample."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _ema_numba(x, float(alpha)) if USE_NUMBA else _ema_numpy(x, float(alpha))


def any_in_windows(flags: np.ndarray, starts: np.ndarray, w: int) -> np.ndarray:
    flags = np.ascontiguousarray(flags, dtype=np.bool_)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    if USE_NUMBA:
        return _any_in_windows_numba(flags, starts, int(w))
    return _any_in_windows_numpy(flags, starts, int(w))


def knn(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbours (self excluded), ties broken by lower index."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _knn_numba(x, int(k)) if USE_NUMBA else _knn_numpy(x, int(k))


def path_lengths(x, feature, threshold, left, right, leaf_adjust, roots) -> np.ndarray:
    """Mean isolation-tree path length per row over all trees in the forest.

    Trees are stored as flat node arrays; ``feature < 0`` marks a leaf and
    ``leaf_adjust`` holds the expected extra depth added at that leaf.
    """
    args = (
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(feature, dtype=np.int64),
        np.ascontiguousarray(threshold, dtype=np.float64),
        np.ascontiguousarray(left, dtype=np.int64),
        np.ascontiguousarray(right, dtype=np.int64),
        np.ascontiguousarray(leaf_adjust, dtype=np.float64),
        np.ascontiguousarray(roots, dtype=np.int64),
    )
    return _path_lengths_numba(*args) if USE_NUMBA else _path_lengths_numpy(*args)
