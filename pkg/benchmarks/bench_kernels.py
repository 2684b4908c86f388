"""Time each kernel on its numba path and its numpy path.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes mirror the default detector workload (batch 64, window 60, width 32).
"""
import argparse
import timeit

import numpy as np

from rangan import _kernels as K
from rangan import baselines


def cases(rng):
    att = rng.normal(size=(64 * 2, 60, 60))
    hid = rng.normal(size=(64 * 60, 32))
    gam, bet = rng.normal(size=32), rng.normal(size=32)
    ln = K._layer_norm_numpy(hid, gam, bet, 1e-5)
    g = rng.normal(size=hid.shape)
    s = K._softmax_numpy(att.copy())
    ga = rng.normal(size=att.shape)
    series = rng.random(10_000)
    flags = rng.random(4000) < 0.05
    starts = np.arange(0, 4000 - 60 + 1)
    pts = rng.normal(size=(1500, 300))
    forest = baselines.iforest_fit(rng.normal(size=(2000, 300)), 100, 256, seed=0)
    fargs = (pts, forest.feature, forest.threshold, forest.left, forest.right, forest.leaf_adjust, forest.roots)
    return [
        ("softmax_grad", lambda: K._softmax_grad_numba(s.reshape(-1, 60), ga.reshape(-1, 60)),
         lambda: K._softmax_grad_numpy(s, ga)),
        ("layer_norm", lambda: K._layer_norm_numba(hid, gam, bet, 1e-5),
         lambda: K._layer_norm_numpy(hid, gam, bet, 1e-5)),
        ("layer_norm_grad", lambda: K._layer_norm_grad_numba(g, ln[1], ln[2], gam),
         lambda: K._layer_norm_grad_numpy(g, ln[1], ln[2], gam)),
        ("ema", lambda: K._ema_numba(series, 0.1), lambda: K._ema_numpy(series, 0.1)),
        ("window_labels", lambda: K._any_in_windows_numba(flags, starts, 60),
         lambda: K._any_in_windows_numpy(flags, starts, 60)),
        ("knn k=20", lambda: K._knn_numba(pts, 20), lambda: K._knn_numpy(pts, 20)),
        ("iforest paths", lambda: K._path_lengths_numba(*fargs), lambda: K._path_lengths_numpy(*fargs)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K._HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fast, slow in cases(np.random.default_rng(0)):
        fast()  # compile
        t_fast = min(timeit.repeat(fast, number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(slow, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_fast:>10.2f}{t_slow:>10.2f}{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
