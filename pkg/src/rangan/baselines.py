"""Reference detectors: Z-score, Isolation Forest, LOF and a window autoencoder.

Isolation Forest and LOF see each window flattened to a ``w*F`` vector.
Every detector returns per-window scores where higher means more anomalous.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from rangan import _kernels
from rangan import autograd as ag

METHODS = ("zscore", "iforest", "lof", "autoencoder")


@dataclass
class BaselineScore:
    method: str
    scores: np.ndarray

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown baseline {self.method!r}")
        self.scores = np.asarray(self.scores, dtype=np.float64)

    def __len__(self) -> int:
        return self.scores.size


def _as_windows(windows) -> np.ndarray:
    return windows.windows if hasattr(windows, "windows") else np.asarray(windows, dtype=np.float64)


# ------------------------------------------------------------------- z-score

@dataclass
class ZScoreModel:
    mean: np.ndarray
    std: np.ndarray


def zscore_fit(train_windows) -> ZScoreModel:
    x = _as_windows(train_windows)
    rows = x.reshape(-1, x.shape[-1])
    return ZScoreModel(rows.mean(axis=0), rows.std(axis=0))


def zscore_score(windows, model: ZScoreModel) -> BaselineScore:
    """Largest absolute standardized deviation inside each window."""
    x = _as_windows(windows)
    keep = model.std > 0
    if not keep.any():
        return BaselineScore("zscore", np.zeros(x.shape[0]))
    z = np.abs(x[..., keep] - model.mean[keep]) / model.std[keep]
    return BaselineScore("zscore", z.reshape(x.shape[0], -1).max(axis=1))


# ---------------------------------------------------------- isolation forest

def harmonic(n: int) -> float:
    return float(np.sum(1.0 / np.arange(1, n + 1))) if n >= 1 else 0.0


def average_path_length(n: int) -> float:
    """c(n) = 2 H(n-1) - 2 (n-1) / n, the mean unsuccessful BST search depth."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


@dataclass
class IsolationForest:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_adjust: np.ndarray
    roots: np.ndarray
    subsample: int

    def path_lengths(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return _kernels.path_lengths(x, self.feature, self.threshold, self.left, self.right,
                                     self.leaf_adjust, self.roots)

    def score(self, x) -> np.ndarray:
        """2 ** (-E[path] / c(subsample)), in (0, 1)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.power(2.0, -self.path_lengths(x) / average_path_length(self.subsample))


def iforest_fit(x, n_trees: int = 100, subsample: int = 256, seed: int = 0) -> IsolationForest:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(x.shape[0], -1)
    n = x.shape[0]
    if subsample < 2:
        raise ValueError("subsample must be >= 2")
    if n < subsample:
        warnings.warn(f"only {n} points; reducing isolation-forest subsample from {subsample} to {n}")
        subsample = n
    if subsample < 2:
        raise ValueError("isolation forest needs at least 2 points")
    rng = np.random.default_rng(seed)
    height_limit = math.ceil(math.log2(subsample))
    feature, threshold, left, right, adjust, roots = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        adjust.append(0.0)
        return len(feature) - 1

    for _ in range(n_trees):
        sample = x[rng.choice(n, size=subsample, replace=False)]
        root = new_node()
        roots.append(root)
        stack = [(root, sample, 0)]
        while stack:
            node, data, depth = stack.pop()
            lo, hi = data.min(axis=0), data.max(axis=0)
            splittable = np.flatnonzero(hi > lo)
            if depth >= height_limit or data.shape[0] <= 1 or splittable.size == 0:
                adjust[node] = average_path_length(data.shape[0])
                continue
            f = int(splittable[rng.integers(splittable.size)])
            t = float(rng.uniform(lo[f], hi[f]))
            mask = data[:, f] < t
            feature[node], threshold[node] = f, t
            left[node], right[node] = new_node(), new_node()
            stack.append((right[node], data[~mask], depth + 1))
            stack.append((left[node], data[mask], depth + 1))
    return IsolationForest(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                           np.array(adjust), np.array(roots), subsample)


def iforest_score(forest: IsolationForest, windows) -> BaselineScore:
    x = _as_windows(windows)
    return BaselineScore("iforest", forest.score(x.reshape(x.shape[0], -1)))


# ---------------------------------------------------------------------- LOF

def lof(x, k: int = 20) -> np.ndarray:
    """Local outlier factor of each row against all other rows (exact kNN)."""
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    n = x.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"LOF needs 1 <= k < N, got k={k}, N={n}")
    dist, idx = _kernels.knn(x, k)
    k_distance = dist[:, -1]
    reach = np.maximum(dist, k_distance[idx])
    # the small offset keeps duplicate clusters finite (density capped, not infinite)
    lrd = 1.0 / (reach.mean(axis=1) + 1e-10)
    return lrd[idx].mean(axis=1) / lrd


def lof_score(windows, k: int = 20) -> BaselineScore:
    x = _as_windows(windows)
    return BaselineScore("lof", lof(x.reshape(x.shape[0], -1), k))


# --------------------------------------------------------------- autoencoder

@dataclass(frozen=True)
class AutoencoderConfig:
    hidden_dim: int = 64
    bottleneck_dim: int = 16
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0


class WindowAutoencoder:
    """Dense encoder/decoder over flattened windows with a sigmoid output."""

    def __init__(self, input_dim: int, cfg: AutoencoderConfig = AutoencoderConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        dims = [input_dim, cfg.hidden_dim, cfg.bottleneck_dim, cfg.hidden_dim, input_dim]
        self.layers = [(ag.glorot_uniform(rng, a, b), ag.zeros(b)) for a, b in zip(dims[:-1], dims[1:])]

    def parameters(self):
        for w, b in self.layers:
            yield w
            yield b

    def forward(self, x: ag.Tensor, params=None) -> ag.Tensor:
        layers = self.layers if params is None else params
        h = x
        for i, (w, b) in enumerate(layers):
            h = ag.linear(h, w, b)
            h = ag.sigmoid(h) if i == len(layers) - 1 else ag.relu(h)
        return h

    def reconstruction_error(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        frozen = [(w.detach(), b.detach()) for w, b in self.layers]
        recon = self.forward(ag.Tensor(x), frozen).data
        return ((recon - x) ** 2).mean(axis=1)


def autoencoder_fit(train_windows, cfg: AutoencoderConfig = AutoencoderConfig()) -> WindowAutoencoder:
    x = _as_windows(train_windows)
    x = x.reshape(x.shape[0], -1)
    model = WindowAutoencoder(x.shape[1], cfg)
    opt = ag.Adam(model.parameters(), lr=cfg.lr, beta1=0.9, beta2=0.999)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        for lo in range(0, x.shape[0], cfg.batch_size):
            batch = ag.Tensor(x[order[lo:lo + cfg.batch_size]])
            loss = ag.mse_loss(model.forward(batch), batch)
            ag.backward(loss)
            opt.step()
    return model


def autoencoder_score(model: WindowAutoencoder, windows) -> BaselineScore:
    x = _as_windows(windows)
    return BaselineScore("autoencoder", model.reconstruction_error(x.reshape(x.shape[0], -1)))
