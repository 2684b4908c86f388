"""Transformer-block GAN for KPI windows: model, adversarial training, scoring.

The generator maps a latent vector to a ``w x F`` window: a linear map lifts
the latent to ``w`` tokens of width ``d``, sinusoidal positions are added, a
stack of pre-norm transformer blocks mixes the tokens over time, and a
per-token linear head with a sigmoid produces values in (0, 1).

The discriminator embeds each time step of a window to width ``d``, runs its
own block stack, mean-pools over time into a feature vector and maps that to a
real/fake probability.

Windows are scored by inverting the generator: a latent is searched that
reproduces the window, and the score mixes the reconstruction residual with
the distance between discriminator features of the window and of its
reconstruction.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from rangan import autograd as ag
from rangan.autograd import ShapeError, Tensor

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RANGANCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    window_size: int = 60
    feature_count: int = 5
    latent_dim: int = 16
    model_dim: int = 32
    attention_heads: int = 2
    blocks_per_net: int = 1
    feedforward_dim: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "dropout_rate":
                if not 0.0 <= v < 1.0:
                    raise ValueError(f"dropout_rate must be in [0, 1), got {v}")
            elif int(v) != v or v < 1:
                raise ValueError(f"{f.name} must be a positive integer, got {v}")
        if self.model_dim % self.attention_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by "
                             f"attention_heads {self.attention_heads}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    d_steps_per_g_step: int = 1
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    # weight of the generator's feature-matching term; 0 gives the plain
    # non-saturating objective
    feature_matching: float = 10.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "d_steps_per_g_step"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.feature_matching < 0:
            raise ValueError("feature_matching must be >= 0")


@dataclass(frozen=True)
class ScoreConfig:
    inversion_steps: int = 50
    inversion_lr: float = 0.2
    lam: float = 0.1
    mode: str = "inversion"  # or "discriminator": score = 1 - D(x)
    seed: int = 0
    batch_size: int = 256

    def __post_init__(self):
        if self.inversion_steps < 0:
            raise ValueError("inversion_steps must be >= 0")
        if self.inversion_lr <= 0:
            raise ValueError("inversion_lr must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.mode not in ("inversion", "discriminator"):
            raise ValueError(f"unknown score mode {self.mode!r}")


@dataclass
class TrainLog:
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [f"{i}\t{d!r}\t{g!r}" for i, (d, g) in enumerate(zip(self.d_loss, self.g_loss))]


Params = dict[str, Tensor]


# ----------------------------------------------------------------- attention

def attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int = 1,
              w_out: Tensor | None = None, b_out: Tensor | None = None,
              return_weights: bool = False):
    """Multi-head scaled dot-product attention over the time axis.

    ``q``, ``k``, ``v`` are ``[n, d]`` or ``[batch, n, d]``. Each head attends
    with ``softmax(q_h k_h^T / sqrt(d / n_heads)) v_h``; heads are concatenated
    and mixed by ``w_out`` (identity when omitted).
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} must match")
    if q.ndim not in (2, 3):
        raise ShapeError(f"attention expects [n, d] or [batch, n, d], got {q.shape}")
    squeeze = q.ndim == 2
    if squeeze:
        q, k, v = (ag.reshape(t, (1,) + t.shape) for t in (q, k, v))
    b, n, d = q.shape
    if d % n_heads:
        raise ShapeError(f"attention: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def heads(t):
        return ag.transpose(ag.reshape(t, (b, n, n_heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = heads(ag.scale(q, 1.0 / math.sqrt(dh))), heads(k), heads(v)
    scores = ag.matmul(qh, ag.swap_last(kh))
    weights = ag.softmax(scores, axis=-1)
    mixed = ag.reshape(ag.transpose(ag.matmul(weights, vh), (0, 2, 1, 3)), (b, n, d))
    if w_out is not None:
        mixed = ag.linear(mixed, w_out, b_out)
    if squeeze:
        mixed = ag.reshape(mixed, (n, d))
    return (mixed, weights) if return_weights else mixed


def positional_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# --------------------------------------------------------------------- model

def _block_params(rng, prefix: str, d: int, ff: int) -> Params:
    p = {}
    for ln in ("ln1", "ln2"):
        p[f"{prefix}.{ln}.gamma"] = ag.ones(d)
        p[f"{prefix}.{ln}.beta"] = ag.zeros(d)
    for m in ("wq", "wk", "wv", "wo"):
        p[f"{prefix}.attn.{m}"] = ag.glorot_uniform(rng, d, d)
        p[f"{prefix}.attn.b{m[1]}"] = ag.zeros(d)
    p[f"{prefix}.ff1.w"] = ag.glorot_uniform(rng, d, ff)
    p[f"{prefix}.ff1.b"] = ag.zeros(ff)
    p[f"{prefix}.ff2.w"] = ag.glorot_uniform(rng, ff, d)
    p[f"{prefix}.ff2.b"] = ag.zeros(d)
    return p


def _block(x: Tensor, p: Params, prefix: str, heads: int, drop: float, rng) -> Tensor:
    h = ag.layer_norm(x, p[f"{prefix}.ln1.gamma"], p[f"{prefix}.ln1.beta"])
    q = ag.linear(h, p[f"{prefix}.attn.wq"], p[f"{prefix}.attn.bq"])
    k = ag.linear(h, p[f"{prefix}.attn.wk"], p[f"{prefix}.attn.bk"])
    v = ag.linear(h, p[f"{prefix}.attn.wv"], p[f"{prefix}.attn.bv"])
    a = attention(q, k, v, heads, p[f"{prefix}.attn.wo"], p[f"{prefix}.attn.bo"])
    x = ag.add(x, ag.dropout(a, drop, rng))
    h = ag.layer_norm(x, p[f"{prefix}.ln2.gamma"], p[f"{prefix}.ln2.beta"])
    h = ag.relu(ag.linear(h, p[f"{prefix}.ff1.w"], p[f"{prefix}.ff1.b"]))
    h = ag.linear(h, p[f"{prefix}.ff2.w"], p[f"{prefix}.ff2.b"])
    return ag.add(x, ag.dropout(h, drop, rng))


class GanModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        c = config
        rng = np.random.default_rng(seed)
        d, w = c.model_dim, c.window_size
        # the lift is w independent latent->token maps, so scale init per token
        bound = math.sqrt(6.0 / (c.latent_dim + d))
        g: Params = {
            "gen.latent.w": Tensor(rng.uniform(-bound, bound, (c.latent_dim, w * d)), requires_grad=True),
            "gen.latent.b": ag.zeros(w * d),
        }
        for i in range(c.blocks_per_net):
            g.update(_block_params(rng, f"gen.block{i}", d, c.feedforward_dim))
        g["gen.lnf.gamma"] = ag.ones(d)
        g["gen.lnf.beta"] = ag.zeros(d)
        g["gen.out.w"] = ag.glorot_uniform(rng, d, c.feature_count)
        g["gen.out.b"] = ag.zeros(c.feature_count)

        dp: Params = {
            "disc.embed.w": ag.glorot_uniform(rng, c.feature_count, d),
            "disc.embed.b": ag.zeros(d),
        }
        for i in range(c.blocks_per_net):
            dp.update(_block_params(rng, f"disc.block{i}", d, c.feedforward_dim))
        dp["disc.lnf.gamma"] = ag.ones(d)
        dp["disc.lnf.beta"] = ag.zeros(d)
        dp["disc.head.w"] = ag.glorot_uniform(rng, d, 1)
        dp["disc.head.b"] = ag.zeros(1)
        for name, t in {**g, **dp}.items():
            t.name = name
        self.generator_params = g
        self.discriminator_params = dp
        self._pos = Tensor(positional_table(w, d))

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.generator_params.items()
        yield from self.discriminator_params.items()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()


def frozen(params: Params) -> Params:
    """Gradient-free views of ``params`` sharing their storage."""
    return {k: v.detach() for k, v in params.items()}


def generator_forward(model: GanModel, z, params: Params | None = None,
                      rng: np.random.Generator | None = None) -> Tensor:
    c = model.config
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.ndim != 2 or z.shape[1] != c.latent_dim:
        raise ShapeError(f"generator expects [batch, {c.latent_dim}] latents, got {z.shape}")
    p = model.generator_params if params is None else params
    b = z.shape[0]
    h = ag.linear(z, p["gen.latent.w"], p["gen.latent.b"])
    h = ag.add_bias(ag.reshape(h, (b, c.window_size, c.model_dim)), model._pos)
    for i in range(c.blocks_per_net):
        h = _block(h, p, f"gen.block{i}", c.attention_heads, c.dropout_rate, rng)
    h = ag.layer_norm(h, p["gen.lnf.gamma"], p["gen.lnf.beta"])
    return ag.sigmoid(ag.linear(h, p["gen.out.w"], p["gen.out.b"]))


def discriminator_forward(model: GanModel, x, params: Params | None = None,
                          rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Real-probability per window and the pooled ``[batch, d]`` features."""
    c = model.config
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 3 or x.shape[1:] != (c.window_size, c.feature_count):
        raise ShapeError(f"discriminator expects [batch, {c.window_size}, {c.feature_count}], "
                         f"got {x.shape}")
    p = model.discriminator_params if params is None else params
    h = ag.add_bias(ag.linear(x, p["disc.embed.w"], p["disc.embed.b"]), model._pos)
    for i in range(c.blocks_per_net):
        h = _block(h, p, f"disc.block{i}", c.attention_heads, c.dropout_rate, rng)
    h = ag.layer_norm(h, p["disc.lnf.gamma"], p["disc.lnf.beta"])
    feats = ag.mean(h, axis=1)
    logit = ag.linear(feats, p["disc.head.w"], p["disc.head.b"])
    score = ag.sigmoid(ag.reshape(logit, (x.shape[0],)))
    return score, feats


# ------------------------------------------------------------------ training

def train(model: GanModel, windows, cfg: TrainConfig) -> TrainLog:
    """Adversarial training with non-saturating losses plus feature matching; labels are ignored."""
    data = windows.windows if hasattr(windows, "windows") else np.asarray(windows, dtype=np.float64)
    if data.shape[0] == 0:
        raise ValueError("cannot train on an empty window set")
    c = model.config
    rng = np.random.default_rng(cfg.seed)
    opt_g = ag.Adam(model.generator_params.values(), cfg.lr_g, cfg.beta1, cfg.beta2)
    opt_d = ag.Adam(model.discriminator_params.values(), cfg.lr_d, cfg.beta1, cfg.beta2)
    log_ = TrainLog()
    n = data.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        d_losses, g_losses = [], []
        for lo in range(0, n, cfg.batch_size):
            real = Tensor._wrap(data[order[lo:lo + cfg.batch_size]])
            b = real.shape[0]
            for _ in range(cfg.d_steps_per_g_step):
                z = rng.standard_normal((b, c.latent_dim))
                fake = generator_forward(model, z, frozen(model.generator_params), rng)
                p_real, _ = discriminator_forward(model, real, rng=rng)
                p_fake, _ = discriminator_forward(model, fake, rng=rng)
                d_loss = ag.add(ag.bce_loss(p_real, np.ones(b)), ag.bce_loss(p_fake, np.zeros(b)))
                ag.backward(d_loss)
                opt_d.step()
                d_losses.append(d_loss.item())
            z = rng.standard_normal((b, c.latent_dim))
            fake = generator_forward(model, z, rng=rng)
            dp = frozen(model.discriminator_params)
            p_fake, f_fake = discriminator_forward(model, fake, dp, rng)
            g_loss = ag.bce_loss(p_fake, np.ones(b))
            if cfg.feature_matching > 0:
                # pull the batch-mean discriminator features of fakes onto those
                # of real windows; this keeps the generator from collapsing
                _, f_real = discriminator_forward(model, real, dp, rng)
                target = Tensor._wrap(f_real.data.mean(axis=0))
                gap = ag.mse_loss(ag.mean(f_fake, axis=0), target)
                g_loss = ag.add(g_loss, ag.scale(gap, cfg.feature_matching))
            ag.backward(g_loss)
            opt_g.step()
            g_losses.append(g_loss.item())
        log_.d_loss.append(float(np.mean(d_losses)))
        log_.g_loss.append(float(np.mean(g_losses)))
        log.debug("epoch %d d_loss %.4f g_loss %.4f", epoch, log_.d_loss[-1], log_.g_loss[-1])
    return log_


# ------------------------------------------------------------------- scoring

@dataclass
class Inversion:
    latent: np.ndarray  # batch x latent_dim
    residual: np.ndarray  # batch
    trace: np.ndarray  # (steps + 1) x batch, accepted objective per step


def _residual_and_grad(model: GanModel, gp: Params, z: np.ndarray, x: np.ndarray):
    zt = Tensor(z, requires_grad=True)
    diff = ag.absolute(ag.sub(generator_forward(model, zt, gp), Tensor._wrap(x)))
    per_window = diff.data.reshape(len(z), -1).mean(axis=1)
    # summing per-window means keeps each window's gradient independent
    ag.backward(ag.scale(ag.total(diff), 1.0 / (diff.size // len(z))))
    return per_window, zt.grad


def invert_latent(model: GanModel, x, cfg: ScoreConfig, z_init: np.ndarray | None = None) -> Inversion:
    """Search latents whose generated windows match ``x`` under mean absolute error.

    Runs ``cfg.inversion_steps`` Adam-preconditioned descent steps per window
    from a seeded normal start (or ``z_init``). A step that raises a window's
    objective is rejected and that window's step size is halved, so the
    recorded trace never increases.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    b = x.shape[0]
    zdim = model.config.latent_dim
    if z_init is None:
        z = np.random.default_rng(cfg.seed).standard_normal((b, zdim))
    else:
        z = np.array(z_init, dtype=np.float64).reshape(b, zdim)
    gp = frozen(model.generator_params)
    obj, grad = _residual_and_grad(model, gp, z, x)
    trace = [obj.copy()]
    lr = np.full(b, cfg.inversion_lr)
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    beta1, beta2 = 0.9, 0.999
    for step in range(1, cfg.inversion_steps + 1):
        m_new = beta1 * m + (1 - beta1) * grad
        v_new = beta2 * v + (1 - beta2) * grad * grad
        direction = (m_new / (1 - beta1 ** step)) / (np.sqrt(v_new / (1 - beta2 ** step)) + 1e-8)
        z_try = z - lr[:, None] * direction
        obj_try, grad_try = _residual_and_grad(model, gp, z_try, x)
        ok = obj_try <= obj
        z = np.where(ok[:, None], z_try, z)
        obj = np.where(ok, obj_try, obj)
        grad = np.where(ok[:, None], grad_try, grad)
        m = np.where(ok[:, None], m_new, m)
        v = np.where(ok[:, None], v_new, v)
        lr = np.where(ok, lr, lr * 0.5)
        trace.append(obj.copy())
    return Inversion(z, obj, np.array(trace))


def anomaly_scores(model: GanModel, x, cfg: ScoreConfig) -> np.ndarray:
    """Anomaly score per window (higher = more anomalous) for a batch ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    dp = frozen(model.discriminator_params)
    if cfg.mode == "discriminator":
        p_real, _ = discriminator_forward(model, x, dp)
        return 1.0 - p_real.data
    inv = invert_latent(model, x, cfg)
    recon = generator_forward(model, inv.latent, frozen(model.generator_params)).data
    _, f_x = discriminator_forward(model, x, dp)
    _, f_r = discriminator_forward(model, recon, dp)
    feat_gap = np.abs(f_x.data - f_r.data).mean(axis=1)
    return (1.0 - cfg.lam) * inv.residual + cfg.lam * feat_gap


def anomaly_score(model: GanModel, x, cfg: ScoreConfig) -> float:
    return float(anomaly_scores(model, x, cfg)[0])


def score_windows(model: GanModel, windows, cfg: ScoreConfig) -> np.ndarray:
    """Scores for every window in order; batches get distinct derived seeds."""
    data = windows.windows if hasattr(windows, "windows") else np.asarray(windows, dtype=np.float64)
    out = np.empty(data.shape[0])
    for i, lo in enumerate(range(0, data.shape[0], cfg.batch_size)):
        sub = ScoreConfig(cfg.inversion_steps, cfg.inversion_lr, cfg.lam, cfg.mode,
                          cfg.seed * 1_000_003 + i, cfg.batch_size)
        out[lo:lo + cfg.batch_size] = anomaly_scores(model, data[lo:lo + cfg.batch_size], sub)
    return out


# --------------------------------------------------------------- checkpoints

def checkpoint_bytes(model: GanModel) -> bytes:
    """Serialize to the checkpoint layout documented in the README."""
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode()
    params = list(model.named_parameters())
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<II", CHECKPOINT_VERSION, len(cfg))
    body += cfg
    body += struct.pack("<I", len(params))
    for name, t in params:
        raw = name.encode()
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<B", t.ndim)
        body += struct.pack(f"<{t.ndim}Q", *t.shape)
        body += np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    return bytes(body)


def save_model(model: GanModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_model(path) -> GanModel:
    return model_from_bytes(Path(path).read_bytes(), str(path))


def model_from_bytes(blob: bytes, path: str = "checkpoint") -> GanModel:
    if len(blob) < len(CHECKPOINT_MAGIC) + 32 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    off = len(CHECKPOINT_MAGIC)
    version, cfg_len = struct.unpack_from("<II", body, off)
    off += 8
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    config = ModelConfig(**json.loads(body[off:off + cfg_len]))
    off += cfg_len
    model = GanModel(config)
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    table = dict(model.named_parameters())
    if count != len(table):
        raise CheckpointError(f"{path}: {count} parameters, model expects {len(table)}")
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", body, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        if name not in table or table[name].shape != tuple(shape):
            raise CheckpointError(f"{path}: unexpected parameter {name} {shape}")
        table[name].data = arr.astype(np.float64)
    return model
