"""Seeded synthetic RAN KPI scenarios with injected network-contention events.

Five UEs run one traffic profile each. Their per-step throughput drives the
fronthaul link usage and the worker-thread runtime fraction; PTP offsets are folded Gaussian jitter smoothed into an RMS trace.
A contention event depresses throughput, pins the CPU runtime towards 1 and
inflates PTP jitter, ramped over a few steps at both edges.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from rangan import _kernels
from rangan.windowing import KpiFrame

FEATURES = ("fh_ul_gbps", "fh_dl_gbps", "cpu_runtime", "ptp_max_offset_ns", "ptp_rms_ns")
RAMP_STEPS = 3
MAX_UES = 5


class ProfileKind(str, enum.Enum):
    TCP_DL = "tcp_dl"
    TCP_UL = "tcp_ul"
    UDP_DL = "udp_dl"
    UDP_UL = "udp_ul"
    FILE_DOWNLOAD = "file_download"
    FILE_UPLOAD = "file_upload"
    VIDEO_STREAM = "video_stream"
    WEB_TRAFFIC = "web_traffic"
    RANDOM_PING = "random_ping"


# nominal rate in Mbps, uplink share of that rate
_NOMINAL = {
    ProfileKind.TCP_DL: (60.0, 0.05),
    ProfileKind.TCP_UL: (30.0, 0.95),
    ProfileKind.UDP_DL: (10.0, 0.0),
    ProfileKind.UDP_UL: (10.0, 1.0),
    ProfileKind.FILE_DOWNLOAD: (50.0, 0.05),
    ProfileKind.FILE_UPLOAD: (25.0, 0.95),
    ProfileKind.VIDEO_STREAM: (20.0, 0.05),
    ProfileKind.WEB_TRAFFIC: (8.0, 0.2),
    ProfileKind.RANDOM_PING: (2.0, 0.5),
}
NOISE_FRACTION = 0.05
JITTER_GAIN = 3.0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficProfile:
    kind: ProfileKind
    rate_mbps: float | None = None
    period: int = 40

    @property
    def nominal(self) -> float:
        if self.kind in (ProfileKind.UDP_DL, ProfileKind.UDP_UL):
            return 10.0
        return self.rate_mbps if self.rate_mbps is not None else _NOMINAL[self.kind][0]

    @property
    def uplink_share(self) -> float:
        return _NOMINAL[self.kind][1]


@dataclass(frozen=True)
class ContentionEvent:
    start: int
    length: int
    severity: float


@dataclass
class ScenarioSpec:
    seed: int
    duration_steps: int
    ue_profiles: list[TrafficProfile]
    contention_events: list[ContentionEvent] = field(default_factory=list)

    def validate(self) -> None:
        if self.duration_steps < 1:
            raise ScenarioError("duration_steps must be positive")
        if not 1 <= len(self.ue_profiles) <= MAX_UES:
            raise ScenarioError(f"need 1..{MAX_UES} UE profiles, got {len(self.ue_profiles)}")
        prev_end = -1
        for ev in sorted(self.contention_events, key=lambda e: e.start):
            if ev.length < 1 or not 0.0 < ev.severity <= 1.0:
                raise ScenarioError(f"bad event {ev}")
            if ev.start < 0 or ev.start + ev.length > self.duration_steps:
                raise ScenarioError(f"event {ev} outside [0, {self.duration_steps})")
            if ev.start < prev_end:
                raise ScenarioError(f"event {ev} overlaps the previous event")
            prev_end = ev.start + ev.length


@dataclass
class GeneratedScenario:
    frame: KpiFrame
    ue_throughput: np.ndarray  # T x UEs, Mbps after contention
    spec: ScenarioSpec

    @property
    def labels(self) -> np.ndarray:
        return self.frame.labels


def _profile_shape(p: TrafficProfile, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    k = p.kind
    nom = p.nominal
    if k in (ProfileKind.UDP_DL, ProfileKind.UDP_UL, ProfileKind.TCP_DL, ProfileKind.TCP_UL):
        return np.full(t.shape, nom)
    if k in (ProfileKind.FILE_DOWNLOAD, ProfileKind.FILE_UPLOAD):
        phase = rng.integers(p.period)
        return nom * ((t + phase) % p.period) / (p.period - 1)
    if k in (ProfileKind.VIDEO_STREAM, ProfileKind.WEB_TRAFFIC):
        # slow "diurnal" swing plus multiplicative noise; period divides thirds evenly enough
        day = 500.0
        level = 0.65 + 0.35 * np.sin(2.0 * np.pi * (t / day + rng.random()))
        return nom * level * rng.uniform(0.85, 1.0, size=t.shape)
    # random ping: idle trickle with short bursts up to the nominal rate
    bursts = rng.random(t.shape) < 0.05
    return np.where(bursts, nom * rng.uniform(0.5, 1.0, size=t.shape), nom * 0.1)


def _bursts(rng: np.random.Generator, n: int, prob: float, scale: float) -> np.ndarray:
    hit = rng.random(n) < prob
    return np.where(hit, rng.exponential(scale, size=n), 0.0)


def _event_envelope(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-step contention intensity in [0, 1] and the 0/1 label vector."""
    t_len = spec.duration_steps
    env = np.zeros(t_len)
    labels = np.zeros(t_len, dtype=np.int64)
    for ev in spec.contention_events:
        idx = np.arange(ev.length)
        ramp = np.minimum(1.0, np.minimum(idx + 1, ev.length - idx) / RAMP_STEPS)
        env[ev.start:ev.start + ev.length] = ev.severity * ramp
        labels[ev.start:ev.start + ev.length] = 1
    return env, labels


def generate(spec: ScenarioSpec) -> GeneratedScenario:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    t_len = spec.duration_steps
    t = np.arange(t_len, dtype=np.float64)
    env, labels = _event_envelope(spec)

    n_ue = len(spec.ue_profiles)
    thr = np.empty((t_len, n_ue))
    ul = np.zeros(t_len)
    dl = np.zeros(t_len)
    for j, prof in enumerate(spec.ue_profiles):
        base = _profile_shape(prof, t, rng)
        sigma = NOISE_FRACTION * prof.nominal
        noisy = base + np.clip(rng.normal(0.0, sigma, size=t_len), -3.0 * sigma, 3.0 * sigma)
        # congestion makes the delivered rate erratic as well as lower
        wobble = rng.uniform(0.2, 1.8, size=t_len)
        noisy = np.maximum(noisy, 0.0) * np.clip(1.0 - env * wobble, 0.0, 1.0)
        thr[:, j] = noisy
        ul += prof.uplink_share * noisy
        dl += (1.0 - prof.uplink_share) * noisy

    # fronthaul usage: control-plane floor, user-plane load, sporadic heavy bursts
    fh_ul = 0.3 + 0.02 * ul + rng.normal(0.0, 0.02, t_len) + _bursts(rng, t_len, 0.02, 0.6)
    fh_dl = 0.4 + 0.025 * dl + rng.normal(0.0, 0.02, t_len) + _bursts(rng, t_len, 0.02, 1.2)

    # fraction of each interval the worker threads were scheduled on; tracks load,
    # contention keeps threads spinning regardless of delivered traffic
    cpu = 0.25 + 0.004 * (ul + dl) + rng.normal(0.0, 0.02, t_len)
    cpu = np.clip(cpu + env * (1.0 - cpu), 0.0, 1.0)

    jitter = 15.0 * (1.0 + JITTER_GAIN * env)
    offset = np.abs(rng.normal(0.0, jitter)) + 5.0 + _bursts(rng, t_len, 0.01, 40.0)
    rms = np.sqrt(_kernels.ema(offset ** 2, 0.1))

    feats = np.column_stack([fh_ul, fh_dl, cpu, offset, rms])
    feats = np.maximum(feats, 0.0)
    frame = KpiFrame(np.arange(t_len, dtype=np.int64), feats, list(FEATURES), labels)
    return GeneratedScenario(frame, thr, spec)


BENCHMARK_PROFILES = (
    ProfileKind.TCP_DL,
    ProfileKind.UDP_UL,
    ProfileKind.FILE_DOWNLOAD,
    ProfileKind.VIDEO_STREAM,
    ProfileKind.RANDOM_PING,
)


def default_benchmark_spec(seed: int = 7, duration_steps: int = 10_000, n_events: int = 8) -> ScenarioSpec:
    """Canonical desk-scale scenario: 5 UEs, 8 contention events (~5% of steps).

    Events are spread one per equal segment so both the chronological training
    prefix and the test suffix contain contention.
    """
    rng = np.random.default_rng([seed, 0xC0FFEE])
    lengths = rng.integers(50, 201, size=n_events)
    # rescale towards the 5% label mass target while staying inside 50..200
    target = 0.05 * duration_steps
    lengths = np.clip(np.round(lengths * target / lengths.sum()), 50, 200).astype(int)
    severities = rng.uniform(0.4, 0.9, size=n_events)
    seg = duration_steps // n_events
    events = []
    for i in range(n_events):
        slack = seg - int(lengths[i]) - 2 * RAMP_STEPS
        start = i * seg + RAMP_STEPS + int(rng.integers(max(slack, 1)))
        events.append(ContentionEvent(start, int(lengths[i]), round(float(severities[i]), 3)))
    profiles = [TrafficProfile(k) for k in BENCHMARK_PROFILES]
    return ScenarioSpec(seed, duration_steps, profiles, events)
