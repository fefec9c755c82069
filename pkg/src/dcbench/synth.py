"""Seedable Bernoulli-arrival traffic models used as synthetic baselines."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ArgumentError
from .trace import MAX_FRAME, MIN_FRAME, Trace, TraceMeta

HEADER_OVERHEAD = 54  # Ethernet + IPv4 + TCP without options
DEFAULT_TICK_US = 10
_CHUNK_TICKS = 1 << 16


class Model(str, Enum):
    UNIFORM = "uniform"
    PERMUTATION = "permutation"
    HOTSPOT = "hotspot"
    ALL_TO_ONE = "all-to-one"
    ONE_TO_ALL = "one-to-all"

    @classmethod
    def parse(cls, text) -> "Model":
        t = str(text).strip().lower().replace("_", "-")
        t = {"alltoone": "all-to-one", "onetoall": "one-to-all"}.get(t, t)
        for m in cls:
            if m.value == t:
                return m
        raise ArgumentError(f"unknown traffic model {text!r}")


@dataclass(frozen=True)
class Fixed:
    size: int


@dataclass(frozen=True)
class Choice:
    sizes: tuple[int, ...]


@dataclass(frozen=True)
class RangeGroups:
    """``groups`` evenly spaced sizes over [min, max], picked with a
    discretized normal centred on the middle group (sigma = groups / 4)."""

    min_size: int
    max_size: int
    groups: int

    def sizes(self) -> np.ndarray:
        return np.linspace(self.min_size, self.max_size, self.groups).round().astype(np.int64)

    def weights(self) -> np.ndarray:
        i = np.arange(self.groups, dtype=np.float64)
        mid, sigma = (self.groups - 1) / 2, self.groups / 4
        w = np.exp(-0.5 * ((i - mid) / sigma) ** 2)
        return w / w.sum()


SizeModel = Fixed | Choice | RangeGroups

_PRESETS: dict[str, SizeModel] = {
    # 32 B is padded to the 64 B frame floor at generation time
    "dai2012": Choice((32, 512)),
    "bitar2014": RangeGroups(64, 1504, 10),
}


def size_choice_models() -> dict[str, SizeModel]:
    return dict(_PRESETS)


def size_preset(name: str) -> SizeModel | None:
    return _PRESETS.get(name)


def parse_size_model(text: str) -> SizeModel:
    """Accept a preset name, a single byte count, or a comma-separated choice list."""
    preset = size_preset(text)
    if preset is not None:
        return preset
    try:
        sizes = tuple(int(s) for s in str(text).split(","))
    except ValueError:
        raise ArgumentError(f"unknown size model {text!r}") from None
    return Fixed(sizes[0]) if len(sizes) == 1 else Choice(sizes)


@dataclass(frozen=True)
class BurstSchedule:
    """Periodic on/off modulation: arrival probability is ``p`` inside
    ``[k*period_us, k*period_us + length_us)`` and the base rate elsewhere."""

    period_us: int
    length_us: int
    p: float
    offset_us: int = 0


@dataclass(frozen=True)
class SynthSpec:
    model: Model
    nodes: int
    duration_us: int
    p: float
    size_model: SizeModel = Fixed(512)
    tick_us: int = DEFAULT_TICK_US
    seed: int = 0
    hotspot_fraction: float = 0.5
    hotspot_node: int = 0
    bursts: BurstSchedule | None = None

    def validate(self):
        if not isinstance(self.model, Model):
            raise ArgumentError(f"model must be a Model, got {self.model!r}")
        if self.nodes < 2:
            raise ArgumentError(f"need at least 2 nodes, got {self.nodes}")
        if not 0 < self.p <= 1:
            raise ArgumentError(f"arrival probability must be in (0, 1], got {self.p}")
        if self.tick_us <= 0 or self.duration_us <= 0:
            raise ArgumentError("tick_us and duration_us must be positive")
        if self.model is Model.HOTSPOT:
            if not 0 < self.hotspot_fraction < 1:
                raise ArgumentError(f"hotspot fraction must be in (0, 1), got {self.hotspot_fraction}")
            if not 0 <= self.hotspot_node < self.nodes:
                raise ArgumentError(f"hotspot node {self.hotspot_node} out of range")
        if self.bursts is not None:
            b = self.bursts
            if not 0 < b.p <= 1 or b.period_us <= 0 or not 0 < b.length_us <= b.period_us:
                raise ArgumentError(f"bad burst schedule {b}")
        sizes = _candidate_sizes(self.size_model)
        if min(sizes) < 1 or max(sizes) > MAX_FRAME:
            raise ArgumentError(f"packet sizes must lie in [1, {MAX_FRAME}]")

    @property
    def ticks(self) -> int:
        return -(-self.duration_us // self.tick_us)


def _candidate_sizes(m: SizeModel) -> list[int]:
    if isinstance(m, Fixed):
        return [m.size]
    if isinstance(m, Choice):
        if not m.sizes:
            raise ArgumentError("choice size model needs at least one size")
        return list(m.sizes)
    if isinstance(m, RangeGroups):
        if m.groups < 1 or m.min_size > m.max_size:
            raise ArgumentError(f"bad range-group model {m}")
        return m.sizes().tolist()
    raise ArgumentError(f"unknown size model {m!r}")


def _draw_sizes(m: SizeModel, rng: np.random.Generator, n: int) -> np.ndarray:
    if isinstance(m, Fixed):
        return np.full(n, m.size, dtype=np.int64)
    if isinstance(m, Choice):
        return np.asarray(m.sizes, dtype=np.int64)[rng.integers(0, len(m.sizes), n)]
    return m.sizes()[rng.choice(m.groups, size=n, p=m.weights())]


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        perm = rng.permutation(n)
        if not (perm == np.arange(n)).any():
            return perm


def generate(spec: SynthSpec) -> Trace:
    """Generate a synthetic trace; identical specs give identical traces.

    Records are ordered by (tick, source). Requested sizes below 64 B are
    carried as a 64 B frame with the requested size kept as payload; other
    sizes keep ``size - 54`` payload bytes.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed & ((1 << 64) - 1)))
    n = spec.nodes
    perm = _derangement(n, rng) if spec.model is Model.PERMUTATION else None

    if spec.model is Model.ALL_TO_ONE:
        senders = np.arange(1, n)
    elif spec.model is Model.ONE_TO_ALL:
        senders = np.array([0])
    else:
        senders = np.arange(n)

    ts_parts, src_parts = [], []
    for t0 in range(0, spec.ticks, _CHUNK_TICKS):
        t1 = min(t0 + _CHUNK_TICKS, spec.ticks)
        ticks = np.arange(t0, t1)
        p = np.full(len(ticks), spec.p)
        if spec.bursts is not None:
            b = spec.bursts
            phase = (ticks * spec.tick_us - b.offset_us) % b.period_us
            p = np.where(phase < b.length_us, b.p, p)
        fire = rng.random((len(ticks), len(senders))) < p[:, None]
        ti, si = np.nonzero(fire)
        ts_parts.append(ticks[ti] * spec.tick_us)
        src_parts.append(senders[si])
    ts = np.concatenate(ts_parts).astype(np.int64)
    src = np.concatenate(src_parts).astype(np.int64)
    k = len(ts)

    if spec.model is Model.UNIFORM:
        dst = rng.integers(0, n - 1, k)
        dst = dst + (dst >= src)
    elif spec.model is Model.PERMUTATION:
        dst = perm[src]
    elif spec.model is Model.HOTSPOT:
        h = spec.hotspot_node
        other = rng.integers(0, n - 1, k)
        other = other + (other >= src)
        to_hot = (rng.random(k) < spec.hotspot_fraction) & (src != h)
        dst = np.where(to_hot, h, other)
    elif spec.model is Model.ALL_TO_ONE:
        dst = np.zeros(k, dtype=np.int64)
    else:
        dst = 1 + np.arange(k) % (n - 1)

    req = _draw_sizes(spec.size_model, rng, k)
    frame = np.maximum(req, MIN_FRAME)
    payload = np.where(req < MIN_FRAME, req, np.maximum(req - HEADER_OVERHEAD, 0))

    meta = TraceMeta(
        application_label=f"synth-{spec.model.value}",
        node_names=tuple(f"n{i:0{len(str(n - 1))}d}" for i in range(n)),
    )
    return Trace.from_columns(meta, timestamp_us=ts, frame_bytes=frame, payload_bytes=payload, src=src, dst=dst)
