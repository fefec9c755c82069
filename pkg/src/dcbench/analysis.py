"""Traffic views over a trace (windowed throughput, flow CDF, traffic
matrix, packet-size histogram) and the stable/burst/increase classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError, DataError, InsufficientDataError
from .trace import MAX_FRAME, MIN_FRAME, PatternLabel, Trace

DEFAULT_WINDOW_US = 50_000
DEFAULT_SIZE_BINS = (64, 128, 256, 512, 1024, 1518)

# classifier thresholds
ROLLING = 8
SHIFT_RATIO = 2.0  # larger/smaller rolling mean; a >50% relative shift
SPIKE_FACTOR = 5.0
DIP_FACTOR = 0.2
NEIGHBOR_FACTOR = 2.0
INCREASE_RISE = 2.0
INCREASE_R2 = 0.8
STABLE_CV = 0.25
MIN_WINDOWS = 4


@dataclass(frozen=True)
class WindowSeries:
    window_us: int
    bits: np.ndarray
    packets: np.ndarray

    def __len__(self):
        return len(self.bits)

    def values(self, metric: str = "bits") -> np.ndarray:
        if metric == "bits":
            return self.bits
        if metric == "packets":
            return self.packets
        raise ArgumentError(f"metric must be 'bits' or 'packets', got {metric!r}")

    @classmethod
    def from_values(cls, values: Sequence[float], window_us: int = DEFAULT_WINDOW_US) -> "WindowSeries":
        v = np.asarray(values, dtype=np.float64)
        return cls(window_us, v, np.zeros(len(v), dtype=np.int64))


def window_series(trace: Trace, window_us: int = DEFAULT_WINDOW_US) -> WindowSeries:
    if window_us <= 0:
        raise ArgumentError("window_us must be positive")
    if not len(trace):
        return WindowSeries(window_us, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    idx = trace.timestamp_us // window_us
    n = int(idx.max()) + 1
    bits = np.zeros(n, dtype=np.int64)
    np.add.at(bits, idx, trace.frame_bytes * 8)
    packets = np.bincount(idx, minlength=n).astype(np.int64)
    return WindowSeries(window_us, bits, packets)


def flow_cdf(trace: Trace) -> list[tuple[float, float]]:
    """Cumulative byte fraction against normalized time, one point per record.

    A zero-duration trace maps every point to x = 1.0.
    """
    if not len(trace):
        return []
    cum = np.cumsum(trace.frame_bytes)
    total = int(cum[-1])
    last = int(trace.timestamp_us[-1])
    x = trace.timestamp_us / last if last > 0 else np.ones(len(trace))
    y = cum / total
    return list(zip(x.tolist(), y.tolist()))


@dataclass(frozen=True)
class TrafficMatrix:
    n: int
    cells: np.ndarray  # int64 [n, n]

    @property
    def total(self) -> int:
        return int(self.cells.sum())


def traffic_matrix(trace: Trace, n: int | None = None) -> TrafficMatrix:
    n = trace.node_count if n is None else n
    cells = np.zeros((n, n), dtype=np.int64)
    if not len(trace):
        return TrafficMatrix(n, cells)
    bad = (trace.src < 0) | (trace.src >= n) | (trace.dst < 0) | (trace.dst >= n)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"record {i}: endpoint ({trace.src[i]}, {trace.dst[i]}) not in node registry of size {n}")
    self_traffic = trace.src == trace.dst
    if self_traffic.any():
        i = int(np.flatnonzero(self_traffic)[0])
        raise DataError(f"record {i}: self-traffic on node {trace.src[i]}")
    np.add.at(cells, (trace.src, trace.dst), trace.frame_bytes)
    return TrafficMatrix(n, cells)


@dataclass(frozen=True)
class SizeHistogram:
    edges: tuple[int, ...]
    probabilities: tuple[float, ...]


def packet_size_histogram(trace: Trace, bin_edges: Sequence[int] = DEFAULT_SIZE_BINS) -> SizeHistogram:
    """Per-bin packet probabilities.

    Bins are ``[e_i, e_{i+1})``; the last bin is closed and stretched to the
    jumbo ceiling so every valid frame lands somewhere.
    """
    edges = [int(e) for e in bin_edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ArgumentError(f"bin edges must be strictly increasing with at least two entries: {edges}")
    if edges[0] > MIN_FRAME:
        raise ArgumentError(f"first bin edge {edges[0]} leaves frames from {MIN_FRAME} bytes uncovered")
    edges[-1] = max(edges[-1], MAX_FRAME)
    if not len(trace):
        return SizeHistogram(tuple(edges), ())
    counts, _ = np.histogram(trace.frame_bytes, bins=np.asarray(edges))
    return SizeHistogram(tuple(edges), tuple((counts / counts.sum()).tolist()))


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    start_us: int
    end_us: int
    label: PatternLabel
    confidence: float
    start_window: int
    end_window: int  # exclusive

    @property
    def duration_us(self) -> int:
        return self.end_us - self.start_us


@dataclass(frozen=True)
class ClassificationReport:
    window_us: int
    segments: tuple[Segment, ...]
    dominant: PatternLabel
    metric: str = "bits"

    def to_json_dict(self) -> dict:
        return {
            "window_us": self.window_us,
            "metric": self.metric,
            "dominant": self.dominant.value,
            "segments": [
                {
                    "start_us": s.start_us,
                    "end_us": s.end_us,
                    "label": s.label.value,
                    "confidence": round(s.confidence, 6),
                    "start_window": s.start_window,
                    "end_window": s.end_window,
                }
                for s in self.segments
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ClassificationReport":
        segs = tuple(
            Segment(
                int(s["start_us"]),
                int(s["end_us"]),
                PatternLabel.parse(s["label"]),
                float(s["confidence"]),
                int(s["start_window"]),
                int(s["end_window"]),
            )
            for s in d["segments"]
        )
        return cls(int(d["window_us"]), segs, PatternLabel.parse(d["dominant"]), d.get("metric", "bits"))


def _rolling_median(x: np.ndarray, half: int = 4) -> np.ndarray:
    pad = np.pad(x, half, mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(pad, 2 * half + 1)
    return np.median(view, axis=1)


def change_points(x: np.ndarray) -> list[int]:
    """Window indices where the 8-window mean before and after differ by more than 2x.

    Values are first capped at 5x their local median so that isolated
    spikes (the burst signature) do not read as level shifts. Candidates
    are taken greedily by shift size, at least one rolling length apart.
    """
    n = len(x)
    if n < 2 * ROLLING:
        return []
    capped = np.minimum(x, SPIKE_FACTOR * _rolling_median(x))
    csum = np.concatenate([[0.0], np.cumsum(capped)])
    pos = np.arange(ROLLING, n - ROLLING + 1)
    before = (csum[pos] - csum[pos - ROLLING]) / ROLLING
    after = (csum[pos + ROLLING] - csum[pos]) / ROLLING
    hi = np.maximum(before, after)
    lo = np.minimum(before, after)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), np.where(hi > 0, np.inf, 1.0))
    cand = [(ratio[i], int(pos[i])) for i in np.flatnonzero(ratio > SHIFT_RATIO)]
    cand.sort(key=lambda c: (-c[0], c[1]))
    chosen: list[int] = []
    for _, p in cand:
        if all(abs(p - q) >= ROLLING for q in chosen):
            chosen.append(p)
    return sorted(chosen)


@dataclass(frozen=True)
class _RuleScores:
    burst_ratio: float  # largest qualifying spike/dip ratio, 0 if none
    burst_any_ratio: float  # same, ignoring the neighbor condition
    slope: float
    rise_ok: bool
    r2: float
    cv: float


def _score(x: np.ndarray) -> _RuleScores:
    n = len(x)
    med = float(np.median(x))
    lo_n, hi_n = med / NEIGHBOR_FACTOR, med * NEIGHBOR_FACTOR
    calm = (x >= lo_n) & (x <= hi_n)
    neighbor_calm = np.zeros(n, dtype=bool)
    neighbor_calm[1:] |= calm[:-1]
    neighbor_calm[:-1] |= calm[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(med > 0, x / med, np.where(x > 0, np.inf, 0.0))
        down = np.where(x > 0, med / np.where(x > 0, x, 1.0), np.where(med > 0, np.inf, 0.0))
    spike = (x > med * SPIKE_FACTOR) | (x < med * DIP_FACTOR)
    strength = np.maximum(up, down)
    qual = spike & neighbor_calm
    burst_ratio = float(strength[qual].max()) if qual.any() else 0.0
    burst_any = float(strength.max()) if n else 0.0

    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    mean = float(x.mean())
    sxx = float((tc * tc).sum())
    slope = float((tc * (x - mean)).sum() / sxx) if sxx > 0 else 0.0
    intercept = mean - slope * t.mean()
    ss_tot = float(((x - mean) ** 2).sum())
    resid = x - (intercept + slope * t)
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 0.0
    start, end = intercept, intercept + slope * (n - 1)
    rise_ok = slope > 0 and (end - start) >= INCREASE_RISE * max(start, 0.0)
    cv = float(x.std()) / mean if mean > 0 else 0.0
    return _RuleScores(burst_ratio, burst_any, slope, rise_ok, r2, cv)


def classify_segment(x: np.ndarray) -> tuple[PatternLabel, float]:
    """Apply burst, then increase, then stable; fall back to the nearest rule.

    Matched rules give confidence >= 0.5 (stable excepted, whose confidence
    is 1 - CV/0.25); the fallback gives < 0.5.
    """
    s = _score(np.asarray(x, dtype=np.float64))
    if s.burst_ratio > 0:
        conf = 0.5 + 0.5 * (1.0 - SPIKE_FACTOR / s.burst_ratio) if np.isfinite(s.burst_ratio) else 1.0
        return PatternLabel.BURST, float(min(max(conf, 0.0), 1.0))
    if s.rise_ok and s.r2 >= INCREASE_R2:
        return PatternLabel.INCREASE, s.r2
    if s.cv <= STABLE_CV:
        return PatternLabel.STABLE, float(min(max(1.0 - s.cv / STABLE_CV, 0.0), 1.0))

    closeness = {
        PatternLabel.BURST: min(s.burst_any_ratio / SPIKE_FACTOR, 1.0) * (0.5 if s.burst_any_ratio >= SPIKE_FACTOR else 1.0),
        PatternLabel.INCREASE: max(s.r2, 0.0) if s.slope > 0 else 0.0,
        PatternLabel.STABLE: min(STABLE_CV / s.cv, 1.0) if s.cv > 0 else 1.0,
    }
    label = max(closeness, key=lambda k: (closeness[k], -list(PatternLabel).index(k)))
    return label, 0.49 * closeness[label]


def classify_pattern(
    series: WindowSeries,
    metric: str = "bits",
    end_us: int | None = None,
) -> ClassificationReport:
    """Segment the series at level shifts and label each segment.

    Adjacent segments with the same label are merged (confidence weighted
    by length). The final segment ends at ``end_us`` when given, else at
    the end of the last window.
    """
    x = np.asarray(series.values(metric), dtype=np.float64)
    n = len(x)
    if n < MIN_WINDOWS:
        raise InsufficientDataError(f"classification needs at least {MIN_WINDOWS} windows, got {n}")
    w = series.window_us
    bounds = [0, *change_points(x), n]
    raw = []
    for a, b in zip(bounds, bounds[1:]):
        label, conf = classify_segment(x[a:b])
        raw.append([a, b, label, conf])
    merged: list[list] = []
    for seg in raw:
        if merged and merged[-1][2] == seg[2]:
            prev = merged[-1]
            la, lb = prev[1] - prev[0], seg[1] - seg[0]
            prev[3] = (prev[3] * la + seg[3] * lb) / (la + lb)
            prev[1] = seg[1]
        else:
            merged.append(seg)
    last_end = n * w if end_us is None else end_us
    segments = tuple(
        Segment(a * w, last_end if i == len(merged) - 1 else b * w, label, float(conf), a, b)
        for i, (a, b, label, conf) in enumerate(merged)
    )
    return ClassificationReport(w, segments, dominant_label(segments), metric)


def dominant_label(segments: Sequence[Segment]) -> PatternLabel:
    totals = {label: 0 for label in PatternLabel}
    for s in segments:
        totals[s.label] += s.duration_us
    order = list(PatternLabel)
    return max(order, key=lambda k: (totals[k], -order.index(k)))


def classify_trace(trace: Trace, window_us: int = DEFAULT_WINDOW_US, metric: str = "bits") -> ClassificationReport:
    return classify_pattern(window_series(trace, window_us), metric=metric, end_us=trace.duration_us)
