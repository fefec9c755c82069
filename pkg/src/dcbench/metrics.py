"""Switch evaluation metrics over packet outcomes and cross-device comparison.

AF = mean latency, WF = nearest-rank p99 latency, LJ = population standard
deviation of latency (all one-way, delivered packets only); CC = overall
loss fraction, BA = population standard deviation of the per-window loss
fractions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ArgumentError, CompletenessError, UndefinedMetricsError
from .simulator import PacketOutcome

DEFAULT_WINDOW_US = 50_000
METRICS = ("af", "wf", "lj", "cc", "ba")

DEFAULT_MAPPING = {
    "af": ["Net_M9", "Net_M10", "Net_M11", "Net_M12"],
    "wf": ["Net_M5", "Net_M6", "Net_M7", "Net_M8"],
    "lj": ["Net_M5", "Net_M6", "Net_M7", "Net_M8"],
    "cc": ["Net_M1", "Net_M2", "Net_M3", "Net_M4"],
    "ba": ["Net_M1", "Net_M2", "Net_M3", "Net_M4"],
}


def nearest_rank(sorted_values: Sequence[float], pct: int) -> float:
    n = len(sorted_values)
    rank = max(1, (pct * n + 99) // 100)
    return sorted_values[rank - 1]


def latency_metrics(outcomes: Sequence[PacketOutcome]) -> tuple[float, float, float]:
    """(AF, WF, LJ) in microseconds."""
    lat = np.array([o.deliver_us - o.send_us for o in outcomes if o.deliver_us is not None], dtype=np.float64)
    if not len(lat):
        raise UndefinedMetricsError("no delivered packets; latency metrics are undefined")
    lat.sort()
    return float(lat.mean()), float(nearest_rank(lat, 99)), float(lat.std())


def loss_metrics(
    outcomes: Sequence[PacketOutcome],
    window_us: int = DEFAULT_WINDOW_US,
    trace=None,
) -> tuple[float, float]:
    """(CC, BA). Windows are keyed by send time; empty windows are ignored."""
    if not outcomes:
        raise UndefinedMetricsError("no outcomes; loss metrics are undefined")
    if window_us <= 0:
        raise ArgumentError("window_us must be positive")
    if trace is not None and len(trace) != len(outcomes):
        raise ArgumentError(f"{len(outcomes)} outcomes do not cover a {len(trace)}-record trace")
    send = np.array([o.send_us for o in outcomes], dtype=np.int64)
    lost = np.array([o.deliver_us is None for o in outcomes], dtype=np.int64)
    win = send // window_us
    win -= win.min()
    sent_w = np.bincount(win)
    lost_w = np.bincount(win, weights=lost, minlength=len(sent_w))
    used = sent_w > 0
    rates = lost_w[used] / sent_w[used]
    return float(lost.sum() / len(lost)), float(rates.std())


@dataclass(frozen=True)
class MetricReport:
    af_us: float | None
    wf_us: float | None
    lj_us: float | None
    cc: float
    ba: float
    packets: int
    delivered: int

    def value(self, metric: str) -> float:
        v = {"af": self.af_us, "wf": self.wf_us, "lj": self.lj_us, "cc": self.cc, "ba": self.ba}[metric]
        if v is None:
            raise UndefinedMetricsError(f"{metric} undefined: no packets delivered")
        return v

    def to_json_dict(self) -> dict:
        return asdict(self)


def evaluate(outcomes: Sequence[PacketOutcome], window_us: int = DEFAULT_WINDOW_US) -> MetricReport:
    cc, ba = loss_metrics(outcomes, window_us)
    delivered = sum(o.deliver_us is not None for o in outcomes)
    af = wf = lj = None
    if delivered:
        af, wf, lj = latency_metrics(outcomes)
    return MetricReport(af, wf, lj, cc, ba, len(outcomes), delivered)


def min_max(values: Mapping[str, float]) -> dict[str, float]:
    lo, hi = min(values.values()), max(values.values())
    if hi == lo:
        return {k: 0.0 for k in values}
    return {k: (v - lo) / (hi - lo) for k, v in values.items()}


def compare_report(
    devices: Sequence[str],
    results: Mapping[tuple[str, str], MetricReport],
    mapping: Mapping[str, Sequence[str]] = DEFAULT_MAPPING,
) -> dict:
    """Average each metric over its mapped traces, then min-max normalize
    across devices (0 = best = smallest raw value)."""
    unknown = [m for m in mapping if m not in METRICS]
    if unknown:
        raise ArgumentError(f"unknown metric(s) in mapping: {', '.join(unknown)}")
    gaps = [
        f"{d}/{t}" for m in mapping for d in devices for t in mapping[m] if (d, t) not in results
    ]
    gaps = sorted(set(gaps))
    if gaps:
        raise CompletenessError(f"missing results for: {', '.join(gaps)}", gaps)

    raw: dict[str, dict[str, float]] = {}
    per_trace: dict[str, dict[str, dict[str, float]]] = {}
    for m, traces in mapping.items():
        raw[m] = {}
        per_trace[m] = {}
        for d in devices:
            vals = {t: results[(d, t)].value(m) for t in traces}
            per_trace[m][d] = vals
            raw[m][d] = float(np.mean(list(vals.values())))
    normalized = {m: min_max(raw[m]) for m in raw}
    return {
        "devices": list(devices),
        "mapping": {m: list(t) for m, t in mapping.items()},
        "latency": "one-way",
        "raw": raw,
        "normalized": normalized,
        "per_trace": per_trace,
    }
