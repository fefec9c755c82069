"""Micro-trace (single pattern fragment) and component-trace construction."""

from __future__ import annotations

import numpy as np

from .analysis import ClassificationReport
from .errors import ArgumentError, NotFoundError
from .trace import LabeledSpan, PatternLabel, Trace


def extract_micro(
    trace: Trace,
    report: ClassificationReport,
    wanted: PatternLabel,
    max_duration_us: int | None = None,
) -> Trace:
    """Cut the longest ``wanted`` segment, padded by one window per side.

    The fragment is rebased so its first record sits at t = 0. With
    ``max_duration_us`` records at or beyond that offset are dropped.
    """
    matches = [s for s in report.segments if s.label == wanted]
    if not matches:
        have = sorted({s.label.value for s in report.segments})
        raise NotFoundError(f"no {wanted.value} segment; available labels: {', '.join(have) or 'none'}")
    best = max(matches, key=lambda s: (s.end_window - s.start_window, -s.start_window))
    w = report.window_us
    lo = max(best.start_window - 1, 0) * w
    hi = (best.end_window + 1) * w
    ts = trace.timestamp_us
    i0, i1 = int(np.searchsorted(ts, lo, "left")), int(np.searchsorted(ts, hi, "left"))
    frag = trace.take(slice(i0, i1)).rebased()
    if max_duration_us is not None:
        if max_duration_us <= 0:
            raise ArgumentError("max_duration_us must be positive")
        frag = frag.take(slice(0, int(np.searchsorted(frag.timestamp_us, max_duration_us, "left"))))
    return frag.with_meta(
        pattern_labels=(LabeledSpan(0, frag.duration_us, wanted),),
        dominant=wanted,
    )


def build_component(trace: Trace, report: ClassificationReport) -> Trace:
    """Attach the report's segments to the whole trace as its pattern labels."""
    if len(trace) and not report.segments:
        raise ArgumentError("classification report has no segments for a nonempty trace")
    end = trace.duration_us
    spans = []
    for s in report.segments:
        start = min(s.start_us, end)
        spans.append(LabeledSpan(start, min(max(s.end_us, start), end), s.label))
    return trace.with_meta(pattern_labels=tuple(spans), dominant=report.dominant)
