import numpy as np
import pytest

from dcbench.analysis import classify_trace
from dcbench.errors import ArgumentError, NotFoundError
from dcbench.extract import build_component, extract_micro
from dcbench.trace import LabeledSpan, PatternLabel, Trace, TraceMeta, validate_trace

S, B, I = PatternLabel.STABLE, PatternLabel.BURST, PatternLabel.INCREASE
W = 1000  # 1 ms windows keep the constructed traces small


def from_counts(counts, frame=100):
    """One record per packet, spread evenly inside its window."""
    ts = []
    for k, c in enumerate(counts):
        c = int(c)
        ts.extend(k * W + (np.arange(c) * W) // max(c, 1))
    n = len(ts)
    meta = TraceMeta(node_names=("a", "b"), epoch_us=5_000)
    return Trace.from_columns(meta, timestamp_us=np.asarray(ts, dtype=np.int64), frame_bytes=np.full(n, frame),
                              payload_bytes=np.zeros(n), src=np.zeros(n), dst=np.ones(n))


def test_identity_fragment_for_stable_trace():
    t = from_counts([20] * 50)
    rep = classify_trace(t, W)
    assert [s.label for s in rep.segments] == [S]
    m = extract_micro(t, rep, S)
    assert m == t.with_meta(pattern_labels=(LabeledSpan(0, t.duration_us, S),), dominant=S)
    assert validate_trace(m) == []


def test_ramp_then_flat_returns_ramp():
    ramp = np.linspace(2, 60, 40).round()
    flat = np.full(40, 4)
    t = from_counts(np.r_[ramp, flat])
    rep = classify_trace(t, W)
    inc = [s for s in rep.segments if s.label is I]
    assert inc and inc[0].start_window == 0
    end_w = inc[0].end_window
    m = extract_micro(t, rep, I)
    # ramp windows plus one padding window on the right; nothing before 0
    want = t.take(slice(0, int(np.searchsorted(t.timestamp_us, (end_w + 1) * W))))
    assert len(m) == len(want)
    assert (m.frame_bytes == want.frame_bytes).all()
    assert m.timestamp_us[0] == 0
    assert m.meta.pattern_labels == (LabeledSpan(0, m.duration_us, I),)
    assert m.meta.dominant is I
    assert end_w <= 42


def test_contiguous_and_uniform_shift():
    x = np.r_[np.full(30, 5), np.full(30, 50)]
    x[45] = 900
    t = from_counts(x)
    m = extract_micro(t, classify_trace(t, W), B)
    i = int(np.searchsorted(t.timestamp_us, m.meta.epoch_us - t.meta.epoch_us))
    shift = t.timestamp_us[i]
    assert m.timestamp_us[0] == 0
    assert (t.timestamp_us[i:i + len(m)] - shift == m.timestamp_us).all()
    assert (t.frame_bytes[i:i + len(m)] == m.frame_bytes).all()
    assert 0 < len(m) < len(t)


def test_not_found_names_labels():
    t = from_counts([20] * 30)
    with pytest.raises(NotFoundError, match="available labels: Stable"):
        extract_micro(t, classify_trace(t, W), B)


def test_max_duration_cap():
    t = from_counts([20] * 50)
    m = extract_micro(t, classify_trace(t, W), S, max_duration_us=10 * W)
    assert m.timestamp_us[-1] < 10 * W
    with pytest.raises(ArgumentError):
        extract_micro(t, classify_trace(t, W), S, max_duration_us=0)


def test_component_stable_only():
    t = from_counts([20] * 50)
    c = build_component(t, classify_trace(t, W))
    assert c.meta.pattern_labels == (LabeledSpan(0, t.duration_us, S),)
    assert c.meta.dominant is S


def test_component_stable_then_burst():
    rng = np.random.default_rng(3)
    stable = rng.integers(18, 22, 40)
    burst = rng.integers(45, 55, 60)
    burst[10::15] = 600
    t = from_counts(np.r_[stable, burst])
    rep = classify_trace(t, W)
    c = build_component(t, rep)
    assert [s.label for s in c.meta.pattern_labels] == [S, B]
    spans = c.meta.pattern_labels
    assert spans[0].start_us == 0 and spans[-1].end_us == t.duration_us
    assert spans[0].end_us == spans[1].start_us
    assert c.meta.dominant is B
    # never drops or reorders records
    assert (c.timestamp_us == t.timestamp_us).all() and len(c) == len(t)
    assert validate_trace(c) == []


def test_component_empty_report():
    from dcbench.analysis import ClassificationReport

    t = from_counts([5] * 10)
    with pytest.raises(ArgumentError):
        build_component(t, ClassificationReport(W, (), S))
