import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcbench.errors import ConfigError, ParseError
from dcbench.trace import (
    LabeledSpan,
    NodeRegistry,
    PacketRecord,
    PatternLabel,
    PortPair,
    Trace,
    TraceMeta,
    deserialize_trace,
    fuse_captures,
    serialize_trace,
    trace_from_csv,
    trace_to_csv,
    validate_trace,
)

from helpers import random_trace


def rec(ts, frame=100, payload=10, src=0, dst=1, ing=None, eg=None):
    return PacketRecord(ts, frame, payload, src, dst, ing, eg)


def test_pattern_label_is_closed_enum():
    assert {l.value for l in PatternLabel} == {"Stable", "Burst", "Increase"}
    assert PatternLabel.parse("burst") is PatternLabel.BURST


class TestValidate:
    def test_empty_trace_is_valid(self):
        assert validate_trace(Trace.empty()) == []

    def test_payload_exceeding_frame_names_record_zero(self):
        v = validate_trace(Trace.from_records([rec(0, frame=100, payload=200)]))
        assert len(v) == 1
        assert v[0].index == 0 and v[0].rule == "payload-within-frame"

    def test_decreasing_timestamps(self):
        v = validate_trace(Trace.from_records([rec(10), rec(5)]))
        assert [(x.index, x.rule) for x in v] == [(1, "time-order")]

    @pytest.mark.parametrize("frame", [63, 9217])
    def test_frame_range(self, frame):
        v = validate_trace(Trace.from_records([rec(0, frame=frame, payload=0)]))
        assert [x.rule for x in v] == ["frame-size-range"]

    def test_negative_timestamp(self):
        v = validate_trace(Trace.from_records([rec(-1)]))
        assert "timestamp-nonnegative" in {x.rule for x in v}

    def test_label_spans(self):
        t = Trace.from_records([rec(0), rec(100)])
        ok = t.with_meta(pattern_labels=(LabeledSpan(0, 50, PatternLabel.STABLE), LabeledSpan(50, 100, PatternLabel.BURST)))
        assert validate_trace(ok) == []
        overlap = t.with_meta(pattern_labels=(LabeledSpan(0, 60, PatternLabel.STABLE), LabeledSpan(50, 100, PatternLabel.BURST)))
        assert [x.rule for x in validate_trace(overlap)] == ["label-span-overlap"]
        outside = t.with_meta(pattern_labels=(LabeledSpan(0, 101, PatternLabel.STABLE),))
        assert [x.rule for x in validate_trace(outside)] == ["label-span-range"]

    def test_random_traces_valid(self):
        assert validate_trace(random_trace(1, 500, ports=True)) == []


class TestFuse:
    def test_merge_sorts(self):
        a = Trace.from_records([rec(10)])
        b = Trace.from_records([rec(5)])
        out = fuse_captures({"a": a, "b": b}, {"a": PortPair(1, 2), "b": PortPair(3, 4)})
        assert out.timestamp_us.tolist() == [0, 5]  # rebased to the earliest packet
        assert out.meta.epoch_us == 5
        assert [(r.ingress_port, r.egress_port) for r in out] == [(3, 4), (1, 2)]

    def test_identity_port_map(self):
        t = random_trace(3, 50, names=False)
        out = fuse_captures({"cap": t}, {"cap": PortPair(7, 9)})
        assert len(out) == len(t)
        assert np.array_equal(out.timestamp_us, t.timestamp_us)
        assert np.array_equal(out.src, t.src) and np.array_equal(out.frame_bytes, t.frame_bytes)
        assert set(out.ingress.tolist()) == {7} and set(out.egress.tolist()) == {9}

    def test_missing_port_map_entry_names_capture(self):
        with pytest.raises(ConfigError, match="core-egress"):
            fuse_captures({"tor": Trace.empty(), "core-egress": Trace.empty()}, {"tor": PortPair()})

    def test_duplicate_observation_dedup_against_set_oracle(self):
        base = random_trace(4, 200, names=False)
        # copy every third record into a second capture, as if seen at another port
        dup = base.take(np.arange(0, len(base), 3))
        out = fuse_captures({"tor-in": base, "core-out": dup}, {"tor-in": PortPair(1, 2), "core-out": PortPair(8, 9)})
        keys = {(r.timestamp_us, r.src_node, r.dst_node, r.frame_bytes) for r in list(base) + list(dup)}
        assert len(out) == len(keys)
        assert {(r.timestamp_us, r.src_node, r.dst_node, r.frame_bytes) for r in out} == keys
        # earliest-listed capture wins
        assert set(out.ingress.tolist()) == {1}

    def test_one_packet_two_ports(self):
        a = Trace.from_records([rec(100, src=3, dst=4)])
        b = Trace.from_records([rec(100, src=3, dst=4)])
        out = fuse_captures({"tor": a, "core": b}, {"tor": PortPair(0, 1), "core": PortPair(5, 6)})
        assert len(out) == 1 and (out[0].ingress_port, out[0].egress_port) == (0, 1)

    def test_name_tables_are_unified(self):
        a = Trace.from_records([rec(0, src=0, dst=1)], TraceMeta(node_names=("10.0.0.2:1", "10.0.0.1:1")))
        b = Trace.from_records([rec(1, src=0, dst=1)], TraceMeta(node_names=("10.0.0.3:1", "10.0.0.2:1")))
        out = fuse_captures({"a": a, "b": b}, {"a": PortPair(), "b": PortPair()})
        assert out.meta.node_names == ("10.0.0.1:1", "10.0.0.2:1", "10.0.0.3:1")
        assert [(r.src_node, r.dst_node) for r in out] == [(1, 0), (2, 1)]

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 400), min_size=1, max_size=5), st.integers(0, 2**32))
    def test_count_and_order_properties(self, sizes, seed):
        rng = np.random.default_rng(seed)
        pool = random_trace(seed, 300, nodes=4, span_us=50, names=False)
        caps = {}
        for k, n in enumerate(sizes):
            idx = np.sort(rng.choice(len(pool), size=min(n, len(pool)), replace=False))
            caps[f"c{k}"] = pool.take(idx)
        out = fuse_captures(caps, {k: PortPair(i, i) for i, k in enumerate(caps)})
        all_keys = [(r.timestamp_us, r.src_node, r.dst_node, r.frame_bytes) for t in caps.values() for r in t]
        assert len(out) == len(all_keys) - (len(all_keys) - len(set(all_keys)))
        assert (np.diff(out.timestamp_us) >= 0).all()


class TestSerialization:
    def test_empty_round_trip(self):
        t = Trace.empty()
        assert deserialize_trace(serialize_trace(t)) == t

    def test_layout(self):
        t = Trace.from_records([rec(7, 64, 0, 1, 2, None, 3)])
        b = serialize_trace(t)
        assert b[:8] == b"DCNBTRC1"
        assert int.from_bytes(b[8:12], "little") == 1
        body = b[12:52]
        assert int.from_bytes(body[0:8], "little") == 7
        assert [int.from_bytes(body[8 + 4 * k : 12 + 4 * k], "little") for k in range(8)] == [
            64, 0, 1, 2, 0xFFFFFFFF, 3, 0, 0,
        ]
        mlen = int.from_bytes(b[52:56], "little")
        assert len(b) == 56 + mlen

    def test_thousand_record_round_trip(self):
        t = random_trace(1000, 1000, ports=True).with_meta(
            pattern_labels=(LabeledSpan(0, 10, PatternLabel.BURST),), dominant=PatternLabel.BURST
        )
        b = serialize_trace(t)
        back = deserialize_trace(b)
        for c in ("timestamp_us", "frame_bytes", "payload_bytes", "src", "dst", "ingress", "egress"):
            assert np.array_equal(getattr(back, c), getattr(t, c)), c
        assert back.meta == t.meta
        assert back == t
        assert serialize_trace(back) == b

    def test_truncated_payload_reports_offset(self):
        b = serialize_trace(random_trace(5, 10))
        with pytest.raises(ParseError) as ei:
            deserialize_trace(b[:12 + 40 * 3 + 17])
        assert ei.value.offset == 12 + 40 * 3

    def test_truncated_metadata(self):
        b = serialize_trace(random_trace(5, 2))
        with pytest.raises(ParseError) as ei:
            deserialize_trace(b[:-3])
        assert ei.value.offset == 12 + 80 + 4

    def test_bad_magic(self):
        with pytest.raises(ParseError) as ei:
            deserialize_trace(b"NOTATRC1" + bytes(8))
        assert ei.value.offset == 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32), st.integers(0, 60))
    def test_round_trip_property(self, seed, n):
        t = random_trace(seed, n, ports=True)
        assert deserialize_trace(serialize_trace(t)) == t


def test_csv_round_trip():
    t = random_trace(9, 40, ports=True, names=False)
    text = trace_to_csv(t)
    assert text.splitlines()[0] == "timestamp_us,frame_bytes,payload_bytes,src_node,dst_node,ingress_port,egress_port"
    assert trace_from_csv(text, t.meta) == t


def test_registry_canonical_order():
    reg = NodeRegistry(["10.0.0.10:80", "10.0.0.2:80", "10.0.0.2:7"])
    names, remap = reg.canonical()
    assert names == ("10.0.0.2:7", "10.0.0.2:80", "10.0.0.10:80")
    assert remap.tolist() == [2, 1, 0]


def test_trace_immutable():
    t = random_trace(1, 5)
    with pytest.raises(ValueError):
        t.timestamp_us[0] = 3
