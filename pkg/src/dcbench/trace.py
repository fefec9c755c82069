"""Canonical four-tuple trace model, validation, capture fusion and the
binary / CSV trace formats.

Records are held column-wise in read-only int64 numpy arrays so that
million-record traces stay cheap; ``Trace[i]`` and ``Trace.records`` give
the row view as :class:`PacketRecord` objects.
"""

from __future__ import annotations

import csv
import io
import ipaddress
import json
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ArgumentError, ConfigError, ParseError

MIN_FRAME = 64
MAX_FRAME = 9216
NO_PORT = -1

MAGIC = b"DCNBTRC1"
_U32_NONE = 0xFFFFFFFF
# u64 timestamp, six u32 fields, two reserved u32 words (keeps 8-byte alignment)
RECORD_DTYPE = np.dtype(
    [
        ("timestamp_us", "<u8"),
        ("frame_bytes", "<u4"),
        ("payload_bytes", "<u4"),
        ("src", "<u4"),
        ("dst", "<u4"),
        ("ingress", "<u4"),
        ("egress", "<u4"),
        ("reserved", "<u4"),
        ("reserved2", "<u4"),
    ]
)
assert RECORD_DTYPE.itemsize == 40

COLUMNS = ("timestamp_us", "frame_bytes", "payload_bytes", "src", "dst", "ingress", "egress")
CSV_HEADER = (
    "timestamp_us",
    "frame_bytes",
    "payload_bytes",
    "src_node",
    "dst_node",
    "ingress_port",
    "egress_port",
)


class PatternLabel(str, Enum):
    STABLE = "Stable"
    BURST = "Burst"
    INCREASE = "Increase"

    @classmethod
    def parse(cls, text: str) -> "PatternLabel":
        for label in cls:
            if label.value.lower() == str(text).strip().lower():
                return label
        raise ArgumentError(f"unknown pattern label {text!r}; expected one of stable, burst, increase")


@dataclass(frozen=True)
class PacketRecord:
    timestamp_us: int
    frame_bytes: int
    payload_bytes: int
    src_node: int
    dst_node: int
    ingress_port: int | None = None
    egress_port: int | None = None


@dataclass(frozen=True)
class LabeledSpan:
    start_us: int
    end_us: int
    label: PatternLabel


@dataclass(frozen=True)
class TraceMeta:
    topology_kind: str | None = None
    switch_kind: str | None = None
    application_label: str | None = None
    pattern_labels: tuple[LabeledSpan, ...] = ()
    dominant: PatternLabel | None = None
    # index == node id; empty when ids are anonymous
    node_names: tuple[str, ...] = ()
    # absolute microseconds corresponding to timestamp 0
    epoch_us: int = 0

    def to_json_dict(self) -> dict:
        return {
            "topology_kind": self.topology_kind,
            "switch_kind": self.switch_kind,
            "application_label": self.application_label,
            "pattern_labels": [[s.start_us, s.end_us, s.label.value] for s in self.pattern_labels],
            "dominant": self.dominant.value if self.dominant else None,
            "node_names": list(self.node_names),
            "epoch_us": self.epoch_us,
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "TraceMeta":
        dominant = d.get("dominant")
        return cls(
            topology_kind=d.get("topology_kind"),
            switch_kind=d.get("switch_kind"),
            application_label=d.get("application_label"),
            pattern_labels=tuple(
                LabeledSpan(int(s), int(e), PatternLabel.parse(lbl)) for s, e, lbl in d.get("pattern_labels", ())
            ),
            dominant=PatternLabel.parse(dominant) if dominant else None,
            node_names=tuple(d.get("node_names", ())),
            epoch_us=int(d.get("epoch_us", 0)),
        )


def _column(values, name) -> np.ndarray:
    arr = np.array(values, dtype=np.int64, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trace:
    """Time-ordered packet records plus metadata.

    Ports use ``NO_PORT`` (-1) in the column arrays and ``None`` in
    :class:`PacketRecord`.
    """

    timestamp_us: np.ndarray
    frame_bytes: np.ndarray
    payload_bytes: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    ingress: np.ndarray
    egress: np.ndarray
    meta: TraceMeta = field(default_factory=TraceMeta)

    def __post_init__(self):
        n = None
        for name in COLUMNS:
            arr = _column(getattr(self, name), name)
            object.__setattr__(self, name, arr)
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise ArgumentError(f"column {name} has {len(arr)} entries, expected {n}")

    @classmethod
    def empty(cls, meta: TraceMeta | None = None) -> "Trace":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, z, z, z, meta or TraceMeta())

    @classmethod
    def from_columns(cls, meta: TraceMeta | None = None, **cols) -> "Trace":
        n = len(cols["timestamp_us"])
        ingress = cols.get("ingress", np.full(n, NO_PORT))
        egress = cols.get("egress", np.full(n, NO_PORT))
        return cls(
            cols["timestamp_us"],
            cols["frame_bytes"],
            cols["payload_bytes"],
            cols["src"],
            cols["dst"],
            ingress,
            egress,
            meta or TraceMeta(),
        )

    @classmethod
    def from_records(cls, records: Iterable[PacketRecord], meta: TraceMeta | None = None) -> "Trace":
        rows = [
            (
                r.timestamp_us,
                r.frame_bytes,
                r.payload_bytes,
                r.src_node,
                r.dst_node,
                NO_PORT if r.ingress_port is None else r.ingress_port,
                NO_PORT if r.egress_port is None else r.egress_port,
            )
            for r in records
        ]
        if not rows:
            return cls.empty(meta)
        cols = np.array(rows, dtype=np.int64).T
        return cls(*cols, meta=meta or TraceMeta())

    def __len__(self) -> int:
        return len(self.timestamp_us)

    def __getitem__(self, i: int) -> PacketRecord:
        ing, eg = int(self.ingress[i]), int(self.egress[i])
        return PacketRecord(
            int(self.timestamp_us[i]),
            int(self.frame_bytes[i]),
            int(self.payload_bytes[i]),
            int(self.src[i]),
            int(self.dst[i]),
            None if ing == NO_PORT else ing,
            None if eg == NO_PORT else eg,
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def records(self) -> tuple[PacketRecord, ...]:
        return tuple(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return self.meta == other.meta and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in COLUMNS
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def duration_us(self) -> int:
        return int(self.timestamp_us[-1]) if len(self) else 0

    @property
    def total_bytes(self) -> int:
        return int(self.frame_bytes.sum())

    @property
    def node_count(self) -> int:
        """Size of the node id space: the name table if present, else max id + 1."""
        if self.meta.node_names:
            return len(self.meta.node_names)
        if not len(self):
            return 0
        return int(max(self.src.max(), self.dst.max())) + 1

    def with_meta(self, **changes) -> "Trace":
        return replace(self, meta=replace(self.meta, **changes))

    def take(self, index) -> "Trace":
        """Sub-trace by integer index array or slice, metadata unchanged."""
        return Trace(*(getattr(self, c)[index] for c in COLUMNS), meta=self.meta)

    def shifted(self, delta_us: int) -> "Trace":
        """Subtract ``delta_us`` from every timestamp, moving the epoch forward to match."""
        cols = {c: getattr(self, c) for c in COLUMNS}
        cols["timestamp_us"] = self.timestamp_us - delta_us
        return Trace(**cols, meta=replace(self.meta, epoch_us=self.meta.epoch_us + delta_us))

    def rebased(self) -> "Trace":
        return self.shifted(int(self.timestamp_us[0])) if len(self) else self


# --------------------------------------------------------------------------
# node registry
# --------------------------------------------------------------------------


def node_sort_key(name: str):
    """Sort IP:port endpoints numerically, anything else lexically after them."""
    host, sep, port = name.rpartition(":")
    try:
        if sep:
            return (0, int(ipaddress.ip_address(host)), int(port), name)
        return (0, int(ipaddress.ip_address(name)), -1, name)
    except ValueError:
        return (1, 0, 0, name)


class NodeRegistry:
    """Assigns dense integer ids to endpoint names in first-seen order."""

    def __init__(self, names: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        for n in names:
            self.id_for(n)

    def id_for(self, name: str) -> int:
        nid = self._ids.get(name)
        if nid is None:
            nid = self._ids[name] = len(self._names)
            self._names.append(name)
        return nid

    def __len__(self):
        return len(self._names)

    def __contains__(self, name):
        return name in self._ids

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._names)

    def canonical(self) -> tuple[tuple[str, ...], np.ndarray]:
        """Canonical (sorted) name table and the old-id -> new-id remap array."""
        order = sorted(range(len(self._names)), key=lambda i: node_sort_key(self._names[i]))
        remap = np.empty(len(order), dtype=np.int64)
        remap[order] = np.arange(len(order))
        return tuple(self._names[i] for i in order), remap


def remap_nodes(trace: Trace, remap: np.ndarray, names: Sequence[str]) -> Trace:
    cols = {c: getattr(trace, c) for c in COLUMNS}
    if len(trace):
        cols["src"] = remap[trace.src]
        cols["dst"] = remap[trace.dst]
    return Trace(**cols, meta=replace(trace.meta, node_names=tuple(names)))


def canonicalize_nodes(trace: Trace) -> Trace:
    """Reorder the node axis so ids follow the sorted name table."""
    if not trace.meta.node_names:
        return trace
    names, remap = NodeRegistry(trace.meta.node_names).canonical()
    return remap_nodes(trace, remap, names)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    index: int | None
    rule: str
    message: str

    def __str__(self):
        where = f"record {self.index}" if self.index is not None else "trace"
        return f"{where}: {self.rule}: {self.message}"


def validate_trace(trace: Trace) -> list[Violation]:
    """Check every record and metadata invariant; an empty list means valid."""
    out: list[Violation] = []
    ts, fb, pb = trace.timestamp_us, trace.frame_bytes, trace.payload_bytes

    def each(mask, rule, fmt):
        for i in np.flatnonzero(mask):
            out.append(Violation(int(i), rule, fmt(int(i))))

    each(ts < 0, "timestamp-nonnegative", lambda i: f"timestamp_us={ts[i]} < 0")
    each(pb < 0, "payload-nonnegative", lambda i: f"payload_bytes={pb[i]} < 0")
    each(pb > fb, "payload-within-frame", lambda i: f"payload_bytes={pb[i]} > frame_bytes={fb[i]}")
    each(
        (fb < MIN_FRAME) | (fb > MAX_FRAME),
        "frame-size-range",
        lambda i: f"frame_bytes={fb[i]} outside [{MIN_FRAME}, {MAX_FRAME}]",
    )
    if len(ts) > 1:
        each(
            np.concatenate([[False], ts[1:] < ts[:-1]]),
            "time-order",
            lambda i: f"timestamp_us={ts[i]} precedes previous {ts[i - 1]}",
        )
    if trace.meta.node_names and len(trace):
        n = len(trace.meta.node_names)
        each(
            (trace.src < 0) | (trace.src >= n) | (trace.dst < 0) | (trace.dst >= n),
            "node-registered",
            lambda i: f"endpoint ids ({trace.src[i]}, {trace.dst[i]}) outside name table of {n}",
        )

    end = trace.duration_us
    spans = sorted(trace.meta.pattern_labels, key=lambda s: (s.start_us, s.end_us))
    prev_end = None
    for s in spans:
        if s.start_us < 0 or s.end_us < s.start_us or s.end_us > end:
            out.append(
                Violation(None, "label-span-range", f"span [{s.start_us}, {s.end_us}] outside [0, {end}]")
            )
        if prev_end is not None and s.start_us < prev_end:
            out.append(Violation(None, "label-span-overlap", f"span starting {s.start_us} overlaps previous ending {prev_end}"))
        prev_end = s.end_us if prev_end is None else max(prev_end, s.end_us)
    return out


# --------------------------------------------------------------------------
# fusion
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PortPair:
    ingress: int | None = None
    egress: int | None = None


def fuse_captures(captures: Mapping[str, Trace], port_map: Mapping[str, PortPair]) -> Trace:
    """Merge per-port captures into one time-sorted trace.

    Each capture's records get the ingress/egress ports from ``port_map``.
    Observations of one packet at several ports share the key
    (timestamp, src, dst, frame_bytes); the one from the capture listed
    first is kept. Timestamps are aligned on the capture epochs and rebased
    to the earliest packet.
    """
    missing = [name for name in captures if name not in port_map]
    if missing:
        raise ConfigError(f"port map has no entry for capture(s): {', '.join(missing)}")

    named = [t for t in captures.values() if t.meta.node_names]
    if named and len(named) != len(captures):
        raise ConfigError("cannot fuse captures with and without node name tables")
    registry = NodeRegistry()
    if named:
        for t in captures.values():
            for n in t.meta.node_names:
                registry.id_for(n)
        names, canon = registry.canonical()
    else:
        names = ()

    parts = {c: [] for c in COLUMNS}
    order = []
    starts = [t.meta.epoch_us + int(t.timestamp_us[0]) for t in captures.values() if len(t)]
    epoch = min(starts) if starts else 0
    for cap_idx, (name, t) in enumerate(captures.items()):
        pp = port_map[name]
        n = len(t)
        src, dst = t.src, t.dst
        if names:
            local = np.array([canon[registry.id_for(x)] for x in t.meta.node_names], dtype=np.int64)
            if n:
                src, dst = local[src], local[dst]
        parts["timestamp_us"].append(t.timestamp_us + (t.meta.epoch_us - epoch))
        parts["frame_bytes"].append(t.frame_bytes)
        parts["payload_bytes"].append(t.payload_bytes)
        parts["src"].append(src)
        parts["dst"].append(dst)
        parts["ingress"].append(np.full(n, NO_PORT if pp.ingress is None else pp.ingress))
        parts["egress"].append(np.full(n, NO_PORT if pp.egress is None else pp.egress))
        order.append(np.full(n, cap_idx))

    if not order:
        return Trace.empty(TraceMeta(node_names=tuple(names)))
    cols = {c: np.concatenate(v).astype(np.int64) for c, v in parts.items()}
    cap = np.concatenate(order)
    within = np.arange(len(cap))
    # first occurrence in (capture order, original position) wins
    pref = np.lexsort((within, cap))
    key = np.stack([cols["timestamp_us"], cols["src"], cols["dst"], cols["frame_bytes"]], axis=1)[pref]
    _, first = np.unique(key, axis=0, return_index=True)
    keep = pref[first]
    keep = keep[np.lexsort((within[keep], cap[keep], cols["timestamp_us"][keep]))]

    base = TraceMeta(node_names=tuple(names), epoch_us=epoch)
    return Trace(**{c: v[keep] for c, v in cols.items()}, meta=base)


# --------------------------------------------------------------------------
# binary format
# --------------------------------------------------------------------------


def serialize_trace(trace: Trace) -> bytes:
    n = len(trace)
    rec = np.zeros(n, dtype=RECORD_DTYPE)
    for c in COLUMNS:
        col = getattr(trace, c)
        if c in ("ingress", "egress"):
            bad = (col < NO_PORT) | (col >= _U32_NONE)
            col = np.where(col == NO_PORT, _U32_NONE, col)
        elif c == "timestamp_us":
            bad = col < 0
        else:
            bad = (col < 0) | (col >= _U32_NONE)
        if n and bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ArgumentError(f"record {i}: {c}={getattr(trace, c)[i]} does not fit the trace format")
        rec[c] = col
    meta = json.dumps(trace.meta.to_json_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()
    return b"".join(
        [MAGIC, struct.pack("<I", n), rec.tobytes(), struct.pack("<I", len(meta)), meta]
    )


def deserialize_trace(data: bytes) -> Trace:
    data = bytes(data)
    if len(data) < 12:
        raise ParseError(f"file too short for header ({len(data)} bytes)", len(data))
    if data[:8] != MAGIC:
        raise ParseError(f"bad magic {data[:8]!r}, expected {MAGIC!r}", 0)
    (n,) = struct.unpack_from("<I", data, 8)
    off = 12
    need = n * RECORD_DTYPE.itemsize
    if len(data) - off < need:
        whole = (len(data) - off) // RECORD_DTYPE.itemsize
        raise ParseError(f"truncated record block: {n} records declared, {whole} complete", off + whole * RECORD_DTYPE.itemsize)
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=n, offset=off)
    off += need
    if len(data) - off < 4:
        raise ParseError("missing metadata length", off)
    (mlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) - off < mlen:
        raise ParseError(f"truncated metadata block: {mlen} bytes declared, {len(data) - off} present", off)
    try:
        meta = TraceMeta.from_json_dict(json.loads(data[off : off + mlen].decode("utf-8")))
    except json.JSONDecodeError as exc:
        raise ParseError(f"metadata is not valid JSON: {exc.msg}", off + exc.pos) from None
    except (UnicodeDecodeError, TypeError, ValueError, KeyError) as exc:
        raise ParseError(f"bad metadata block: {exc}", off) from None
    if off + mlen != len(data):
        raise ParseError(f"{len(data) - off - mlen} trailing bytes after metadata", off + mlen)

    cols = {c: rec[c].astype(np.int64) for c in COLUMNS}
    for c in ("ingress", "egress"):
        cols[c][rec[c] == _U32_NONE] = NO_PORT
    return Trace(**cols, meta=meta)


def write_trace(trace: Trace, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_trace(trace))


def read_trace(path) -> Trace:
    with open(path, "rb") as f:
        return deserialize_trace(f.read())


# --------------------------------------------------------------------------
# CSV export
# --------------------------------------------------------------------------


def trace_to_csv(trace: Trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in trace:
        w.writerow(
            [
                r.timestamp_us,
                r.frame_bytes,
                r.payload_bytes,
                r.src_node,
                r.dst_node,
                "" if r.ingress_port is None else r.ingress_port,
                "" if r.egress_port is None else r.egress_port,
            ]
        )
    return buf.getvalue()


def trace_from_csv(text: str, meta: TraceMeta | None = None) -> Trace:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"CSV header must be {','.join(CSV_HEADER)}", 0)
    records = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        try:
            vals = [int(v) if v.strip() else None for v in row]
            records.append(PacketRecord(*vals))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: {exc}", lineno) from None
    return Trace.from_records(records, meta)
