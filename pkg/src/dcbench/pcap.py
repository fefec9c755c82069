"""Classic libpcap reader/writer and Ethernet/IPv4/TCP header extraction."""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import ParseError, UnsupportedFormatError
from .trace import MAX_FRAME, MIN_FRAME, NodeRegistry, PacketRecord, Trace, TraceMeta, canonicalize_nodes

MAGIC_USEC = 0xA1B2C3D4
MAGIC_USEC_SWAPPED = 0xD4C3B2A1
LINKTYPE_ETHERNET = 1

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
ETH_IPV6 = 0x86DD
ETH_VLAN = 0x8100
ETH_QINQ = 0x88A8
IPPROTO_TCP = 6
IPPROTO_UDP = 17


@dataclass(frozen=True)
class PcapHeader:
    byteorder: str  # "<" or ">"
    version: tuple[int, int]
    snaplen: int
    linktype: int


@dataclass(frozen=True)
class PcapPacketView:
    ts_sec: int
    ts_usec: int
    captured_len: int
    original_len: int
    data: bytes
    linktype: int = LINKTYPE_ETHERNET
    offset: int = 0

    @property
    def timestamp_us(self) -> int:
        return self.ts_sec * 1_000_000 + self.ts_usec


def read_header(data: bytes) -> PcapHeader:
    if len(data) < 4:
        raise ParseError("file too short for pcap magic", len(data))
    (magic,) = struct.unpack_from("<I", data, 0)
    if magic == MAGIC_USEC:
        bo = "<"
    elif magic == MAGIC_USEC_SWAPPED:
        bo = ">"
    else:
        raise UnsupportedFormatError(f"unsupported capture format, magic 0x{magic:08x}", 0)
    if len(data) < GLOBAL_HEADER_LEN:
        raise ParseError("truncated pcap global header", len(data))
    _, vmaj, vmin, _zone, _sigfigs, snaplen, linktype = struct.unpack_from(bo + "IHHiIII", data, 0)
    return PcapHeader(bo, (vmaj, vmin), snaplen, linktype)


def parse_pcap(data: bytes) -> Iterator[PcapPacketView]:
    """Yield the packets of a classic pcap file in file order."""
    data = bytes(data)
    hdr = read_header(data)
    rec = struct.Struct(hdr.byteorder + "IIII")
    off = GLOBAL_HEADER_LEN
    end = len(data)
    while off < end:
        if end - off < RECORD_HEADER_LEN:
            raise ParseError("truncated packet record header", off)
        ts_sec, ts_usec, incl, orig = rec.unpack_from(data, off)
        if incl > hdr.snaplen and hdr.snaplen:
            raise ParseError(f"captured length {incl} exceeds snaplen {hdr.snaplen}", off)
        if orig < incl:
            raise ParseError(f"original length {orig} below captured length {incl}", off)
        body = off + RECORD_HEADER_LEN
        if end - body < incl:
            raise ParseError(f"truncated packet data: {incl} bytes declared, {end - body} present", off)
        yield PcapPacketView(ts_sec, ts_usec, incl, orig, data[body : body + incl], hdr.linktype, off)
        off = body + incl


# --------------------------------------------------------------------------
# writer (test oracle and trace packager)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RawPacket:
    timestamp_us: int
    frame: bytes
    original_len: int | None = None


def write_pcap(packets: Iterable[RawPacket], *, snaplen: int = 65535, byteorder: str = "<",
               linktype: int = LINKTYPE_ETHERNET) -> bytes:
    out = [struct.pack(byteorder + "IHHiIII", MAGIC_USEC, 2, 4, 0, 0, snaplen, linktype)]
    for p in packets:
        frame = p.frame[:snaplen]
        orig = len(p.frame) if p.original_len is None else p.original_len
        sec, usec = divmod(p.timestamp_us, 1_000_000)
        out.append(struct.pack(byteorder + "IIII", sec, usec, len(frame), orig))
        out.append(frame)
    return b"".join(out)


def _ip_bytes(addr: str) -> bytes:
    return bytes(int(x) for x in addr.split("."))


def build_frame(
    src_ip: str,
    dst_ip: str,
    src_port: int = 0,
    dst_port: int = 0,
    payload_len: int = 0,
    *,
    proto: int = IPPROTO_TCP,
    tcp_options: int = 0,
    ip_options: int = 0,
    vlan: int | None = None,
    ethertype: int = ETH_IPV4,
    pad_to: int = 0,
) -> bytes:
    """Assemble an Ethernet II frame carrying IPv4 + TCP (or UDP).

    ``tcp_options``/``ip_options`` are extra header bytes (multiples of 4).
    ``pad_to`` appends trailer zeros after the IP packet, like NIC padding.
    """
    eth = b"\x02\x00\x00\x00\x00\x01" + b"\x02\x00\x00\x00\x00\x02"
    if vlan is not None:
        eth += struct.pack("!HH", ETH_VLAN, vlan & 0x0FFF)
    eth += struct.pack("!H", ethertype)
    if ethertype == ETH_ARP:
        body = struct.pack("!HHBBH", 1, ETH_IPV4, 6, 4, 1) + bytes(6) + _ip_bytes(src_ip) + bytes(6) + _ip_bytes(dst_ip)
        return (eth + body).ljust(pad_to, b"\x00")
    if proto == IPPROTO_TCP:
        l4 = struct.pack("!HHIIBBHHH", src_port, dst_port, 1, 0, ((20 + tcp_options) // 4) << 4, 0x02, 65535, 0, 0)
        l4 += b"\x01" * tcp_options
    elif proto == IPPROTO_UDP:
        l4 = struct.pack("!HHHH", src_port, dst_port, 8 + payload_len, 0)
    else:
        l4 = b""
    ihl = (20 + ip_options) // 4
    total = ihl * 4 + len(l4) + payload_len
    ip = struct.pack("!BBHHHBBH4s4s", 0x40 | ihl, 0, total, 0, 0x4000, 64, proto, 0, _ip_bytes(src_ip), _ip_bytes(dst_ip))
    ip += b"\x00" * ip_options
    return (eth + ip + l4 + b"\xab" * payload_len).ljust(pad_to, b"\x00")


# --------------------------------------------------------------------------
# header extraction
# --------------------------------------------------------------------------


@dataclass
class ExtractStats:
    parsed: int = 0
    emitted: int = 0
    # runt frames raised to the 64-byte minimum (still emitted)
    padded: int = 0
    skipped: Counter = field(default_factory=Counter)

    def merge(self, other: "ExtractStats"):
        self.parsed += other.parsed
        self.emitted += other.emitted
        self.padded += other.padded
        self.skipped.update(other.skipped)


@dataclass(frozen=True)
class Endpoints:
    src: str
    dst: str


def extract_record(
    view: PcapPacketView,
    registry: NodeRegistry,
    stats: ExtractStats | None = None,
    *,
    node_key: str = "ip:port",
) -> PacketRecord | None:
    """Turn one captured frame into an absolute-time PacketRecord, or None if skipped.

    Skips are counted in ``stats.skipped`` under: non-ethernet, truncated,
    nested-vlan, non-ip, non-ipv4, fragment, non-tcp, malformed-header, oversize.
    """
    stats = stats if stats is not None else ExtractStats()
    stats.parsed += 1

    def skip(reason):
        stats.skipped[reason] += 1
        return None

    if view.linktype != LINKTYPE_ETHERNET:
        return skip("non-ethernet")
    d = view.data
    if len(d) < 14:
        return skip("truncated")
    (etype,) = struct.unpack_from("!H", d, 12)
    off = 14
    if etype in (ETH_VLAN, ETH_QINQ):
        if len(d) < 18:
            return skip("truncated")
        (etype,) = struct.unpack_from("!H", d, 16)
        off = 18
        if etype in (ETH_VLAN, ETH_QINQ):
            return skip("nested-vlan")
    if etype == ETH_IPV6:
        return skip("non-ipv4")
    if etype != ETH_IPV4:
        return skip("non-ip")
    if len(d) < off + 20:
        return skip("truncated")
    vihl, _tos, ip_total, _id, frag, _ttl, proto = struct.unpack_from("!BBHHHBB", d, off)
    if vihl >> 4 != 4:
        return skip("malformed-header")
    ihl = vihl & 0x0F
    if ihl < 5:
        return skip("malformed-header")
    if frag & 0x1FFF:
        return skip("fragment")
    if proto != IPPROTO_TCP:
        return skip("non-tcp")
    src_ip = ".".join(str(b) for b in d[off + 12 : off + 16])
    dst_ip = ".".join(str(b) for b in d[off + 16 : off + 20])
    tcp = off + ihl * 4
    if len(d) < tcp + 13:
        return skip("truncated")
    sport, dport = struct.unpack_from("!HH", d, tcp)
    doff = d[tcp + 12] >> 4
    if doff < 5:
        return skip("malformed-header")
    payload = ip_total - ihl * 4 - doff * 4
    if payload < 0:
        return skip("malformed-header")
    frame = view.original_len
    if frame > MAX_FRAME:
        return skip("oversize")
    if frame < MIN_FRAME:
        # captures taken before NIC padding omit the pad and FCS
        frame = MIN_FRAME
        stats.padded += 1
    if node_key == "ip":
        src_name, dst_name = src_ip, dst_ip
    else:
        src_name, dst_name = f"{src_ip}:{sport}", f"{dst_ip}:{dport}"
    stats.emitted += 1
    return PacketRecord(
        timestamp_us=view.timestamp_us,
        frame_bytes=frame,
        payload_bytes=payload,
        src_node=registry.id_for(src_name),
        dst_node=registry.id_for(dst_name),
    )


def ingest_pcap(
    data: bytes,
    registry: NodeRegistry | None = None,
    stats: ExtractStats | None = None,
    *,
    node_key: str = "ip:port",
    canonical: bool = True,
) -> Trace:
    """Parse a whole capture into a trace whose epoch is its earliest packet.

    With a shared ``registry`` several captures get a common id space;
    pass ``canonical=False`` then and canonicalize after fusing.
    """
    registry = registry if registry is not None else NodeRegistry()
    stats = stats if stats is not None else ExtractStats()
    records = []
    for view in parse_pcap(data):
        r = extract_record(view, registry, stats, node_key=node_key)
        if r is not None:
            records.append(r)
    trace = Trace.from_records(records, TraceMeta(node_names=registry.names))
    if len(trace):
        order = np.argsort(trace.timestamp_us, kind="stable")
        trace = trace.take(order).rebased()
    return canonicalize_nodes(trace) if canonical else trace
