"""Deterministic discrete-event replay of a trace through an output-queued,
drop-tail switch network.

Time is kept in integer picoseconds so serialization delays are exact.
Hosts inject each packet at its timestamp with no NIC serialization; each
switch on the route applies its forwarding-rate spacing and fixed latency,
queues the packet FIFO at the egress port and serializes it at
``min(port rate, link bandwidth, exchange capacity / busy ports)``. Links
add a fixed propagation delay.
"""

from __future__ import annotations

import csv
import heapq
import io
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ArgumentError, ConfigError, ParseError
from .topology import Router, Tier, TopologySpec
from .trace import COLUMNS, MAX_FRAME, Trace

PS_PER_US = 1_000_000
PS_PER_S = 10**12

DEFAULT_PORT_RATE_BPS = 10_000_000_000
DEFAULT_BUFFER_BYTES = 512 * 1024
DEFAULT_LATENCY_US = 2.0
DEFAULT_DELAY_US = 1.0
DEFAULT_JITTER_TICK_US = 10


@dataclass(frozen=True)
class SwitchModel:
    name: str
    exchange_capacity_bps: int
    forwarding_rate_pps: int
    port_rate_bps: int = DEFAULT_PORT_RATE_BPS
    buffer_bytes: int = DEFAULT_BUFFER_BYTES
    latency_us: float = DEFAULT_LATENCY_US

    def __post_init__(self):
        if min(self.exchange_capacity_bps, self.forwarding_rate_pps, self.port_rate_bps) <= 0:
            raise ArgumentError(f"{self.name}: all rates must be positive")
        if self.buffer_bytes < MAX_FRAME:
            raise ArgumentError(f"{self.name}: buffer of {self.buffer_bytes} B cannot hold one {MAX_FRAME} B frame")
        if self.latency_us < 0:
            raise ArgumentError(f"{self.name}: latency must be nonnegative")

    def with_overrides(self, **kw) -> "SwitchModel":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_G, _M = 10**9, 10**6
PRESETS = {
    "s7706": SwitchModel("s7706", 76_800 * _G, 8640 * _M),
    "s5710": SwitchModel("s5710", 416 * _G, 192 * _M),
    "s5120": SwitchModel("s5120", 240 * _G, 72 * _M),
    "s5324tp": SwitchModel("s5324tp", 48 * _G, 36 * _M),
    "srw2024": SwitchModel("srw2024", 48 * _G, 36 * _M),
}


def preset_switch(name: str) -> SwitchModel:
    try:
        return PRESETS[name.strip().lower()]
    except KeyError:
        raise ArgumentError(f"unknown switch preset {name!r}; known: {', '.join(PRESETS)}") from None


@dataclass(frozen=True)
class SimConfig:
    topology: TopologySpec
    models: Mapping[Tier, SwitchModel]
    delay_us: float = DEFAULT_DELAY_US
    amplification: int = 1
    seed: int = 0
    routing: str = "ecmp"
    jitter_tick_us: int = DEFAULT_JITTER_TICK_US

    @classmethod
    def uniform(cls, topology: TopologySpec, model: SwitchModel, **kw) -> "SimConfig":
        return cls(topology, {t: model for t in Tier}, **kw)

    def validate(self):
        tiers = {t for _, t in self.topology.switches}
        missing = [t.value for t in tiers if t not in self.models]
        if missing:
            raise ConfigError(f"no switch model for tier(s): {', '.join(sorted(missing))}")
        if not isinstance(self.amplification, int) or self.amplification < 1:
            raise ConfigError(f"amplification must be an integer >= 1, got {self.amplification!r}")
        if self.delay_us < 0:
            raise ConfigError("link delay must be nonnegative")


@dataclass(frozen=True)
class PacketOutcome:
    index: int
    send_us: int
    deliver_us: float | None = None
    drop_switch: int | None = None

    @property
    def delivered(self) -> bool:
        return self.deliver_us is not None

    @property
    def latency_us(self) -> float | None:
        return None if self.deliver_us is None else self.deliver_us - self.send_us


def amplify(trace: Trace, k: int, seed: int = 0, tick_us: int = DEFAULT_JITTER_TICK_US) -> Trace:
    """Superimpose ``k - 1`` clones of every record onto the trace.

    Clone ``c`` moves node ids by ``c * node_count`` and jitters each
    timestamp by a seeded offset in ``[0, tick_us)``.
    """
    if not isinstance(k, int) or k < 1:
        raise ArgumentError(f"amplification factor must be an integer >= 1, got {k!r}")
    if k == 1:
        return trace
    rng = np.random.default_rng(np.random.SeedSequence([seed & ((1 << 64) - 1), k]))
    n = trace.node_count
    parts = {c: [getattr(trace, c)] for c in COLUMNS}
    for c in range(1, k):
        for col in COLUMNS:
            v = getattr(trace, col)
            if col == "timestamp_us":
                v = v + rng.integers(0, tick_us, len(trace))
            elif col in ("src", "dst"):
                v = v + c * n
            parts[col].append(v)
    cols = {c: np.concatenate(v) for c, v in parts.items()}
    order = np.argsort(cols["timestamp_us"], kind="stable")
    names = trace.meta.node_names
    if names:
        names = names + tuple(f"{x}~{c}" for c in range(1, k) for x in names)
    meta = replace(trace.meta, node_names=names, pattern_labels=())
    return Trace(**{c: v[order] for c, v in cols.items()}, meta=meta)


class _Port:
    __slots__ = ("queue", "bytes", "busy", "rate_bps", "busy_ps", "log")

    def __init__(self, rate_bps):
        self.queue = deque()
        self.bytes = 0
        self.busy = False
        self.rate_bps = rate_bps
        self.busy_ps = 0
        self.log = None


_TX_DONE, _ENQUEUE, _ARRIVE = 0, 1, 2


class Simulation:
    """One simulation instance; not shareable across threads."""

    def __init__(self, cfg: SimConfig, *, port_log: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.topo = cfg.topology
        self.router = Router(cfg.topology, cfg.routing)
        self.port_log = port_log
        self.ports: dict[tuple[int, int], _Port] = {}
        self.makespan_ps = 0

    def _model(self, switch) -> SwitchModel:
        return self.cfg.models[self.topo.tier_of[switch]]

    def run(self, trace: Trace) -> list[PacketOutcome]:
        cfg = self.cfg
        topo = self.topo
        tr = amplify(trace, cfg.amplification, cfg.seed, cfg.jitter_tick_us)
        n_hosts = len(topo.hosts)
        if len(tr):
            bad = (tr.src < 0) | (tr.src >= n_hosts) | (tr.dst < 0) | (tr.dst >= n_hosts)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise ConfigError(
                    f"record {i}: endpoint ({tr.src[i]}, {tr.dst[i]}) not a host of the "
                    f"{n_hosts}-host topology"
                )
            if (np.diff(tr.timestamp_us) < 0).any():
                raise ConfigError("trace is not sorted by timestamp")

        delay_ps = round(cfg.delay_us * PS_PER_US)
        sw = {}
        for s, _tier in topo.switches:
            m = self._model(s)
            sw[s] = {
                "gap": -(-PS_PER_S // m.forwarding_rate_pps),
                "lat": round(m.latency_us * PS_PER_US),
                "cap": m.exchange_capacity_bps,
                "buf": m.buffer_bytes,
                "free": 0,
                "active": 0,
            }
        ports = self.ports = {}
        for s, _tier in topo.switches:
            m = self._model(s)
            for p, (nb, li) in enumerate(topo.adjacency[s]):
                ports[(s, p)] = _Port(min(m.port_rate_bps, topo.links[li].bandwidth_bps))
                if self.port_log:
                    ports[(s, p)].log = []

        size = tr.frame_bytes.tolist()
        send = tr.timestamp_us.tolist()
        src = tr.src.tolist()
        dst = tr.dst.tolist()
        routes: dict[tuple[int, int], list] = {}
        pkt_route = []
        deliver: list = [None] * len(tr)
        dropped: list = [None] * len(tr)
        cur_hop = [0] * len(tr)

        events: list = []
        seq = 0
        for i in range(len(tr)):
            key = (src[i], dst[i])
            r = routes.get(key)
            if r is None:
                r = routes[key] = self.router.route(src[i], dst[i], (src[i] << 32) | dst[i])
            pkt_route.append(r)
            if not r:
                deliver[i] = send[i] * PS_PER_US
                continue
            events.append((send[i] * PS_PER_US + delay_ps, r[0].switch, r[0].ingress_port, _ARRIVE, seq, i, 0))
            seq += 1
        heapq.heapify(events)

        def start_tx(s, p, port, t):
            nonlocal seq
            i = port.queue[0]
            st = sw[s]
            st["active"] += 1
            port.busy = True
            bits_ps = size[i] * 8 * PS_PER_S
            dur = max(-(-bits_ps // port.rate_bps), -(-bits_ps * st["active"] // st["cap"]))
            port.busy_ps += dur
            if port.log is not None:
                port.log.append(("tx", i, t, t + dur))
            heapq.heappush(events, (t + dur, s, p, _TX_DONE, seq, i, -1))
            seq += 1

        pop, push = heapq.heappop, heapq.heappush
        t = 0
        while events:
            t, s, p, kind, _, i, h = pop(events)
            if kind == _ARRIVE:
                st = sw[s]
                start = t if t > st["free"] else st["free"]
                st["free"] = start + st["gap"]
                hop = pkt_route[i][h]
                push(events, (start + st["lat"], s, hop.egress_port, _ENQUEUE, seq, i, h))
                seq += 1
            elif kind == _ENQUEUE:
                port = ports[(s, p)]
                if port.bytes + size[i] > sw[s]["buf"]:
                    dropped[i] = s
                    continue
                port.queue.append(i)
                port.bytes += size[i]
                cur_hop[i] = h
                if port.log is not None:
                    port.log.append(("enq", i, t))
                if not port.busy:
                    start_tx(s, p, port, t)
            else:
                port = ports[(s, p)]
                j = port.queue.popleft()
                port.bytes -= size[j]
                port.busy = False
                sw[s]["active"] -= 1
                r = pkt_route[j]
                hop_idx = cur_hop[j]
                if hop_idx == len(r) - 1:
                    deliver[j] = t + delay_ps
                else:
                    nxt = r[hop_idx + 1]
                    push(events, (t + delay_ps, nxt.switch, nxt.ingress_port, _ARRIVE, seq, j, hop_idx + 1))
                    seq += 1
                if port.queue:
                    start_tx(s, p, port, t)
        self.makespan_ps = max([t] + [d for d in deliver if d is not None])

        out = []
        for i in range(len(tr)):
            d = deliver[i]
            out.append(PacketOutcome(i, send[i], None if d is None else d / PS_PER_US, dropped[i]))
        return out

    def utilization(self) -> float:
        """Mean busy fraction of all switch egress ports over the run."""
        if not self.makespan_ps or not self.ports:
            return 0.0
        return sum(p.busy_ps for p in self.ports.values()) / (len(self.ports) * self.makespan_ps)


def simulate(trace: Trace, cfg: SimConfig) -> list[PacketOutcome]:
    return Simulation(cfg).run(trace)


@dataclass(frozen=True)
class SweepRound:
    factor: int
    outcomes: list = field(repr=False)
    utilization: float


def amplify_sweep(trace: Trace, cfg: SimConfig, factors: Sequence[int]) -> list[SweepRound]:
    rounds = []
    for k in factors:
        sim = Simulation(replace(cfg, amplification=k))
        out = sim.run(trace)
        rounds.append(SweepRound(k, out, sim.utilization()))
    return rounds


# --------------------------------------------------------------------------
# outcomes CSV
# --------------------------------------------------------------------------

OUTCOME_HEADER = ("index", "send_us", "deliver_us", "drop_switch")


def outcomes_to_csv(outcomes: Sequence[PacketOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OUTCOME_HEADER)
    for o in outcomes:
        w.writerow(
            [
                o.index,
                o.send_us,
                "" if o.deliver_us is None else f"{o.deliver_us:.6f}",
                "" if o.drop_switch is None else o.drop_switch,
            ]
        )
    return buf.getvalue()


def outcomes_from_csv(text: str) -> list[PacketOutcome]:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or tuple(header) != OUTCOME_HEADER:
        raise ParseError(f"outcome CSV header must be {','.join(OUTCOME_HEADER)}", 0)
    out = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        try:
            idx, send, dlv, drop = row
            out.append(
                PacketOutcome(int(idx), int(send), float(dlv) if dlv else None, int(drop) if drop else None)
            )
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}", lineno) from None
    return out
