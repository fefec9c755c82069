"""Three-tier, k-ary fat-tree and spine-leaf topologies with ECMP routing.

Node ids share one space: hosts are ``0..H-1`` (so trace node ids map
straight onto hosts), switches follow. A node's port number is the index of
the link in that node's adjacency list, in link-creation order.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

from .errors import ArgumentError, ConfigError

DEFAULT_BANDWIDTH_BPS = 10_000_000_000
_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15


class TopologyKind(str, Enum):
    THREE_TIER = "three-tier"
    FAT_TREE = "fat-tree"
    SPINE_LEAF = "spine-leaf"

    @classmethod
    def parse(cls, text) -> "TopologyKind":
        t = str(text).strip().lower().replace("_", "-")
        aliases = {"threetier": "three-tier", "fattree": "fat-tree", "spineleaf": "spine-leaf"}
        t = aliases.get(t, t)
        for k in cls:
            if k.value == t:
                return k
        raise ArgumentError(f"unknown topology kind {text!r}")


class Tier(str, Enum):
    TOR = "tor"
    AGG = "agg"
    CORE = "core"


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS


@dataclass(frozen=True)
class Hop:
    switch: int
    ingress_port: int
    egress_port: int


@dataclass(frozen=True, eq=False)
class TopologySpec:
    kind: TopologyKind
    hosts: tuple[int, ...]
    switches: tuple[tuple[int, Tier], ...]
    links: tuple[Link, ...]
    parameters: dict = field(default_factory=dict)

    @cached_property
    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """node -> [(neighbor, link index)], position in list == port number."""
        adj: dict[int, list[tuple[int, int]]] = {n: [] for n in self.nodes}
        for i, ln in enumerate(self.links):
            adj[ln.a].append((ln.b, i))
            adj[ln.b].append((ln.a, i))
        return adj

    @cached_property
    def nodes(self) -> tuple[int, ...]:
        return self.hosts + tuple(s for s, _ in self.switches)

    @cached_property
    def tier_of(self) -> dict[int, Tier]:
        return dict(self.switches)

    @cached_property
    def _port_to(self) -> dict[tuple[int, int], int]:
        return {(n, nb): port for n, lst in self.adjacency.items() for port, (nb, _) in enumerate(lst)}

    def port(self, node: int, neighbor: int) -> int:
        return self._port_to[(node, neighbor)]

    def link_between(self, a: int, b: int) -> Link:
        return self.links[self.adjacency[a][self.port(a, b)][1]]

    def is_host(self, node) -> bool:
        return isinstance(node, int) and 0 <= node < len(self.hosts)

    def uplink_switch(self, host: int) -> int:
        return self.adjacency[host][0][0]

    def counts(self) -> tuple[int, int, int]:
        return len(self.hosts), len(self.switches), len(self.links)

    # ---------------------------------------------------------------- JSON
    def to_json_dict(self) -> dict:
        defaults = self.parameters.get("bandwidth_bps", DEFAULT_BANDWIDTH_BPS)
        overrides = [
            {"a": ln.a, "b": ln.b, "bandwidth_bps": ln.bandwidth_bps}
            for ln in self.links
            if ln.bandwidth_bps != defaults
        ]
        h, s, l = self.counts()
        return {
            "kind": self.kind.value,
            "parameters": dict(self.parameters),
            "bandwidth_overrides": overrides,
            "summary": {"hosts": h, "switches": s, "links": l},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TopologySpec":
        try:
            kind = TopologyKind.parse(d["kind"])
            params = dict(d.get("parameters", {}))
        except KeyError as exc:
            raise ConfigError(f"topology description missing {exc}") from None
        topo = build(kind, **params)
        for ov in d.get("bandwidth_overrides", ()):
            topo = topo.with_bandwidth(int(ov["a"]), int(ov["b"]), int(ov["bandwidth_bps"]))
        return topo

    def with_bandwidth(self, a: int, b: int, bandwidth_bps: int) -> "TopologySpec":
        if bandwidth_bps <= 0:
            raise ArgumentError("link bandwidth must be positive")
        if (a, b) not in self._port_to:
            raise ArgumentError(f"no link between {a} and {b}")
        links = tuple(
            Link(ln.a, ln.b, bandwidth_bps) if {ln.a, ln.b} == {a, b} else ln for ln in self.links
        )
        return TopologySpec(self.kind, self.hosts, self.switches, links, dict(self.parameters))


def save_topology(topo: TopologySpec, path) -> None:
    with open(path, "w") as f:
        json.dump(topo.to_json_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_topology(path) -> TopologySpec:
    try:
        with open(path) as f:
            return TopologySpec.from_json_dict(json.load(f))
    except FileNotFoundError:
        raise ConfigError(f"topology file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"topology file {path} is not valid JSON: {exc}") from None


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------


def _positive(**counts):
    for name, v in counts.items():
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ArgumentError(f"{name} must be an integer >= 1, got {v!r}")


class _Builder:
    def __init__(self, n_hosts: int, bandwidth_bps: int):
        if bandwidth_bps <= 0:
            raise ArgumentError("bandwidth_bps must be positive")
        self.hosts = tuple(range(n_hosts))
        self.switches: list[tuple[int, Tier]] = []
        self.links: list[Link] = []
        self.bw = bandwidth_bps
        self._next = n_hosts

    def switch(self, tier: Tier) -> int:
        sid = self._next
        self._next += 1
        self.switches.append((sid, tier))
        return sid

    def link(self, a: int, b: int):
        self.links.append(Link(a, b, self.bw))

    def done(self, kind, params) -> TopologySpec:
        return TopologySpec(kind, self.hosts, tuple(self.switches), tuple(self.links), params)


def build_three_tier(cores: int, aggs: int, tors: int, hosts_per_tor: int,
                     bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS) -> TopologySpec:
    """ToRs fully meshed to all aggregation switches, which are fully meshed to all cores."""
    _positive(cores=cores, aggs=aggs, tors=tors, hosts_per_tor=hosts_per_tor)
    b = _Builder(tors * hosts_per_tor, bandwidth_bps)
    core_ids = [b.switch(Tier.CORE) for _ in range(cores)]
    agg_ids = [b.switch(Tier.AGG) for _ in range(aggs)]
    tor_ids = [b.switch(Tier.TOR) for _ in range(tors)]
    for t, tor in enumerate(tor_ids):
        for h in range(hosts_per_tor):
            b.link(t * hosts_per_tor + h, tor)
    for tor in tor_ids:
        for agg in agg_ids:
            b.link(tor, agg)
    for agg in agg_ids:
        for core in core_ids:
            b.link(agg, core)
    params = dict(cores=cores, aggs=aggs, tors=tors, hosts_per_tor=hosts_per_tor, bandwidth_bps=bandwidth_bps)
    return b.done(TopologyKind.THREE_TIER, params)


def build_fat_tree(k: int, bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS) -> TopologySpec:
    """Standard k-ary fat-tree: k pods of k/2 edge + k/2 aggregation switches, (k/2)^2 cores."""
    if not isinstance(k, int) or isinstance(k, bool) or k < 2 or k % 2:
        raise ArgumentError(f"fat-tree k must be an even integer >= 2, got {k!r}")
    half = k // 2
    b = _Builder(k**3 // 4, bandwidth_bps)
    core_ids = [b.switch(Tier.CORE) for _ in range(half * half)]
    host = 0
    for _pod in range(k):
        aggs = [b.switch(Tier.AGG) for _ in range(half)]
        edges = [b.switch(Tier.TOR) for _ in range(half)]
        for e in edges:
            for _ in range(half):
                b.link(host, e)
                host += 1
        for e in edges:
            for a in aggs:
                b.link(e, a)
        for i, a in enumerate(aggs):
            for j in range(half):
                b.link(a, core_ids[i * half + j])
    return b.done(TopologyKind.FAT_TREE, dict(k=k, bandwidth_bps=bandwidth_bps))


def build_spine_leaf(spines: int, leaves: int, hosts_per_leaf: int,
                     bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS) -> TopologySpec:
    _positive(spines=spines, leaves=leaves, hosts_per_leaf=hosts_per_leaf)
    b = _Builder(leaves * hosts_per_leaf, bandwidth_bps)
    spine_ids = [b.switch(Tier.CORE) for _ in range(spines)]
    leaf_ids = [b.switch(Tier.TOR) for _ in range(leaves)]
    for l, leaf in enumerate(leaf_ids):
        for h in range(hosts_per_leaf):
            b.link(l * hosts_per_leaf + h, leaf)
    for leaf in leaf_ids:
        for s in spine_ids:
            b.link(leaf, s)
    params = dict(spines=spines, leaves=leaves, hosts_per_leaf=hosts_per_leaf, bandwidth_bps=bandwidth_bps)
    return b.done(TopologyKind.SPINE_LEAF, params)


_BUILDERS = {
    TopologyKind.THREE_TIER: build_three_tier,
    TopologyKind.FAT_TREE: build_fat_tree,
    TopologyKind.SPINE_LEAF: build_spine_leaf,
}


def build(kind, **params) -> TopologySpec:
    kind = TopologyKind.parse(kind) if not isinstance(kind, TopologyKind) else kind
    try:
        return _BUILDERS[kind](**params)
    except TypeError as exc:
        raise ArgumentError(f"bad parameters for {kind.value}: {exc}") from None


# --------------------------------------------------------------------------
# routing
# --------------------------------------------------------------------------


def ecmp_hash(flow_key: int) -> int:
    h = ((flow_key & _MASK64) * _GOLDEN64) & _MASK64
    return h ^ (h >> 29)


class Router:
    """Shortest-path router with per-destination BFS tables cached.

    Among equal-cost paths the route is the ``hash(flow_key) mod count``-th
    one in lexicographic order of node ids (mode ``"ecmp"``), or always the
    first (mode ``"single"``). Paths only transit switches.
    """

    def __init__(self, topo: TopologySpec, mode: str = "ecmp"):
        if mode not in ("ecmp", "single"):
            raise ArgumentError(f"routing mode must be 'ecmp' or 'single', got {mode!r}")
        self.topo = topo
        self.mode = mode
        self._neighbors = {n: sorted(nb for nb, _ in lst) for n, lst in topo.adjacency.items()}
        self._tables: dict[int, tuple[dict[int, int], dict[int, int]]] = {}

    def _table(self, dst: int):
        tab = self._tables.get(dst)
        if tab is None:
            dist = {dst: 0}
            order = [dst]
            q = deque([dst])
            while q:
                u = q.popleft()
                for v in self._neighbors[u]:
                    # hosts other than the destination never relay traffic
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        order.append(v)
                        if not self.topo.is_host(v):
                            q.append(v)
            npaths = {dst: 1}
            for u in order[1:]:
                npaths[u] = sum(npaths.get(v, 0) for v in self._next_hops(u, dist, dst))
            tab = self._tables[dst] = (dist, npaths)
        return tab

    def _next_hops(self, u, dist, dst):
        want = dist[u] - 1
        return [v for v in self._neighbors[u] if dist.get(v) == want and (v == dst or not self.topo.is_host(v))]

    def path_count(self, src: int, dst: int) -> int:
        self._check(src, dst)
        if src == dst:
            return 1
        _, npaths = self._table(dst)
        return npaths.get(src, 0)

    def node_path(self, src: int, dst: int, flow_key: int = 0) -> list[int]:
        self._check(src, dst)
        if src == dst:
            return [src]
        dist, npaths = self._table(dst)
        total = npaths.get(src, 0)
        if not total:
            raise ArgumentError(f"no path from {src} to {dst}")
        idx = ecmp_hash(flow_key) % total if self.mode == "ecmp" else 0
        path = [src]
        u = src
        while u != dst:
            for v in self._next_hops(u, dist, dst):
                c = npaths[v]
                if idx < c:
                    u = v
                    break
                idx -= c
            path.append(u)
        return path

    def route(self, src: int, dst: int, flow_key: int = 0) -> list[Hop]:
        nodes = self.node_path(src, dst, flow_key)
        t = self.topo
        return [Hop(nodes[i], t.port(nodes[i], nodes[i - 1]), t.port(nodes[i], nodes[i + 1])) for i in range(1, len(nodes) - 1)]

    def _check(self, src, dst):
        for n in (src, dst):
            if not self.topo.is_host(n):
                raise ArgumentError(f"node {n!r} is not a host of this topology")


def route(topo: TopologySpec, src: int, dst: int, flow_key: int = 0, mode: str = "ecmp") -> list[Hop]:
    return Router(topo, mode).route(src, dst, flow_key)
