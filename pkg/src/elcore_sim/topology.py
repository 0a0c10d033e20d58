"""Synthetic many-core system generator.

A system is a set of compute nodes on a random connected management
network; each node carries a fixed number of chips on a shared bus, and
each chip is a 3-D mesh (optionally torus) of typed cores.  Latency
between cores is a total, symmetric function of their placement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ConfigurationError
from .rng import substream


class CoreType(IntEnum):
    A = 0
    B = 1
    C = 2
    D = 3
    E = 4
    F = 5

    @property
    def letter(self) -> str:
        return self.name


@dataclass(frozen=True)
class CoreAttrs:
    clock_ghz: float
    l1_kb: int
    l2_kb: int
    cache_line_b: int
    mem_bw_gbps: float

    def as_stamp(self) -> tuple:
        """Canonical ordered (attribute, value) tuple for layer stamps."""
        return (
            ("clock_ghz", self.clock_ghz),
            ("l1_kb", self.l1_kb),
            ("l2_kb", self.l2_kb),
            ("cache_line_b", self.cache_line_b),
            ("mem_bw_gbps", self.mem_bw_gbps),
        )


# Clock rates are the published per-type values; the remaining cache and
# bandwidth figures are a synthetic but fixed per-type table so that a
# core's type fully determines its attribute vector.
CORE_ATTRS: dict[CoreType, CoreAttrs] = {
    CoreType.A: CoreAttrs(2.53, 64, 512, 64, 12.8),
    CoreType.B: CoreAttrs(3.6, 32, 256, 64, 25.6),
    CoreType.C: CoreAttrs(1.6, 16, 128, 32, 6.4),
    CoreType.D: CoreAttrs(2.8, 64, 1024, 64, 19.2),
    CoreType.E: CoreAttrs(1.2, 8, 64, 32, 3.2),
    CoreType.F: CoreAttrs(2.4, 32, 512, 64, 12.8),
}

ALL_TYPES: tuple[CoreType, ...] = tuple(CoreType)

# message size classes, bytes
CONTROL_BYTES = 256
DESCRIPTION_BYTES = 1024


@dataclass(frozen=True)
class LatencyModel:
    """Placement-based latency constants.

    delta_small_ns is the minimum latency between cores on different
    chips of one node (the bus); delta_big_ns is the per-hop latency of
    the inter-node network and therefore also the minimum latency
    between cores on different nodes.
    """

    hop_latency_ns: int = 10
    delta_small_ns: int = 200
    delta_big_ns: int = 50_000
    mesh_bits_per_s: int = 50_000_000_000
    bus_bits_per_s: int = 20_000_000_000
    net_bits_per_s: int = 100_000_000

    def validate(self, chip_diameter_hops: int) -> None:
        if chip_diameter_hops * self.hop_latency_ns >= self.delta_small_ns:
            raise ConfigurationError(
                "intra-chip diameter latency must stay below delta_small_ns"
            )
        if self.delta_small_ns > self.delta_big_ns:
            raise ConfigurationError("delta_small_ns must not exceed delta_big_ns")


def mesh_dims_for(cores: int) -> tuple[int, int, int]:
    """Near-cubic 3-D mesh dimensions whose product is `cores`."""
    best = None
    for x in range(1, cores + 1):
        if cores % x:
            continue
        rest = cores // x
        for y in range(1, rest + 1):
            if rest % y:
                continue
            z = rest // y
            dims = tuple(sorted((x, y, z), reverse=True))
            spread = dims[0] - dims[2]
            if best is None or spread < best[0]:
                best = (spread, dims)
    assert best is not None
    return best[1]


@dataclass
class SystemParams:
    nodes: int = 125
    chips_per_node: int = 2
    cores_per_chip: int = 8
    mesh_dims: tuple[int, int, int] | None = None
    torus: bool = False
    beta: float = 0.625
    type_a_fraction: float | None = 0.2
    type_a_count: int | None = None
    latency: LatencyModel = field(default_factory=LatencyModel)

    @property
    def total_cores(self) -> int:
        return self.nodes * self.chips_per_node * self.cores_per_chip

    @property
    def total_chips(self) -> int:
        return self.nodes * self.chips_per_node

    def resolved_mesh_dims(self) -> tuple[int, int, int]:
        dims = self.mesh_dims or mesh_dims_for(self.cores_per_chip)
        if dims[0] * dims[1] * dims[2] != self.cores_per_chip:
            raise ConfigurationError("mesh_dims product must equal cores_per_chip")
        return dims

    def type_a_target(self) -> int:
        if self.type_a_count is not None:
            if not 0 < self.type_a_count <= self.total_cores:
                raise ConfigurationError("type_a_count out of range")
            return self.type_a_count
        frac = self.type_a_fraction
        if frac is None or not 0.0 < frac <= 1.0:
            raise ConfigurationError("type_a_fraction must lie in (0, 1]")
        return int(round(frac * self.total_cores))

    def validate(self) -> None:
        if self.nodes < 1 or self.chips_per_node < 1 or self.cores_per_chip < 1:
            raise ConfigurationError("system sizes must be positive")
        dims = self.resolved_mesh_dims()
        diameter = sum(d - 1 for d in dims)
        self.latency.validate(diameter)
        if self.beta <= 0:
            raise ConfigurationError("beta must be positive")
        if self.nodes > 1 and self.network_link_target() < self.nodes - 1:
            raise ConfigurationError(
                "beta yields fewer links than needed for a connected network"
            )
        self.type_a_target()

    def network_link_target(self) -> int:
        if self.nodes == 1:
            return 0
        want = int(round(self.nodes / self.beta))
        return min(want, self.nodes * (self.nodes - 1) // 2)


def dor_hops(a: tuple[int, int, int], b: tuple[int, int, int],
             dims: tuple[int, int, int], torus: bool) -> int:
    """Dimension-order route length: x resolved first, then y, then z."""
    hops = 0
    for pa, pb, size in zip(a, b, dims):
        d = abs(pa - pb)
        if torus:
            d = min(d, size - d)
        hops += d
    return hops


class SystemTopology:
    """Generated system: typed cores with placement plus latency oracle."""

    def __init__(self, params: SystemParams, seed: int):
        params.validate()
        self.params = params
        self.seed = seed
        self.dims = params.resolved_mesh_dims()
        n_cores = params.total_cores
        self.core_type: list[CoreType] = [CoreType.A] * n_cores
        self.core_node: list[int] = [0] * n_cores
        self.core_chip: list[int] = [0] * n_cores
        self.core_pos: list[tuple[int, int, int]] = [(0, 0, 0)] * n_cores
        self.chip_node: list[int] = [0] * params.total_chips
        self.chip_cores: list[list[int]] = [[] for _ in range(params.total_chips)]
        self.node_cores: list[list[int]] = [[] for _ in range(params.nodes)]

        cid = 0
        for chip in range(params.total_chips):
            node = chip // params.chips_per_node
            self.chip_node[chip] = node
            x_dim, y_dim, z_dim = self.dims
            for z in range(z_dim):
                for y in range(y_dim):
                    for x in range(x_dim):
                        self.core_node[cid] = node
                        self.core_chip[cid] = chip
                        self.core_pos[cid] = (x, y, z)
                        self.chip_cores[chip].append(cid)
                        self.node_cores[node].append(cid)
                        cid += 1

        self.chip_pair: list[tuple[CoreType, CoreType]] = []
        assign_core_types(self, params.type_a_target(), seed)

        self.network_edges: list[tuple[int, int]] = _random_connected_graph(
            params.nodes, params.network_link_target(), seed
        )
        self.net_hops: np.ndarray = _all_pairs_hops(params.nodes, self.network_edges)

    # -- latency ----------------------------------------------------------

    def route_hops(self, a: int, b: int) -> int:
        """Mesh hop count between two cores of the same chip."""
        if self.core_chip[a] != self.core_chip[b]:
            raise ConfigurationError("route_hops is defined within one chip")
        return dor_hops(self.core_pos[a], self.core_pos[b], self.dims,
                        self.params.torus)

    def latency_ns(self, a: int, b: int) -> int:
        if a == b:
            return 0
        lat = self.params.latency
        if self.core_chip[a] == self.core_chip[b]:
            return self.route_hops(a, b) * lat.hop_latency_ns
        na, nb = self.core_node[a], self.core_node[b]
        if na == nb:
            return lat.delta_small_ns
        return int(self.net_hops[na, nb]) * lat.delta_big_ns

    def node_latency_ns(self, na: int, nb: int) -> int:
        """Network portion of latency between two nodes (0 within a node)."""
        if na == nb:
            return 0
        return int(self.net_hops[na, nb]) * self.params.latency.delta_big_ns

    def transit_ns(self, a: int, b: int, size_bytes: int) -> int:
        """Propagation plus serialization on the slowest channel class used."""
        lat = self.params.latency
        if a == b:
            rate = lat.mesh_bits_per_s
        elif self.core_chip[a] == self.core_chip[b]:
            rate = lat.mesh_bits_per_s
        elif self.core_node[a] == self.core_node[b]:
            rate = lat.bus_bits_per_s
        else:
            rate = lat.net_bits_per_s
        return self.latency_ns(a, b) + (size_bytes * 8 * 1_000_000_000) // rate

    # -- reporting --------------------------------------------------------

    def type_counts(self) -> dict[CoreType, int]:
        counts = {t: 0 for t in ALL_TYPES}
        for t in self.core_type:
            counts[t] += 1
        return counts

    def dump_text(self) -> str:
        lines = []
        for cid in range(len(self.core_type)):
            x, y, z = self.core_pos[cid]
            lines.append(
                f"{cid} {self.core_type[cid].letter} {self.core_node[cid]} "
                f"{self.core_chip[cid]} {x} {y} {z}"
            )
        return "\n".join(lines) + "\n"


# per-type core-count buckets: none, few, cluster-capable, chip-filling
BUCKET_EDGES = (1, 4, 8)


def bucket_of(count: int) -> int:
    b = 0
    for edge in BUCKET_EDGES:
        if count >= edge:
            b += 1
    return b


def node_stamp(topo: SystemTopology, node: int) -> tuple[dict[str, object], tuple]:
    """Node-level stamp: present types plus per-type count buckets."""
    counts = {t.letter: 0 for t in CORE_ATTRS}
    for cid in topo.node_cores[node]:
        counts[topo.core_type[cid].letter] += 1
    stamp: dict[str, object] = {
        "types": frozenset(t for t, c in counts.items() if c > 0)
    }
    key_parts = []
    for letter in sorted(counts):
        b = bucket_of(counts[letter])
        stamp[f"bucket:{letter}"] = b
        key_parts.append(b)
    return stamp, tuple(key_parts)


def chip_stamp(topo: SystemTopology, chip: int) -> dict[str, object]:
    """Chip-level stamp: present types plus aggregated attribute ranges."""
    types = sorted({topo.core_type[cid] for cid in topo.chip_cores[chip]})
    stamp: dict[str, object] = {
        "types": frozenset(t.letter for t in types)
    }
    for attr in ("clock_ghz", "l1_kb", "l2_kb", "cache_line_b", "mem_bw_gbps"):
        vals = [dict(CORE_ATTRS[t].as_stamp())[attr] for t in types]
        stamp[attr] = (min(vals), max(vals))
    return stamp


def assign_core_types(topo: SystemTopology, type_a_target: int, seed: int) -> None:
    """Assign up to two distinct types per chip, then adjust type-A count.

    Chips are drawn from a shuffled queue; the k-th drawn chip takes the
    k-th two-type combination (cyclically) and each of its cores picks
    one of the pair at random.  A post pass flips cores on chips whose
    pair includes type A, one core per chip per round, until the exact
    target count is met.
    """
    rng = substream(seed, "core-types")
    pairs = []
    for i in range(len(ALL_TYPES)):
        for j in range(i + 1, len(ALL_TYPES)):
            pairs.append((ALL_TYPES[i], ALL_TYPES[j]))

    order = list(range(topo.params.total_chips))
    rng.shuffle(order)
    topo.chip_pair = [pairs[0]] * topo.params.total_chips
    for k, chip in enumerate(order):
        tx, ty = pairs[k % len(pairs)]
        topo.chip_pair[chip] = (tx, ty)
        for cid in topo.chip_cores[chip]:
            topo.core_type[cid] = tx if rng.random() < 0.5 else ty

    a_chips = [c for c in order if CoreType.A in topo.chip_pair[c]]
    have = sum(1 for t in topo.core_type if t is CoreType.A)
    guard = 0
    while have != type_a_target:
        flipped = False
        for chip in a_chips:
            if have == type_a_target:
                break
            tx, ty = topo.chip_pair[chip]
            other = ty if tx is CoreType.A else tx
            if have < type_a_target:
                victim = next((c for c in topo.chip_cores[chip]
                               if topo.core_type[c] is other), None)
                if victim is not None:
                    topo.core_type[victim] = CoreType.A
                    have += 1
                    flipped = True
            else:
                victim = next((c for c in topo.chip_cores[chip]
                               if topo.core_type[c] is CoreType.A), None)
                if victim is not None:
                    topo.core_type[victim] = other
                    have -= 1
                    flipped = True
        guard += 1
        if not flipped or guard > topo.params.total_cores:
            raise ConfigurationError(
                f"cannot adjust type-A count to {type_a_target}: "
                f"reached {have} with no flippable cores left"
            )


def _random_connected_graph(nodes: int, links: int, seed: int) -> list[tuple[int, int]]:
    """Random spanning tree plus uniform extra edges, no duplicates."""
    if nodes == 1 or links == 0:
        return []
    rng = substream(seed, "network")
    order = list(range(nodes))
    rng.shuffle(order)
    edges: set[tuple[int, int]] = set()
    for i in range(1, nodes):
        a = order[i]
        b = order[rng.randrange(i)]
        edges.add((min(a, b), max(a, b)))
    while len(edges) < links:
        a = rng.randrange(nodes)
        b = rng.randrange(nodes)
        if a == b:
            continue
        edges.add((min(a, b), max(a, b)))
    return sorted(edges)


def _all_pairs_hops(nodes: int, edges: list[tuple[int, int]]) -> np.ndarray:
    adj: list[list[int]] = [[] for _ in range(nodes)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    dist = np.full((nodes, nodes), np.iinfo(np.uint16).max, dtype=np.uint16)
    for src in range(nodes):
        dist[src, src] = 0
        frontier = [src]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if dist[src, v] == np.iinfo(np.uint16).max:
                        dist[src, v] = d
                        nxt.append(v)
            frontier = nxt
    if nodes > 1 and dist.max() == np.iinfo(np.uint16).max:
        raise ConfigurationError("management network is not connected")
    return dist


def generate_system(params: SystemParams, seed: int) -> SystemTopology:
    return SystemTopology(params, seed)
