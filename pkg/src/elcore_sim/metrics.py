"""Result scoring and run accounting.

The allocation accuracy of a resolved query is the percentage of
requested conditions (per-resource attributes, intra-group links,
inter-group links) that the delivered selection satisfies.  The maximum
reachable accuracy (MRA) is the same ratio maximized over every
selection the system could have offered at snapshot time; it is exact,
not heuristic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .errors import ConfigurationError
from .topology import (ALL_TYPES, CORE_ATTRS, SystemTopology, chip_stamp,
                       node_stamp)

if TYPE_CHECKING:  # import cycle guard: query imports GroupTerms from here
    from .query import Query


@dataclass(frozen=True)
class GroupTerms:
    requested: int                        # resources asked for
    conditions_per_resource: int          # attribute conditions each must meet
    link_count: int                       # intra-group link specs
    qualified_attrs: tuple[int, ...]      # satisfied conditions per delivered resource
    qualified_links: int                  # satisfied intra-group links

    def validate(self) -> None:
        if self.requested < 1:
            raise ConfigurationError("group must request at least one resource")
        if self.conditions_per_resource < 0 or self.link_count < 0:
            raise ConfigurationError("negative term counts")
        if len(self.qualified_attrs) > self.requested:
            raise ConfigurationError("more delivered resources than requested")
        if any(p < 0 or p > self.conditions_per_resource for p in self.qualified_attrs):
            raise ConfigurationError("qualified attributes exceed conditions")
        if not 0 <= self.qualified_links <= self.link_count:
            raise ConfigurationError("qualified links exceed link count")


@dataclass(frozen=True)
class RaaTerms:
    inter_link_count: int
    qualified_inter_links: int
    groups: tuple[GroupTerms, ...]

    def validate(self) -> None:
        if not self.groups:
            raise ConfigurationError("terms need at least one group")
        if not 0 <= self.qualified_inter_links <= self.inter_link_count:
            raise ConfigurationError("qualified inter links exceed inter link count")
        for g in self.groups:
            g.validate()


def compute_raa(terms: RaaTerms) -> float:
    """Resource allocation accuracy in percent."""
    terms.validate()
    num = terms.qualified_inter_links
    den = terms.inter_link_count
    for g in terms.groups:
        num += sum(g.qualified_attrs) + g.qualified_links
        den += g.requested * g.conditions_per_resource + g.link_count
    if den == 0:
        raise ConfigurationError("accuracy undefined: no conditions requested")
    return 100.0 * num / den


# -- snapshots and the exact optimum ---------------------------------------


@dataclass
class Snapshot:
    """Availability at scoring time.

    `node_type_free` is a (nodes, types) count matrix and suffices for
    queries whose conditions reduce to core types.  `explicit_ids`
    carries individual cores for small general cases.
    """

    node_type_free: np.ndarray | None = None
    explicit_ids: tuple[int, ...] | None = None


def qualifying_types(conds) -> tuple[int, ...]:
    """Core types whose fixed attribute vector satisfies every condition."""
    out = []
    for t in ALL_TYPES:
        stamp = {"core_type": t.letter, **dict(CORE_ATTRS[t].as_stamp())}
        if all(c.matches(stamp) for c in conds):
            out.append(int(t))
    return tuple(out)


def _uniform_bound(sub) -> tuple[bool, object]:
    if not sub.intra_links:
        return True, None
    first = sub.intra_links[0]
    if all(b == first for b in sub.intra_links):
        return True, first
    return False, None


def _component_group_max(sub, snapshot: Snapshot, topo: SystemTopology) -> GroupTerms | None:
    """Exact per-group optimum via components of the in-bound node graph.

    Valid when the pair-qualification of two cores depends only on their
    nodes: a uniform intra-link bound whose minimum admits every real
    latency and whose maximum admits the intra-node bus.  Consecutive
    picks inside one node then always qualify, and a walk through a
    connected component chains everything in it, so the best qualified
    link count for m picks is m minus the number of components used.
    """
    uniform, bound = _uniform_bound(sub)
    if not uniform or snapshot.node_type_free is None:
        return None
    if sub.conds_for("an") or sub.conds_for("sn"):
        return None  # the type-count matrix cannot see context conditions
    lat = topo.params.latency
    if bound is not None:
        if bound.min_ns > lat.hop_latency_ns:
            return None
        if bound.max_ns < lat.delta_small_ns:
            return None
    types = qualifying_types(sub.conds_for("ln"))
    counts = snapshot.node_type_free[:, types].sum(axis=1).astype(np.int64)
    total = int(counts.sum())
    m = min(sub.count, total)
    rho = len(sub.conditions)
    if m == 0:
        return GroupTerms(sub.count, rho, len(sub.intra_links), (), 0)
    if bound is None:
        return GroupTerms(sub.count, rho, len(sub.intra_links), (rho,) * m, 0)
    occupied = np.flatnonzero(counts > 0)
    max_hops = bound.max_ns // lat.delta_big_ns
    sub_hops = topo.net_hops[np.ix_(occupied, occupied)]
    reach = sub_hops <= max_hops
    # component sums over the qualified-pair node graph
    seen = np.zeros(len(occupied), dtype=bool)
    comp_sums: list[int] = []
    for i in range(len(occupied)):
        if seen[i]:
            continue
        frontier = [i]
        seen[i] = True
        csum = 0
        while frontier:
            u = frontier.pop()
            csum += int(counts[occupied[u]])
            for v in np.flatnonzero(reach[u] & ~seen):
                seen[v] = True
                frontier.append(int(v))
        comp_sums.append(csum)
    comp_sums.sort(reverse=True)
    left = m
    parts = 0
    for s in comp_sums:
        if left <= 0:
            break
        left -= s
        parts += 1
    tau = min(len(sub.intra_links), m - parts)
    return GroupTerms(sub.count, rho, len(sub.intra_links), (rho,) * m, tau)


def compute_mra(query: "Query", snapshot: Snapshot, topo: SystemTopology,
                budget: int = 200_000) -> float | None:
    """Maximum reachable accuracy over the snapshot, or None when no
    exact value can be afforded.

    Enumerable snapshots (explicit ids, at most 64 of them) go through
    the ordered search, which is exact for every query form.  Count-only
    snapshots of exact queries without inter-group links fall back to
    the component optimum; its link term is attainable whenever in-bound
    node pairs stay mutually reachable, which holds for the dense
    network graphs generated here."""
    got = _mra_search(query, snapshot, topo, budget)
    if got is not None:
        return got
    if query.mode != "exact" or query.inter_links:
        return None
    groups = []
    for sub in query.groups:
        g = _component_group_max(sub, snapshot, topo)
        if g is None:
            return None
        groups.append(g)
    return compute_raa(RaaTerms(0, 0, tuple(groups)))


def _mra_search(query: "Query", snapshot: Snapshot, topo: SystemTopology,
                budget: int) -> float | None:
    """Branch-and-bound over ordered selections; exact within budget."""
    if snapshot.explicit_ids is None:
        return None
    candidates = list(snapshot.explicit_ids)
    if len(candidates) > 64:
        return None

    per_group_cands: list[list[tuple[int, int]]] = []
    for sub in query.groups:
        conds = sub.conditions
        cands = []
        for rid in candidates:
            t = topo.core_type[rid]
            stamp = {"core_type": t.letter, **dict(CORE_ATTRS[t].as_stamp())}
            stamp["types"] = chip_stamp(topo, topo.core_chip[rid])["types"]
            nstamp = node_stamp(topo, topo.core_node[rid])[0]
            stamp.update((k, v) for k, v in nstamp.items()
                         if k.startswith("bucket:"))
            phi = sum(1 for c in conds if c.matches(stamp))
            if query.mode == "exact" and phi < len(conds):
                continue
            cands.append((rid, phi))
        per_group_cands.append(cands)

    den = query_denominator(query)
    best = {"num": -1}
    nodes = {"n": 0}

    def group_upper(idx: int, pool: frozenset[int]) -> int:
        sub = query.groups[idx]
        avail = sum(1 for rid, _ in per_group_cands[idx] if rid in pool)
        m = min(sub.count, avail)
        rho = len(sub.conditions)
        tau_max = min(len(sub.intra_links), max(0, m - 1))
        return m * rho + tau_max

    def extend(gi: int, pool: frozenset[int], num_so_far: int,
               pivots: list[int | None]) -> None:
        if nodes["n"] > budget:
            raise TimeoutError
        nodes["n"] += 1
        if gi == len(query.groups):
            gamma = 0
            for ga, gb, bound in query.inter_links:
                pa, pb = pivots[ga], pivots[gb]
                if pa is not None and pb is not None and bound.contains(
                        topo.latency_ns(pa, pb)):
                    gamma += 1
            total = num_so_far + gamma
            if total > best["num"]:
                best["num"] = total
            return
        optimistic = num_so_far + len(query.inter_links)
        for gj in range(gi, len(query.groups)):
            optimistic += group_upper(gj, pool)
        if optimistic <= best["num"]:
            return
        sub = query.groups[gi]

        def build(seq: list[tuple[int, int]], remaining: frozenset[int]) -> None:
            if nodes["n"] > budget:
                raise TimeoutError
            nodes["n"] += 1
            members = [rid for rid, _ in seq]
            phi_sum = sum(p for _, p in seq)
            tau = 0
            usable = min(len(sub.intra_links), max(0, len(members) - 1))
            for j in range(usable):
                if sub.intra_links[j].contains(
                        topo.latency_ns(members[j], members[j + 1])):
                    tau += 1
            extend(gi + 1, remaining, num_so_far + phi_sum + tau,
                   pivots + [members[0] if members else None])
            if len(seq) >= sub.count:
                return
            for rid, phi in per_group_cands[gi]:
                if rid in remaining:
                    build(seq + [(rid, phi)], remaining - {rid})

        build([], pool)

    try:
        extend(0, frozenset(candidates), 0, [])
    except TimeoutError:
        return None
    if best["num"] < 0:
        return None
    return 100.0 * best["num"] / den


def query_denominator(query: "Query") -> int:
    den = len(query.inter_links)
    for sub in query.groups:
        den += sub.count * len(sub.conditions) + len(sub.intra_links)
    if den == 0:
        raise ConfigurationError("accuracy undefined: no conditions requested")
    return den


# -- run accounting ---------------------------------------------------------


@dataclass
class VisitRecord:
    time_ns: int
    provider: int          # vnode id
    layer: str
    anchor_dist_ns: int    # network distance from the phase anchor
    messages: int
    found: tuple[int, ...] = ()


@dataclass
class QueryTrace:
    query_id: int
    strategy: str
    seed: int
    system_size: int
    setting: str
    start_ns: int
    finish_ns: int = 0
    release_ns: int = 0
    messages: int = 0
    selections: list[list[int]] = field(default_factory=list)
    raa: float = 0.0
    mra: float | None = None
    mra_unavailable: bool = False
    visits: list[VisitRecord] = field(default_factory=list)
    snapshot: Snapshot | None = None

    @property
    def latency_ns(self) -> int:
        return self.finish_ns - self.start_ns

    @property
    def matched(self) -> int:
        return sum(len(s) for s in self.selections)


class MessageTally:
    """Window accounting: every message counts at sender and receiver."""

    def __init__(self, window_ns: tuple[int, int]):
        self.window_ns = window_ns
        self.vnode_msgs: dict[int, int] = {}
        self.node_msgs: dict[int, int] = {}
        self.node_bytes: dict[int, int] = {}
        self.total_messages = 0
        self.total_bytes = 0
        self.window_messages = 0

    def add(self, time_ns: int, src_vnode: int, dst_vnode: int,
            src_node: int, dst_node: int, size_bytes: int) -> None:
        self.total_messages += 1
        self.total_bytes += size_bytes
        lo, hi = self.window_ns
        if lo <= time_ns < hi:
            self.window_messages += 1
            self.vnode_msgs[src_vnode] = self.vnode_msgs.get(src_vnode, 0) + 1
            self.vnode_msgs[dst_vnode] = self.vnode_msgs.get(dst_vnode, 0) + 1
            self.node_msgs[src_node] = self.node_msgs.get(src_node, 0) + 1
            self.node_msgs[dst_node] = self.node_msgs.get(dst_node, 0) + 1
            self.node_bytes[src_node] = self.node_bytes.get(src_node, 0) + size_bytes
            self.node_bytes[dst_node] = self.node_bytes.get(dst_node, 0) + size_bytes


@dataclass
class RunMetrics:
    rows: list[dict]
    node_rows: list[tuple[int, int, int]]
    vnode_window_msgs: dict[int, int]
    summary: dict[str, float]


def account_run(traces: Iterable[QueryTrace], tally: MessageTally,
                nodes: int) -> RunMetrics:
    rows = []
    raas: list[float] = []
    mras: list[float] = []
    msgs: list[int] = []
    lats: list[float] = []
    for t in traces:
        rows.append({
            "query_id": t.query_id,
            "strategy": t.strategy,
            "seed": t.seed,
            "system_size": t.system_size,
            "messages": t.messages,
            "latency_ms": t.latency_ns / 1e6,
            "raa": t.raa,
            "mra": "" if t.mra is None else t.mra,
            "setting": t.setting,
        })
        raas.append(t.raa)
        if t.mra is not None:
            mras.append(t.mra)
        msgs.append(t.messages)
        lats.append(t.latency_ns / 1e6)
    node_rows = [(n, tally.node_msgs.get(n, 0), tally.node_bytes.get(n, 0))
                 for n in range(nodes)]
    summary = {
        "queries": float(len(rows)),
        "mean_raa": sum(raas) / len(raas) if raas else 0.0,
        "mean_mra": sum(mras) / len(mras) if mras else 0.0,
        "mra_unavailable": float(len(raas) - len(mras)),
        "mean_messages": sum(msgs) / len(msgs) if msgs else 0.0,
        "mean_latency_ms": sum(lats) / len(lats) if lats else 0.0,
        "window_messages": float(tally.window_messages),
        "total_messages": float(tally.total_messages),
    }
    return RunMetrics(rows, node_rows, dict(tally.vnode_msgs), summary)
