"""Grouping of cores into virtual nodes (vnodes).

A vnode is a set of same-type cores of one compute node whose pairwise
latency stays within a bound.  Formation follows a head-driven rounds
procedure: a randomly picked head collects qualified candidates, the
cores it rejected elect the next head among themselves, and so on until
no candidate is left.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .rng import substream
from .topology import CoreType, SystemTopology


@dataclass(frozen=True)
class ClusteringParams:
    eta: int = 8            # max members per vnode
    lambda_ns: int = 100    # max pairwise member latency

    def validate(self) -> None:
        if self.eta < 1:
            raise ConfigurationError("eta must be at least 1")
        if self.lambda_ns < 0:
            raise ConfigurationError("lambda_ns must be non-negative")


@dataclass
class VNode:
    vnode_id: int
    core_type: CoreType
    head: int
    members: list[int]          # head first, then acceptance order
    node: int
    home_chip: int              # chip of the head core
    home_chips: frozenset[int] = field(default_factory=frozenset)

    @property
    def size(self) -> int:
        return len(self.members)


def cluster_physical_node(topo: SystemTopology, node_id: int,
                          params: ClusteringParams, rng: random.Random,
                          first_id: int = 0) -> list[VNode]:
    """Cluster the cores of one compute node into vnodes."""
    params.validate()
    vnodes: list[VNode] = []
    pool = list(topo.node_cores[node_id])
    head = pool[rng.randrange(len(pool))]
    candidates = [c for c in pool if c != head]
    next_id = first_id
    while True:
        accepted: list[int] = []
        # candidates answer the head's broadcast; the head admits them
        # nearest first while the size cap and the pairwise bound hold
        ranked = sorted(candidates, key=lambda c: (topo.latency_ns(head, c), c))
        for cand in ranked:
            if len(accepted) + 1 >= params.eta:
                break
            if topo.core_type[cand] is not topo.core_type[head]:
                continue
            if topo.latency_ns(head, cand) > params.lambda_ns:
                continue
            if any(topo.latency_ns(cand, m) > params.lambda_ns for m in accepted):
                continue
            accepted.append(cand)
        members = [head] + accepted
        vnodes.append(VNode(
            vnode_id=next_id,
            core_type=topo.core_type[head],
            head=head,
            members=members,
            node=node_id,
            home_chip=topo.core_chip[head],
            home_chips=frozenset(topo.core_chip[m] for m in members),
        ))
        next_id += 1
        unsuccessful = [c for c in candidates if c not in accepted]
        if not unsuccessful:
            break
        head = unsuccessful[rng.randrange(len(unsuccessful))]
        candidates = [c for c in unsuccessful if c != head]
    return vnodes


def cluster_system(topo: SystemTopology, params: ClusteringParams,
                   seed: int) -> list[VNode]:
    """Cluster every compute node; vnode ids are sequential by node."""
    vnodes: list[VNode] = []
    for node_id in range(topo.params.nodes):
        rng = substream(seed, "cluster", node_id)
        vnodes.extend(cluster_physical_node(topo, node_id, params, rng,
                                            first_id=len(vnodes)))
    return vnodes


def dump_text(vnodes: list[VNode]) -> str:
    lines = []
    for v in vnodes:
        members = ",".join(str(m) for m in v.members)
        lines.append(f"{v.vnode_id} {v.core_type.letter} {v.head} {members}")
    return "\n".join(lines) + "\n"
