"""Query templates and arrival streams.

Templates build the recurring request shapes used by the experiments:
chains of same-type cores with pairwise latency bounds, and the mixed
three-group request with node-level conditions.  Arrival generation is
fully determined by the run seed.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .query import AttributeCondition, LinkBound, Query, SubQuery
from .rmc import Rmc
from .rng import substream

CHAIN_BOUND = LinkBound(min_ns=1, max_ns=150_000)  # open-left 150 us window

# process lifetime model: heavier-than-exponential tail around ~3.2 s
DURATION_SHAPE = 2.4
DURATION_SCALE_S = 3.58


def sample_weibull(rng: random.Random, scale_s: float, shape: float) -> float:
    """Process duration draw in seconds."""
    if scale_s <= 0 or shape <= 0:
        raise ConfigurationError("weibull parameters must be positive")
    return rng.weibullvariate(scale_s, shape)


def sample_exponential(rng: random.Random, mean_ms: float) -> float:
    """Inter-arrival draw in milliseconds."""
    if mean_ms <= 0:
        raise ConfigurationError("exponential mean must be positive")
    return rng.expovariate(1.0 / mean_ms)


def _type_group(index: int, letter: str, count: int,
                extra_conds: tuple[AttributeCondition, ...] = (),
                links: tuple[LinkBound, ...] | None = None) -> SubQuery:
    conds = (AttributeCondition(layer="ln", attribute="core_type",
                                op="eq", value=letter),) + extra_conds
    if links is None:
        links = tuple(CHAIN_BOUND for _ in range(max(0, count - 1)))
    return SubQuery(index=index, count=count, conditions=conds,
                    intra_links=links, mode="exact")


def chain_query(query_id: int, count: int, letter: str = "A") -> Query:
    """One group of `count` same-type cores chained by latency bounds."""
    return Query(query_id=query_id, groups=(_type_group(0, letter, count),),
                 inter_links=(), mode="exact")


def bulk_query(query_id: int, count: int, letter: str = "A") -> Query:
    """One group of `count` same-type cores, no communication bounds."""
    group = _type_group(0, letter, count, links=())
    return Query(query_id=query_id, groups=(group,), inter_links=(),
                 mode="exact")


def mixed_query(query_id: int, count_per_group: int,
                letters: tuple[str, str, str] | None = None) -> Query:
    """Three chained groups of distinct types, linked group to group.

    Each group requires providers that advertise the type and nodes in
    the top density bucket for it, which on two-chip nodes means both
    chips hold the type.  Chip stamps alone cannot settle that, so the
    node layer carries real information.  Letters rotate with the query
    id so demand spreads over every pool.
    """
    if letters is None:
        start = query_id % 6
        letters = tuple("ABCDEF"[(start + 2 * k) % 6] for k in range(3))
    groups = []
    for gi, letter in enumerate(letters):
        extra = (
            AttributeCondition(layer="an", attribute="covers_type",
                               op="eq", value=letter),
            AttributeCondition(layer="sn", attribute=f"bucket:{letter}",
                               op="range", lo=3, hi=3),
        )
        groups.append(_type_group(gi, letter, count_per_group, extra))
    inter = ((0, 1, CHAIN_BOUND), (1, 2, CHAIN_BOUND))
    return Query(query_id=query_id, groups=tuple(groups),
                 inter_links=inter, mode="exact")


TEMPLATES = {
    "s1": lambda qid: chain_query(qid, 2),
    "s2": lambda qid: chain_query(qid, 3),
    "s3": lambda qid: chain_query(qid, 5),
    "s4": lambda qid: chain_query(qid, 9),
    # per-query type rotates so every pool, frequent or rare, is exercised
    "bulk20": lambda qid: bulk_query(qid, 20, "ABCDEF"[qid % 6]),
    "mixed3x8": lambda qid: mixed_query(qid, 8),
    "mixed3x20": lambda qid: mixed_query(qid, 20),
}

SETTING_ALIASES = {"1": "s1", "2": "s2", "3": "s3", "4": "s4"}


def build_template(name: str, query_id: int) -> Query:
    name = SETTING_ALIASES.get(name, name)
    try:
        builder = TEMPLATES[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown workload template {name!r}; known: "
            f"{', '.join(sorted(TEMPLATES))}") from None
    return builder(query_id)


@dataclass(frozen=True)
class WorkloadSpec:
    template: str = "s1"
    queries: int = 100               # total (shared stream) or per requester
    interval_ms: float = 4000.0
    stream: str = "shared"           # one stream or one per requester
    arrival: str = "fixed"           # fixed spacing or exponential
    requesters: int = 0              # 0 means every instance sends

    def validate(self) -> None:
        if self.queries < 0:
            raise ConfigurationError("query count must be non-negative")
        if self.interval_ms <= 0:
            raise ConfigurationError("arrival interval must be positive")
        if self.stream not in ("shared", "per_rmc"):
            raise ConfigurationError(f"unknown stream kind {self.stream!r}")
        if self.arrival not in ("fixed", "exp"):
            raise ConfigurationError(f"unknown arrival kind {self.arrival!r}")
        if self.requesters < 0:
            raise ConfigurationError("requester count must be non-negative")
        build_template(self.template, 0)


@dataclass(frozen=True)
class Arrival:
    query_id: int
    start_ns: int
    rmc_id: int
    duration_ns: int
    query: Query = field(compare=False)


def _requester_ids(spec: WorkloadSpec, rmcs: list[Rmc], seed: int) -> list[int]:
    ids = sorted(r.rmc_id for r in rmcs)
    if spec.requesters and spec.requesters < len(ids):
        rng = substream(seed, "requesters")
        ids = sorted(rng.sample(ids, spec.requesters))
    return ids


def generate_arrivals(spec: WorkloadSpec, rmcs: list[Rmc],
                      seed: int) -> list[Arrival]:
    """Deterministic arrival list, ordered by start time."""
    spec.validate()
    requesters = _requester_ids(spec, rmcs, seed)
    if not requesters:
        return []
    pending: list[tuple[int, int]] = []  # (start_ns, rmc_id)

    def gap(rng) -> int:
        if spec.arrival == "fixed":
            return int(spec.interval_ms * 1e6)
        return max(1, int(sample_exponential(rng, spec.interval_ms) * 1e6))

    if spec.stream == "shared":
        rng = substream(seed, "arrivals")
        pick = substream(seed, "requester-pick")
        t = 0
        for _ in range(spec.queries):
            t += gap(rng)
            pending.append((t, pick.choice(requesters)))
    else:
        for rmc_id in requesters:
            rng = substream(seed, "arrivals", rmc_id)
            t = 0
            for _ in range(spec.queries):
                t += gap(rng)
                pending.append((t, rmc_id))
    pending.sort()
    durations = substream(seed, "durations")
    out = []
    for qid, (start_ns, rmc_id) in enumerate(pending):
        dur_s = sample_weibull(durations, DURATION_SCALE_S, DURATION_SHAPE)
        out.append(Arrival(
            query_id=qid,
            start_ns=start_ns,
            rmc_id=rmc_id,
            duration_ns=max(1, int(dur_s * 1e9)),
            query=build_template(spec.template, qid),
        ))
    return out
