"""Query model: requested resource groups, matching rules, result scoring.

A query asks for one or more groups of homogeneous resources.  Each
group carries per-resource attribute conditions tagged with the overlay
layer able to evaluate them, intra-group communication bounds, and the
query may bind groups together with inter-group latency bounds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .errors import ConfigurationError
from .metrics import GroupTerms, RaaTerms

Layer = str  # "ln" | "an" | "sn"
LAYERS: tuple[Layer, ...] = ("ln", "an", "sn")


@dataclass(frozen=True)
class AttributeCondition:
    layer: Layer
    attribute: str
    op: str  # "eq" | "range"
    value: object = None
    lo: float | None = None
    hi: float | None = None

    def matches(self, stamp: Mapping[str, object]) -> bool:
        if self.attribute == "covers_type":
            types = stamp.get("types", frozenset())
            return self.value in types  # type: ignore[operator]
        got = stamp.get(self.attribute)
        if got is None:
            return False
        if self.op == "eq":
            return got == self.value
        if self.op == "range":
            lo = -float("inf") if self.lo is None else self.lo
            hi = float("inf") if self.hi is None else self.hi
            if isinstance(got, tuple):  # aggregated (min, max) range stamps
                return not (got[1] < lo or got[0] > hi)
            return lo <= got <= hi  # type: ignore[operator]
        raise ConfigurationError(f"unknown condition op {self.op!r}")


@dataclass(frozen=True)
class LinkBound:
    min_ns: int = 0
    max_ns: int = 150_000

    def contains(self, latency_ns: int) -> bool:
        return self.min_ns <= latency_ns <= self.max_ns

    def validate(self) -> None:
        if self.min_ns < 0 or self.max_ns < self.min_ns:
            raise ConfigurationError("link bound must satisfy 0 <= min <= max")


@dataclass(frozen=True)
class SubQuery:
    index: int
    count: int
    conditions: tuple[AttributeCondition, ...]
    intra_links: tuple[LinkBound, ...] = ()
    mode: str = "exact"  # "exact" | "similar"

    def conds_for(self, layer: Layer) -> tuple[AttributeCondition, ...]:
        return tuple(c for c in self.conditions if c.layer == layer)

    @property
    def core_type_letter(self) -> str:
        for c in self.conditions:
            if c.layer == "ln" and c.attribute == "core_type" and c.op == "eq":
                return str(c.value)
        raise ConfigurationError("sub-query lacks a core_type condition")

    def comm_bound(self) -> LinkBound | None:
        """Tightest communication vicinity implied by the intra links."""
        if not self.intra_links:
            return None
        lo = max(b.min_ns for b in self.intra_links)
        hi = min(b.max_ns for b in self.intra_links)
        return LinkBound(lo, hi)

    def start_layer(self) -> Layer:
        for layer in ("sn", "an", "ln"):
            if self.conds_for(layer):
                return layer
        raise ConfigurationError("sub-query has no conditions")

    def validate(self) -> None:
        if self.count < 1:
            raise ConfigurationError("sub-query count must be positive")
        if not self.conds_for("ln"):
            raise ConfigurationError("sub-query needs at least one ln condition")
        self.core_type_letter
        for b in self.intra_links:
            b.validate()
        if self.mode not in ("exact", "similar"):
            raise ConfigurationError(f"unknown matching mode {self.mode!r}")


@dataclass(frozen=True)
class Query:
    query_id: int
    groups: tuple[SubQuery, ...]
    inter_links: tuple[tuple[int, int, LinkBound], ...] = ()
    mode: str = "exact"

    def validate(self) -> None:
        if not self.groups:
            raise ConfigurationError("query must request at least one group")
        for g in self.groups:
            g.validate()
        for ga, gb, bound in self.inter_links:
            if not (0 <= ga < len(self.groups) and 0 <= gb < len(self.groups)):
                raise ConfigurationError("inter-group link references unknown group")
            if ga == gb:
                raise ConfigurationError("inter-group link must join two groups")
            bound.validate()

    def has_layer(self, layer: Layer) -> bool:
        return any(g.conds_for(layer) for g in self.groups)


def split_query(query: Query) -> list[tuple[SubQuery, Layer]]:
    """Validate and split a query into sub-queries with their start layer."""
    query.validate()
    return [(g, g.start_layer()) for g in query.groups]


class PivotMatcher:
    """Streams candidates into a selection anchored on a pivot resource.

    The first match becomes the pivot.  A later candidate closer than
    the minimum bound is ignored; one farther than the maximum bound
    replaces the whole selection (pivot switch); anything else joins.
    One pass over the stream; the largest selection seen wins, with the
    final one preferred on ties so its reservations stay live.
    """

    def __init__(self, target: int, bound: LinkBound | None,
                 latency_ns: Callable[[int, int], int],
                 seed_members: Iterable[int] = ()):
        if target < 0:
            raise ConfigurationError("matcher target must be non-negative")
        self.target = target
        self.bound = bound
        self.latency_ns = latency_ns
        self.selected: list[int] = list(seed_members)
        self.best: list[int] = []
        self.log: list[tuple[int, str]] = []

    @property
    def pivot(self) -> int | None:
        return self.selected[0] if self.selected else None

    @property
    def satisfied(self) -> bool:
        return len(self.selected) >= self.target

    def offer(self, candidate: int) -> str:
        if self.satisfied:
            action = "full"
        elif not self.selected:
            self.selected.append(candidate)
            action = "pivot"
        else:
            lat = self.latency_ns(candidate, self.selected[0])
            if self.bound is None:
                self.selected.append(candidate)
                action = "accept"
            elif lat < self.bound.min_ns:
                action = "ignore_min"
            elif lat > self.bound.max_ns:
                if len(self.selected) >= len(self.best):
                    self.best = list(self.selected)
                self.selected = [candidate]
                action = "switch"
            else:
                self.selected.append(candidate)
                action = "accept"
        self.log.append((candidate, action))
        return action

    def result(self) -> list[int]:
        if len(self.selected) >= len(self.best):
            return list(self.selected)
        return list(self.best)


def chain_qualified_links(members: list[int], links: tuple[LinkBound, ...],
                          latency_ns: Callable[[int, int], int]) -> int:
    """Qualified intra-group links, binding link j to members j and j+1."""
    usable = min(len(links), max(0, len(members) - 1))
    good = 0
    for j in range(usable):
        if links[j].contains(latency_ns(members[j], members[j + 1])):
            good += 1
    return good


@dataclass
class MatchResult:
    query: Query
    selections: list[list[int]]        # resource ids per group
    messages: int
    latency_ns: int
    terms: RaaTerms = field(init=False)

    def __post_init__(self):
        if len(self.selections) != len(self.query.groups):
            raise ConfigurationError("one selection list per group required")


def aggregate_results(query: Query, selections: list[list[int]],
                      latency_ns: Callable[[int, int], int],
                      core_stamp: Callable[[int], Mapping[str, object]],
                      messages: int = 0, elapsed_ns: int = 0) -> MatchResult:
    """Combine per-group selections into a scored result.

    Inter-group links are evaluated between the first selected members
    (the pivots) of the two groups; links touching an empty group stay
    unqualified.
    """
    result = MatchResult(query, selections, messages, elapsed_ns)
    groups = []
    for sub, sel in zip(query.groups, selections):
        if len(sel) > sub.count:
            raise ConfigurationError("selection exceeds requested count")
        phis = []
        for rid in sel:
            stamp = core_stamp(rid)
            phis.append(sum(1 for c in sub.conditions if c.matches(stamp)))
        groups.append(GroupTerms(
            requested=sub.count,
            conditions_per_resource=len(sub.conditions),
            link_count=len(sub.intra_links),
            qualified_attrs=tuple(phis),
            qualified_links=chain_qualified_links(sel, sub.intra_links, latency_ns),
        ))
    gamma = 0
    for ga, gb, bound in query.inter_links:
        sa, sb = selections[ga], selections[gb]
        if sa and sb and bound.contains(latency_ns(sa[0], sb[0])):
            gamma += 1
    result.terms = RaaTerms(
        inter_link_count=len(query.inter_links),
        qualified_inter_links=gamma,
        groups=tuple(groups),
    )
    return result
