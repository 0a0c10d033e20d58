"""Forwarding strategies for the discovery walk.

Every strategy shares the same topology, clustering, pool handling and
accounting; the only degrees of freedom are how many overlay layers are
built, how the next provider is picked, and whether a visited provider
is scanned point-to-point or by broadcasting to its ring.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import ConfigurationError
from .overlay import Dpt
from .query import SubQuery


@dataclass(frozen=True)
class Strategy:
    name: str
    layers: int            # 3: anycast + guided walk; 2: flat provider layer
    sn_records: bool       # probability records extended with node-level info
    guidance: str          # "dpt" | "random"
    broadcast: bool        # scan by broadcasting to every ring member
    stamp_informed: bool   # probability records initialized from stamps
    sn_blind: bool         # tables never learn node-level refusal causes

    def record_key(self, sub: SubQuery) -> tuple[str, str]:
        """Probability record consulted for a sub-query.

        Strategies with extended records steer node-level conditioned
        queries by the node-level record; everything else uses the
        plain resource-type record, which is also what makes the
        type-record-only walker ignore node-level conditions.
        """
        letter = sub.core_type_letter
        if self.sn_records and sub.conds_for("sn"):
            return ("node_type", letter)
        return ("type", letter)


STRATEGIES: dict[str, Strategy] = {
    "elcore": Strategy("elcore", layers=3, sn_records=False,
                       guidance="dpt", broadcast=False,
                       stamp_informed=True, sn_blind=False),
    "elcore_nac": Strategy("elcore_nac", layers=2, sn_records=True,
                           guidance="dpt", broadcast=False,
                           stamp_informed=True, sn_blind=False),
    "prw": Strategy("prw", layers=2, sn_records=False,
                    guidance="dpt", broadcast=False,
                    stamp_informed=False, sn_blind=True),
    "frw": Strategy("frw", layers=2, sn_records=False,
                    guidance="random", broadcast=False,
                    stamp_informed=False, sn_blind=True),
    "broadwalk": Strategy("broadwalk", layers=2, sn_records=False,
                          guidance="random", broadcast=True,
                          stamp_informed=False, sn_blind=True),
}


def get_strategy(name: str) -> Strategy:
    try:
        return STRATEGIES[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown strategy {name!r}; pick one of {sorted(STRATEGIES)}")


def frw_forward(neighbors: tuple[int, ...], visited: set[int],
                rng: random.Random) -> int | None:
    """Uniform pick among unvisited neighbors; None when exhausted."""
    options = [n for n in neighbors if n not in visited]
    if not options:
        return None
    return options[rng.randrange(len(options))]


def prw_forward(dpt: Dpt, sub: SubQuery, visited: set[int]) -> int | None:
    """Probability-guided pick using the plain resource-type record."""
    return dpt.select_next(("type", sub.core_type_letter), visited)


def broadwalk_step(an_qualifies: bool, ring_members: list[int],
                   neighbors: tuple[int, ...], visited: set[int],
                   rng: random.Random) -> tuple[str, object]:
    """Broadcast at a provider that satisfies the provider-level
    conditions, otherwise forward to a random unvisited neighbor."""
    if an_qualifies:
        return ("broadcast", list(ring_members))
    return ("forward", frw_forward(neighbors, visited, rng))
