import math
import random

import pytest

from elcore_sim.errors import ConfigurationError
from elcore_sim.overlay import Dpt
from elcore_sim.query import AttributeCondition, SubQuery
from elcore_sim.strategies import (STRATEGIES, broadwalk_step, frw_forward,
                                   get_strategy, prw_forward)


def sub_with(letter="A", sn=False):
    conds = [AttributeCondition(layer="ln", attribute="core_type",
                                op="eq", value=letter)]
    if sn:
        conds.append(AttributeCondition(layer="sn",
                                        attribute=f"bucket:{letter}",
                                        op="range", lo=2, hi=3))
    return SubQuery(index=0, count=1, conditions=tuple(conds))


def test_registry_flags():
    assert sorted(STRATEGIES) == ["broadwalk", "elcore", "elcore_nac",
                                  "frw", "prw"]
    e = STRATEGIES["elcore"]
    assert (e.layers, e.sn_records, e.guidance, e.broadcast) == \
        (3, False, "dpt", False)
    assert e.stamp_informed and not e.sn_blind
    nac = STRATEGIES["elcore_nac"]
    assert (nac.layers, nac.sn_records, nac.guidance) == (2, True, "dpt")
    assert nac.stamp_informed and not nac.sn_blind
    for name in ("prw", "frw", "broadwalk"):
        s = STRATEGIES[name]
        assert s.layers == 2 and not s.sn_records
        assert not s.stamp_informed and s.sn_blind
    assert STRATEGIES["prw"].guidance == "dpt"
    assert STRATEGIES["frw"].guidance == "random"
    assert STRATEGIES["broadwalk"].broadcast
    assert not STRATEGIES["frw"].broadcast


def test_get_strategy():
    assert get_strategy("frw") is STRATEGIES["frw"]
    with pytest.raises(ConfigurationError):
        get_strategy("dijkstra")


def test_record_key_depends_on_records_and_conditions():
    plain, extended = STRATEGIES["prw"], STRATEGIES["elcore_nac"]
    ln_only = sub_with("B")
    node_conditioned = sub_with("B", sn=True)
    assert plain.record_key(ln_only) == ("type", "B")
    assert plain.record_key(node_conditioned) == ("type", "B")
    assert extended.record_key(ln_only) == ("type", "B")
    assert extended.record_key(node_conditioned) == ("node_type", "B")


def test_frw_is_uniform_over_unvisited():
    neighbors = (1, 2, 3, 4, 5)
    rng = random.Random(99)
    n = 10_000
    counts = {v: 0 for v in neighbors}
    for _ in range(n):
        counts[frw_forward(neighbors, {3}, rng)] += 1
    assert counts[3] == 0
    k = len(neighbors) - 1
    p = 1 / k
    sigma = math.sqrt(n * p * (1 - p))
    for v in (1, 2, 4, 5):
        assert abs(counts[v] - n * p) <= 3 * sigma
    assert frw_forward(neighbors, set(neighbors), rng) is None
    assert frw_forward((), set(), rng) is None


def test_prw_select_equals_plain_dpt_walk():
    """Without node-level records both walkers consult the same record,
    so identical table states produce identical hop sequences."""
    sub = sub_with("C")
    key = STRATEGIES["prw"].record_key(sub)
    assert key == STRATEGIES["elcore_nac"].record_key(sub)
    a = Dpt(owner=0, neighbors=(1, 2, 3), record_keys=[key])
    b = Dpt(owner=0, neighbors=(1, 2, 3), record_keys=[key])
    for dpt in (a, b):
        dpt.update(key, 2, success=True)
        dpt.update(key, 3, success=False)
    visited: set[int] = set()
    for _ in range(3):
        x = prw_forward(a, sub, visited)
        y = b.select_next(key, visited)
        assert x == y
        if x is None:
            break
        visited.add(x)
    assert prw_forward(a, sub, {1, 2, 3}) is None


def test_broadwalk_broadcasts_at_qualified_provider():
    rng = random.Random(1)
    members = list(range(100, 112))
    kind, payload = broadwalk_step(True, members, (1, 2), set(), rng)
    assert kind == "broadcast"
    assert payload == members and len(payload) == 12
    kind, payload = broadwalk_step(False, members, (1, 2), {1}, rng)
    assert kind == "forward"
    assert payload == 2
    kind, payload = broadwalk_step(False, members, (1, 2), {1, 2}, rng)
    assert (kind, payload) == ("forward", None)
