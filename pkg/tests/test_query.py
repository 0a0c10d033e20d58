import pytest

from elcore_sim.errors import ConfigurationError
from elcore_sim.query import (AttributeCondition, LinkBound, MatchResult,
                              PivotMatcher, Query, SubQuery,
                              aggregate_results, chain_qualified_links,
                              split_query)


def ln_cond(letter="A"):
    return AttributeCondition(layer="ln", attribute="core_type",
                              op="eq", value=letter)


def make_group(index=0, count=2, extra=(), links=None):
    if links is None:
        links = tuple(LinkBound(0, 1000) for _ in range(count - 1))
    return SubQuery(index=index, count=count,
                    conditions=(ln_cond(),) + tuple(extra),
                    intra_links=links)


# -- conditions ---------------------------------------------------------------


def test_condition_eq_and_missing_attribute():
    c = ln_cond("B")
    assert c.matches({"core_type": "B"})
    assert not c.matches({"core_type": "A"})
    assert not c.matches({})


def test_condition_covers_type_reads_type_set():
    c = AttributeCondition(layer="an", attribute="covers_type",
                           op="eq", value="C")
    assert c.matches({"types": frozenset("BC")})
    assert not c.matches({"types": frozenset("AD")})
    assert not c.matches({})


def test_condition_range_scalar_and_span():
    c = AttributeCondition(layer="ln", attribute="clock_ghz",
                           op="range", lo=2.0, hi=3.0)
    assert c.matches({"clock_ghz": 2.5})
    assert not c.matches({"clock_ghz": 1.9})
    # aggregated stamps qualify when the spans overlap
    assert c.matches({"clock_ghz": (1.0, 2.2)})
    assert not c.matches({"clock_ghz": (3.5, 4.0)})
    open_ended = AttributeCondition(layer="ln", attribute="l1_kb",
                                    op="range", lo=32)
    assert open_ended.matches({"l1_kb": 64})
    assert not open_ended.matches({"l1_kb": 16})


def test_condition_unknown_op_raises():
    c = AttributeCondition(layer="ln", attribute="x", op="approx", value=1)
    with pytest.raises(ConfigurationError):
        c.matches({"x": 1})


def test_link_bound():
    b = LinkBound(10, 20)
    assert b.contains(10) and b.contains(20)
    assert not b.contains(9) and not b.contains(21)
    with pytest.raises(ConfigurationError):
        LinkBound(5, 4).validate()
    with pytest.raises(ConfigurationError):
        LinkBound(-1, 4).validate()


# -- sub-queries --------------------------------------------------------------


def test_subquery_layer_helpers():
    an = AttributeCondition(layer="an", attribute="covers_type",
                            op="eq", value="A")
    sn = AttributeCondition(layer="sn", attribute="bucket:A",
                            op="range", lo=2, hi=3)
    sub = SubQuery(index=0, count=1, conditions=(ln_cond(), an, sn))
    assert sub.conds_for("ln") == (ln_cond(),)
    assert sub.conds_for("an") == (an,)
    assert sub.start_layer() == "sn"
    assert sub.core_type_letter == "A"
    no_sn = SubQuery(index=0, count=1, conditions=(ln_cond(), an))
    assert no_sn.start_layer() == "an"
    ln_only = SubQuery(index=0, count=1, conditions=(ln_cond(),))
    assert ln_only.start_layer() == "ln"


def test_subquery_comm_bound_tightens():
    sub = make_group(count=3, links=(LinkBound(5, 300), LinkBound(10, 200)))
    assert sub.comm_bound() == LinkBound(10, 200)
    assert make_group(count=1, links=()).comm_bound() is None


def test_subquery_validation():
    with pytest.raises(ConfigurationError):
        SubQuery(index=0, count=0, conditions=(ln_cond(),)).validate()
    no_ln = SubQuery(index=0, count=1, conditions=(
        AttributeCondition(layer="an", attribute="covers_type",
                           op="eq", value="A"),))
    with pytest.raises(ConfigurationError):
        no_ln.validate()
    ln_range_only = SubQuery(index=0, count=1, conditions=(
        AttributeCondition(layer="ln", attribute="clock_ghz",
                           op="range", lo=1.0),))
    with pytest.raises(ConfigurationError):
        ln_range_only.validate()  # no core_type condition
    with pytest.raises(ConfigurationError):
        SubQuery(index=0, count=1, conditions=(ln_cond(),),
                 mode="fuzzy").validate()


def test_query_validation_and_split():
    q = Query(query_id=1, groups=(make_group(0), make_group(1)),
              inter_links=((0, 1, LinkBound(0, 100)),))
    parts = split_query(q)
    assert [(sub.index, layer) for sub, layer in parts] == [(0, "ln"), (1, "ln")]
    with pytest.raises(ConfigurationError):
        Query(query_id=2, groups=()).validate()
    with pytest.raises(ConfigurationError):
        Query(query_id=3, groups=(make_group(0),),
              inter_links=((0, 1, LinkBound()),)).validate()
    with pytest.raises(ConfigurationError):
        Query(query_id=4, groups=(make_group(0), make_group(1)),
              inter_links=((1, 1, LinkBound()),)).validate()
    assert q.has_layer("ln") and not q.has_layer("sn")


# -- pivot matching -----------------------------------------------------------


def scripted_latency(table):
    def lat(a, b):
        return table[frozenset((a, b))]
    return lat


def test_pivot_matcher_follows_bound():
    # pivot 1; 2 joins; 3 too close; 4 too far switches; 5 joins 4
    table = {frozenset((1, 2)): 50, frozenset((1, 3)): 5,
             frozenset((1, 4)): 500, frozenset((4, 5)): 60}
    m = PivotMatcher(target=3, bound=LinkBound(10, 100),
                     latency_ns=scripted_latency(table))
    assert [m.offer(c) for c in (1, 2, 3, 4, 5)] == \
        ["pivot", "accept", "ignore_min", "switch", "accept"]
    assert m.pivot == 4
    assert m.log[-1] == (5, "accept")
    assert m.result() == [4, 5]  # final ties with best, final preferred


def test_pivot_matcher_keeps_larger_earlier_selection():
    table = {frozenset((1, 2)): 50, frozenset((1, 3)): 50,
             frozenset((1, 9)): 999}
    m = PivotMatcher(target=5, bound=LinkBound(0, 100),
                     latency_ns=scripted_latency(table))
    for c in (1, 2, 3, 9):
        m.offer(c)
    assert m.selected == [9]
    assert m.result() == [1, 2, 3]


def test_pivot_matcher_full_and_unbounded():
    m = PivotMatcher(target=2, bound=None, latency_ns=lambda a, b: 0)
    assert m.offer(7) == "pivot"
    assert m.offer(8) == "accept"
    assert m.satisfied
    assert m.offer(9) == "full"
    assert m.result() == [7, 8]
    with pytest.raises(ConfigurationError):
        PivotMatcher(target=-1, bound=None, latency_ns=lambda a, b: 0)


def test_pivot_matcher_seed_members():
    m = PivotMatcher(target=3, bound=LinkBound(0, 100),
                     latency_ns=lambda a, b: 10, seed_members=(4, 5))
    assert m.pivot == 4
    m.offer(6)
    assert m.result() == [4, 5, 6]


def test_chain_qualified_links():
    def lat(a, b):
        return abs(a - b) * 100
    links = (LinkBound(0, 150), LinkBound(0, 150))
    assert chain_qualified_links([1, 2, 3], links, lat) == 2
    assert chain_qualified_links([1, 3, 4], links, lat) == 1  # 200 > 150
    assert chain_qualified_links([1], links, lat) == 0
    assert chain_qualified_links([], links, lat) == 0
    assert chain_qualified_links([1, 2, 3, 4], (LinkBound(0, 150),), lat) == 1


# -- aggregation --------------------------------------------------------------


def test_aggregate_results_counts_terms():
    q = Query(query_id=7,
              groups=(make_group(0, count=2), make_group(1, count=1, links=())),
              inter_links=((0, 1, LinkBound(0, 1000)),))
    stamps = {
        10: {"core_type": "A"}, 11: {"core_type": "B"},
        20: {"core_type": "A"},
    }

    def lat(a, b):
        return 100

    res = aggregate_results(q, [[10, 11], [20]], lat, stamps.__getitem__,
                            messages=9, elapsed_ns=12345)
    assert isinstance(res, MatchResult)
    assert res.messages == 9 and res.latency_ns == 12345
    g0, g1 = res.terms.groups
    assert g0.qualified_attrs == (1, 0)
    assert g0.qualified_links == 1
    assert g0.requested == 2 and g0.conditions_per_resource == 1
    assert g1.qualified_attrs == (1,)
    assert res.terms.qualified_inter_links == 1
    assert res.terms.inter_link_count == 1


def test_aggregate_results_empty_group_leaves_gamma():
    q = Query(query_id=8, groups=(make_group(0, count=1, links=()),
                                  make_group(1, count=1, links=())),
              inter_links=((0, 1, LinkBound(0, 1000)),))
    res = aggregate_results(q, [[10], []], lambda a, b: 0,
                            lambda rid: {"core_type": "A"})
    assert res.terms.qualified_inter_links == 0
    assert res.terms.groups[1].qualified_attrs == ()


def test_aggregate_results_rejects_overfull_selection():
    q = Query(query_id=9, groups=(make_group(0, count=1, links=()),))
    with pytest.raises(ConfigurationError):
        aggregate_results(q, [[1, 2]], lambda a, b: 0,
                          lambda rid: {"core_type": "A"})


def test_match_result_requires_one_selection_per_group():
    q = Query(query_id=10, groups=(make_group(0),))
    with pytest.raises(ConfigurationError):
        MatchResult(q, [[1], [2]], messages=0, latency_ns=0)
