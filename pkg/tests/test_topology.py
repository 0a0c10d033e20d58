import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elcore_sim.errors import ConfigurationError
from elcore_sim.topology import (CORE_ATTRS, BUCKET_EDGES, CoreType,
                                 LatencyModel, SystemParams, bucket_of,
                                 chip_stamp, dor_hops, generate_system,
                                 mesh_dims_for, node_stamp)


def test_core_attrs_cover_all_types():
    assert set(CORE_ATTRS) == set(CoreType)
    for attrs in CORE_ATTRS.values():
        names = [k for k, _ in attrs.as_stamp()]
        assert names == ["clock_ghz", "l1_kb", "l2_kb", "cache_line_b",
                         "mem_bw_gbps"]


def test_mesh_dims_product_and_compactness():
    assert mesh_dims_for(8) == (2, 2, 2)
    assert mesh_dims_for(24) in ((4, 3, 2), (3, 4, 2))
    for n in (1, 2, 6, 12, 16, 24):
        dims = mesh_dims_for(n)
        assert dims[0] * dims[1] * dims[2] == n


def test_dor_hops_manhattan_and_torus_wrap():
    dims = (6, 4, 1)
    assert dor_hops((0, 0, 0), (5, 3, 0), dims, torus=False) == 8
    assert dor_hops((0, 0, 0), (5, 0, 0), dims, torus=True) == 1
    assert dor_hops((2, 1, 0), (2, 1, 0), dims, torus=False) == 0


def test_type_a_target_honored_at_2000_cores(table1_topo):
    counts = table1_topo.type_counts()
    assert counts[CoreType.A] == 400
    assert sum(counts.values()) == 2000


def test_type_a_target_honored_at_5504_cores():
    params = SystemParams(nodes=344, chips_per_node=2, cores_per_chip=8,
                          type_a_count=1650)
    topo = generate_system(params, seed=3)
    assert topo.type_counts()[CoreType.A] == 1650


def test_chips_carry_at_most_two_types(small_topo):
    for chip, cores in enumerate(small_topo.chip_cores):
        present = {small_topo.core_type[c] for c in cores}
        assert 1 <= len(present) <= 2
        assert present <= set(small_topo.chip_pair[chip])


def test_latency_model_distances(small_topo):
    lat = small_topo.params.latency
    c0 = small_topo.chip_cores[0][0]
    same_chip = small_topo.chip_cores[0][1]
    other_chip = small_topo.chip_cores[1][0]
    other_node = small_topo.chip_cores[2][0]
    assert small_topo.latency_ns(c0, c0) == 0
    assert small_topo.latency_ns(c0, same_chip) == \
        small_topo.route_hops(c0, same_chip) * lat.hop_latency_ns
    assert small_topo.latency_ns(c0, other_chip) == lat.delta_small_ns
    hops = int(small_topo.net_hops[0, small_topo.core_node[other_node]])
    assert small_topo.latency_ns(c0, other_node) == hops * lat.delta_big_ns


def test_latency_is_symmetric(small_topo):
    cores = [small_topo.chip_cores[i][j] for i in range(4) for j in (0, 5)]
    for a in cores:
        for b in cores:
            assert small_topo.latency_ns(a, b) == small_topo.latency_ns(b, a)


def test_transit_adds_serialization(small_topo):
    lat = small_topo.params.latency
    c0 = small_topo.chip_cores[0][0]
    far = small_topo.chip_cores[2][0]
    ser = (256 * 8 * 1_000_000_000) // lat.net_bits_per_s
    assert small_topo.transit_ns(c0, far, 256) == \
        small_topo.latency_ns(c0, far) + ser


def test_network_hops_match_bfs_oracle(small_topo):
    # reference BFS over the edge list
    n = small_topo.params.nodes
    adj = {i: set() for i in range(n)}
    for a, b in small_topo.network_edges:
        adj[a].add(b)
        adj[b].add(a)
    for src in range(n):
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        for dst in range(n):
            assert int(small_topo.net_hops[src, dst]) == dist[dst]


def test_route_hops_rejects_cross_chip(small_topo):
    a = small_topo.chip_cores[0][0]
    b = small_topo.chip_cores[1][0]
    with pytest.raises(ConfigurationError):
        small_topo.route_hops(a, b)


def test_bucket_edges():
    assert BUCKET_EDGES == (1, 4, 8)
    assert [bucket_of(c) for c in (0, 1, 3, 4, 7, 8, 16)] == \
        [0, 1, 1, 2, 2, 3, 3]


def test_node_stamp_counts_and_key(small_topo):
    stamp, key = node_stamp(small_topo, 0)
    counts = {}
    for cid in small_topo.node_cores[0]:
        letter = small_topo.core_type[cid].letter
        counts[letter] = counts.get(letter, 0) + 1
    assert stamp["types"] == frozenset(counts)
    assert key == tuple(bucket_of(counts.get(x, 0)) for x in "ABCDEF")
    for letter in "ABCDEF":
        assert stamp[f"bucket:{letter}"] == bucket_of(counts.get(letter, 0))


def test_chip_stamp_aggregates_ranges(small_topo):
    stamp = chip_stamp(small_topo, 0)
    types = {small_topo.core_type[c] for c in small_topo.chip_cores[0]}
    assert stamp["types"] == frozenset(t.letter for t in types)
    clocks = [CORE_ATTRS[t].clock_ghz for t in types]
    assert stamp["clock_ghz"] == (min(clocks), max(clocks))


def test_generation_is_deterministic(small_params):
    a = generate_system(small_params, seed=7)
    b = generate_system(small_params, seed=7)
    assert a.dump_text() == b.dump_text()
    assert a.network_edges == b.network_edges


def test_validation_rejects_bad_params():
    with pytest.raises(ConfigurationError):
        SystemParams(nodes=0).validate()
    with pytest.raises(ConfigurationError):
        SystemParams(mesh_dims=(2, 2, 3)).validate()  # product != 8
    with pytest.raises(ConfigurationError):
        SystemParams(type_a_count=100_000).validate()
    with pytest.raises(ConfigurationError):
        SystemParams(type_a_count=None, type_a_fraction=0.0).validate()
    with pytest.raises(ConfigurationError):
        # 3-hop chip diameter at 70ns/hop reaches the 200ns bus latency
        SystemParams(latency=LatencyModel(hop_latency_ns=70)).validate()


@settings(max_examples=25, deadline=None)
@given(nodes=st.integers(1, 6), seed=st.integers(0, 50))
def test_every_core_is_placed_once(nodes, seed):
    params = SystemParams(nodes=nodes, chips_per_node=2, cores_per_chip=8,
                          type_a_count=None, type_a_fraction=0.25)
    topo = generate_system(params, seed)
    seen = [cid for cores in topo.node_cores for cid in cores]
    assert sorted(seen) == list(range(params.total_cores))
    for cid in seen:
        assert topo.chip_node[topo.core_chip[cid]] == topo.core_node[cid]
