import pytest

from elcore_sim.clustering import ClusteringParams, cluster_system
from elcore_sim.topology import LatencyModel, SystemParams, generate_system


@pytest.fixture(scope="session")
def small_params():
    # 4 nodes x 2 chips x 8 cores = 64 cores, every type present
    return SystemParams(nodes=4, chips_per_node=2, cores_per_chip=8,
                        type_a_count=16)


@pytest.fixture(scope="session")
def small_topo(small_params):
    return generate_system(small_params, seed=7)


@pytest.fixture(scope="session")
def small_vnodes(small_topo):
    return cluster_system(small_topo, ClusteringParams(eta=8, lambda_ns=100),
                          seed=7)


@pytest.fixture(scope="session")
def table1_topo():
    # 2000-core layout used by the accuracy runs
    params = SystemParams(nodes=125, chips_per_node=2, cores_per_chip=8,
                          type_a_count=400,
                          latency=LatencyModel(delta_big_ns=100_000))
    return generate_system(params, seed=1)


@pytest.fixture(scope="session")
def table1_vnodes(table1_topo):
    return cluster_system(table1_topo, ClusteringParams(eta=8, lambda_ns=100),
                          seed=1)
