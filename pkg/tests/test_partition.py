import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geoseg.cloud import PointCloud, bbox_diagonal, graph_from_edges
from geoseg.partition import (PartitionProblem, PartitionResult, brute_force_partition,
                              component_means, cut_pursuit, dense_relabel, diameter_split,
                              enforce_diameter_cap, partition_cloud, partition_energy)
from oracles import chain_partitions, connected, naive_energy


def random_connected_problem(rng, n, lam, c=1, extra=None):
    """Random spanning tree plus extra edges, weights in [0.5, 1.5]."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    extra = rng.integers(0, n + 1) if extra is None else extra
    for _ in range(extra):
        i, j = rng.choice(n, 2, replace=False)
        edges.append((int(i), int(j)))
    g = graph_from_edges(n, edges, rng.uniform(0.5, 1.5, len(edges)))
    return PartitionProblem(g, rng.random((n, c)), lam)


def chain(features, lam, w=None):
    n = len(features)
    edges = [(i, i + 1) for i in range(n - 1)]
    return PartitionProblem(graph_from_edges(n, edges, w), np.asarray(features, float), lam)


def single_component_threshold(problem):
    f = problem.features
    return float(np.sum((f - f.mean(axis=0)) ** 2)) / problem.graph.weights.min()


# ---------------------------------------------------------------- energy


def test_energy_zero_when_each_point_alone():
    p = chain([1.0, 5.0, -2.0], 0.0)
    assert partition_energy(p, [0, 1, 2], [[1.0], [5.0], [-2.0]]) == 0.0


def test_energy_two_points_fused():
    p = chain([0.0, 2.0], 7.0)
    assert partition_energy(p, [0, 0], [[1.0]]) == 2.0


def test_energy_matches_naive_loops():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = random_connected_problem(rng, 8, rng.uniform(0, 3), c=3)
        comp = rng.integers(0, 4, 8)
        comp = dense_relabel(comp)
        vals = rng.normal(size=(comp.max() + 1, 3))
        want = naive_energy(p.features, p.graph.edges, p.graph.weights, p.lam, comp, vals)
        assert partition_energy(p, comp, vals) == pytest.approx(want, rel=1e-12)


def test_energy_dimension_mismatch():
    p = chain([0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        partition_energy(p, [0, 0], np.zeros((1, 2)))
    with pytest.raises(ValueError):
        partition_energy(p, [0, 1, 1], np.zeros((2, 1)))


@given(st.integers(0, 2 ** 16))
def test_energy_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    p = random_connected_problem(rng, 7, 1.0)
    comp = dense_relabel(rng.integers(0, 3, 7))
    m = comp.max() + 1
    perm = rng.permutation(m)
    vals = component_means(p.features, comp)
    relabeled = perm[comp]
    vals2 = np.empty_like(vals)
    vals2[perm] = vals
    assert partition_energy(p, comp, vals) == pytest.approx(partition_energy(p, relabeled, vals2))


# ---------------------------------------------------------------- brute force


def test_brute_force_single_point():
    p = PartitionProblem(graph_from_edges(1, []), np.array([[3.0]]), 1.0)
    r = brute_force_partition(p)
    assert r.component.tolist() == [0] and r.energy == 0.0


def test_brute_force_two_points():
    assert brute_force_partition(chain([0.0, 2.0], 0.5)).component.tolist() == [0, 1]
    assert brute_force_partition(chain([0.0, 2.0], 0.5)).energy == 0.5
    r = brute_force_partition(chain([0.0, 2.0], 3.0))
    assert r.component.tolist() == [0, 0] and r.energy == 2.0


def test_brute_force_refuses_large_problems():
    with pytest.raises(ValueError):
        brute_force_partition(chain(np.zeros(11), 1.0))


def test_brute_force_agrees_with_chain_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(10):
        f = rng.random(6)
        p = chain(f, 0.3)
        best = min(naive_energy(p.features, p.graph.edges, p.graph.weights, 0.3, c,
                                component_means(p.features, np.array(c)))
                   for c in chain_partitions(6))
        assert brute_force_partition(p).energy == pytest.approx(best, abs=1e-12)


def test_brute_force_agrees_with_cut_pursuit_at_zero_lambda():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p = random_connected_problem(rng, 6, 0.0)
        assert cut_pursuit(p).energy == brute_force_partition(p).energy == 0.0


# ---------------------------------------------------------------- cut pursuit


def test_zero_lambda_gives_singletons():
    p = random_connected_problem(np.random.default_rng(3), 9, 0.0)
    r = cut_pursuit(p)
    assert r.num_components == 9 and r.energy == 0.0


def test_large_lambda_gives_one_component():
    rng = np.random.default_rng(4)
    p0 = random_connected_problem(rng, 12, 0.0, c=2)
    p = PartitionProblem(p0.graph, p0.features, 1.01 * single_component_threshold(p0))
    r = cut_pursuit(p)
    assert r.num_components == 1
    assert np.allclose(r.values[0], p.features.mean(axis=0))


def test_five_node_chain():
    # frozen from exhaustive enumeration of the 16 contiguous partitions
    p = chain([0.0, 0.0, 0.0, 10.0, 10.0], 1.0)
    r = cut_pursuit(p)
    assert dense_relabel(r.component).tolist() == [0, 0, 0, 1, 1]
    assert r.energy == pytest.approx(1.0)
    best = min(naive_energy(p.features, p.graph.edges, p.graph.weights, 1.0, c,
                            component_means(p.features, np.array(c))) for c in chain_partitions(5))
    assert best == pytest.approx(1.0)


def test_cut_pursuit_within_five_percent_of_optimum():
    rng = np.random.default_rng(5)
    for lam in (0.1, 0.5, 2.0):
        for _ in range(30):
            p = random_connected_problem(rng, int(rng.integers(2, 8)), lam)
            assert cut_pursuit(p).energy <= 1.05 * brute_force_partition(p).energy + 1e-12


def test_disconnected_graph_is_solved_per_component():
    # two chains that never touch: components can never span both
    f = np.array([0.0, 0.1, 5.0, 5.1])
    p = PartitionProblem(graph_from_edges(4, [(0, 1), (2, 3)]), f, 100.0)
    r = cut_pursuit(p)
    assert r.num_components == 2
    assert r.energy == pytest.approx(2 * 2 * 0.05 ** 2)


def check_result(p, r: PartitionResult):
    comp = r.component
    m = comp.max() + 1
    assert sorted(set(comp.tolist())) == list(range(m))
    for j in range(m):
        assert connected(np.flatnonzero(comp == j).tolist(), p.graph.edges.tolist())
    assert np.allclose(r.values, component_means(p.features, comp))
    assert r.energy == pytest.approx(partition_energy(p, comp, r.values), rel=1e-12)
    single = float(np.sum((p.features - p.features.mean(axis=0)) ** 2))
    assert r.energy <= single + 1e-9
    assert r.energy <= p.lam * p.graph.weights.sum() + 1e-9
    assert all(b < a for a, b in zip(r.trace, r.trace[1:]))


@given(st.integers(0, 2 ** 20), st.sampled_from([0.05, 0.3, 1.0, 4.0]))
def test_cut_pursuit_invariants(seed, lam):
    rng = np.random.default_rng(seed)
    p = random_connected_problem(rng, int(rng.integers(2, 40)), lam, c=int(rng.integers(1, 4)))
    check_result(p, cut_pursuit(p))


@given(st.integers(0, 2 ** 20))
def test_means_are_optimal_for_fixed_assignment(seed):
    rng = np.random.default_rng(seed)
    p = random_connected_problem(rng, 15, 0.3, c=2)
    r = cut_pursuit(p)
    bumped = r.values + rng.normal(scale=1e-3, size=r.values.shape)
    assert partition_energy(p, r.component, bumped) >= r.energy


def test_cut_pursuit_on_point_cloud():
    rng = np.random.default_rng(6)
    floor = np.c_[rng.random((300, 2)) * 2, np.zeros(300)]
    wall = np.c_[rng.random(300) * 2, np.zeros(300), rng.random(300) * 2]
    cloud = PointCloud(np.vstack([floor, wall]) + rng.normal(scale=1e-3, size=(600, 3)))
    problem, r = partition_cloud(cloud, lam=0.2)
    check_result(problem, r)
    side = np.repeat([0, 1], 300)
    counts = np.zeros((r.num_components, 2))
    np.add.at(counts, (r.component, side), 1)
    # components follow the two surfaces except near the seam
    assert counts.max(axis=1).sum() / 600 >= 0.95


# ---------------------------------------------------------------- diameter cap


def strip(n=50):
    x = np.linspace(0, 0.5, n)
    return np.c_[x, np.zeros(n), np.zeros(n)]


def test_cap_identity_when_small():
    pts = np.random.default_rng(0).random((20, 3)) * 0.1
    r = PartitionResult(np.zeros(20, np.int64), np.zeros((1, 1)), 0.0)
    assert enforce_diameter_cap(r, PointCloud(pts), 1.0) is r


def test_cap_splits_strip_in_two():
    pts = strip()
    r = PartitionResult(np.zeros(len(pts), np.int64), np.zeros((1, 1)), 0.0)
    out = enforce_diameter_cap(r, PointCloud(pts), 0.25 * math.sqrt(3))
    assert out.num_components == 2
    assert set(out.component[pts[:, 0] < 0.25].tolist()) == {0}
    assert set(out.component[pts[:, 0] >= 0.25].tolist()) == {1}


def test_cap_recomputes_means_with_problem():
    pts = strip(20)
    p = chain(np.arange(20.0), 1.0)
    r = cut_pursuit(PartitionProblem(p.graph, p.features, 1e6))
    out = enforce_diameter_cap(r, PointCloud(pts), 0.25 * math.sqrt(3), p)
    assert np.allclose(out.values, component_means(p.features, out.component))
    assert out.energy == pytest.approx(partition_energy(p, out.component, out.values))


def test_cap_rejects_nonpositive():
    with pytest.raises(ValueError):
        diameter_split(strip(), np.zeros(50, np.int64), 0.0)


def test_cap_audit_on_random_scenes():
    rng = np.random.default_rng(7)
    for _ in range(10):
        pts = rng.random((400, 3)) * rng.uniform(0.5, 3, 3)
        comp = dense_relabel(rng.integers(0, 5, 400))
        cap = rng.uniform(0.2, 1.0)
        groups, _ = diameter_split(pts, comp, cap)
        cell = cap / math.sqrt(3)
        for g in np.unique(groups):
            members = groups == g
            assert len(set(comp[members].tolist())) == 1
            assert bbox_diagonal(pts[members]) <= cap + cell * math.sqrt(3) + 1e-12
