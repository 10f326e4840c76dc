import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmp_instances import check_solution, random_instance, recovery_instance
from oracles import blocks_connected, gmp_bruteforce, random_graph
from superpart.graph import AdjacencyGraph
from superpart.gmp import (
    GMPConfig,
    augment_features,
    compiled_available,
    extract_partition,
    get_backend,
    gmp_edge_weights,
    gmp_energy,
    lambda_from_normalized,
    min_superpoint_size,
    solve_gmp,
)

BACKENDS = ["python"] + (["compiled"] if compiled_available() else [])


# hyper-parameter helpers

def test_lambda_from_normalized():
    assert lambda_from_normalized(0, 3.7) == 0
    assert lambda_from_normalized(1, 5) == 0.05
    assert lambda_from_normalized(2, 4) == 0.125
    with pytest.raises(ValueError):
        lambda_from_normalized(1, 0)


def test_min_superpoint_size():
    assert min_superpoint_size(1, 50) == 50
    assert min_superpoint_size(0.2, 50) == 33
    assert min_superpoint_size(6, 50) == 70
    assert min_superpoint_size(1e-6, 50) == 25
    for bad in (0, -1):
        with pytest.raises(ValueError):
            min_superpoint_size(bad, 50)


@settings(max_examples=100)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.integers(1, 200))
def test_min_superpoint_size_monotone(a, b, n1):
    lo, hi = min(a, b), max(a, b)
    assert n1 / 2 <= min_superpoint_size(lo, n1) <= min_superpoint_size(hi, n1)


def test_edge_weight_examples():
    g = AdjacencyGraph(3, [(0, 1), (1, 2)])
    e = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(gmp_edge_weights(e, g, 1.0, 0.5), [1.0, math.exp(-2)], rtol=1e-15)
    np.testing.assert_array_equal(gmp_edge_weights(e, g, 0.0, 0.5), [0.0, 0.0])
    with pytest.raises(ValueError):
        gmp_edge_weights(e, g, 1.0, 0.0)


def test_augment_features():
    f = augment_features(np.array([[1.0, 0.0]]), np.array([[1.0, 2.0, 3.0]]), 0.2)
    np.testing.assert_allclose(f, [[1.0, 0.0, 0.2, 0.4, 0.6]])
    np.testing.assert_array_equal(augment_features(np.ones((2, 1)), np.ones((2, 3)), 0.0)[:, 1:], 0)
    assert GMPConfig().alpha_spat == 0.2


def test_energy_examples():
    g = AdjacencyGraph(3, [(0, 1), (1, 2)])
    Y = np.array([[0.0], [1.0], [5.0]])
    w = np.array([0.25, 0.75])
    assert gmp_energy(Y, Y, g, w) == 1.0
    assert gmp_energy(Y, Y, g, np.zeros(2)) == 0.0
    one = AdjacencyGraph(1, np.zeros((0, 2)))
    assert gmp_energy(np.zeros((1, 2)), np.ones((1, 2)), one, np.zeros(0)) == 2.0
    two = AdjacencyGraph(2, [(0, 1)])
    Y2 = np.array([[0.0, 0.0], [0.6, 0.8]])
    f = np.tile(Y2.mean(axis=0), (2, 1))
    assert gmp_energy(f, Y2, two, np.array([9.0])) == pytest.approx(0.5)


def test_energy_uses_component_bookkeeping():
    # equal values in two disconnected-by-cut regions still count the cut
    g = AdjacencyGraph(3, [(0, 1), (1, 2)])
    f = np.zeros((3, 1))
    assert gmp_energy(f, f, g, np.ones(2), partition=np.array([0, 1, 0])) == 2.0


def test_extract_partition_examples():
    g = AdjacencyGraph(4, [(0, 1), (1, 2), (2, 3)])
    assert extract_partition(np.zeros((4, 2)), g).num_superpoints == 1
    assert extract_partition(np.arange(4.0)[:, None], g).num_superpoints == 4
    assert extract_partition(np.array([[0.0], [0.0], [1.0], [1.0]]), g).assignment.tolist() == [0, 0, 1, 1]


# solver examples

@pytest.mark.parametrize("backend", BACKENDS)
def test_single_vertex(backend):
    g = AdjacencyGraph(1, np.zeros((0, 2)))
    s = solve_gmp(np.array([[3.0, 4.0]]), g, np.zeros(0), backend=backend)
    np.testing.assert_array_equal(s.f, [[3.0, 4.0]])
    assert s.partition.num_superpoints == 1 and s.energy == 0


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("w", [0.0, 0.3, 10.0])
def test_identical_pair_merges(backend, w):
    g = AdjacencyGraph(2, [(0, 1)])
    s = solve_gmp(np.ones((2, 3)), g, np.array([w]), backend=backend)
    assert s.partition.num_superpoints == 1


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("w, parts", [(0.1, 2), (0.49, 2), (0.51, 1), (2.0, 1)])
def test_pair_split_threshold(backend, w, parts):
    g = AdjacencyGraph(2, [(0, 1)])
    s = solve_gmp(np.array([[0.0], [1.0]]), g, np.array([w]), backend=backend)
    assert s.partition.num_superpoints == parts
    assert s.energy == pytest.approx(min(w, 0.5))


def test_large_n_min_returns_single_component_with_warning():
    g = AdjacencyGraph(3, [(0, 1), (1, 2)])
    s = solve_gmp(np.array([[0.0], [1.0], [5.0]]), g, np.zeros(2), n_min=3)
    assert s.partition.num_superpoints == 1 and s.warning
    np.testing.assert_allclose(s.f, 2.0)


def test_solver_input_validation():
    g = AdjacencyGraph(2, [(0, 1)])
    with pytest.raises(ValueError):
        solve_gmp(np.zeros((2, 1)), g, np.array([-1.0]))
    with pytest.raises(ValueError):
        solve_gmp(np.zeros((3, 1)), g, np.array([1.0]))
    with pytest.raises(ValueError):
        GMPConfig(ramp=0)
    with pytest.raises(ValueError):
        GMPConfig(sigma=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_solver_within_five_percent_of_bruteforce(seed):
    Y, g, w = random_instance(np.random.default_rng(seed))
    s = solve_gmp(Y, g, w)
    check_solution(Y, g, w, s)
    best, _ = gmp_bruteforce(Y, g.edges.tolist(), w)
    assert s.energy <= 1.05 * best + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_exact_recovery_of_piecewise_constant_signal(seed):
    Y, g, w, truth = recovery_instance(np.random.default_rng(seed))
    s = solve_gmp(Y, g, w)
    assert s.partition.assignment.tolist() == truth.tolist()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12))
def test_small_components_are_merged(seed, n_min):
    rng = np.random.default_rng(seed)
    n = 60
    g = AdjacencyGraph(n, [(i, i + 1) for i in range(n - 1)] + [(i, i + 2) for i in range(n - 2)])
    Y = rng.normal(size=(n, 2)) * 3
    s = solve_gmp(Y, g, np.full(g.num_edges, 0.05), n_min=n_min)
    assert s.partition.sizes().min() >= n_min
    assert blocks_connected(s.partition.assignment.tolist(), g.edges.tolist(), n)


def test_disconnected_graph_never_joins_pieces():
    g = AdjacencyGraph(4, [(0, 1), (2, 3)])
    s = solve_gmp(np.zeros((4, 1)), g, np.full(2, 5.0), n_min=2)
    assert s.partition.assignment.tolist() == [0, 0, 1, 1]


def test_solver_is_deterministic():
    rng = np.random.default_rng(4)
    n = 300
    pos = rng.random((n, 3))
    from superpart.cloud import PointCloud
    from superpart.graph import build_adjacency

    g = build_adjacency(PointCloud(pos, np.zeros((n, 0))), 5)
    Y = np.concatenate([np.floor(pos * 3) / 3, 0.2 * pos], axis=1) + rng.normal(scale=0.05, size=(n, 3 + 3))
    w = np.full(g.num_edges, 0.02)
    a, b = solve_gmp(Y, g, w, n_min=5), solve_gmp(Y, g, w, n_min=5)
    assert a.partition.assignment.tolist() == b.partition.assignment.tolist()
    assert a.energy == b.energy and a.energy_history == b.energy_history


@pytest.mark.skipif(not compiled_available(), reason="compiled kernels not built")
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_backends_agree_bit_for_bit(seed, big):
    rng = np.random.default_rng(seed)
    if big:
        n = int(rng.integers(20, 120))
        g = AdjacencyGraph(n, random_graph(rng, n, 4.0 / n))
        Y = rng.normal(size=(n, 3))
        w = rng.uniform(0, 1, g.num_edges)
        n_min = int(rng.integers(1, 6))
    else:
        Y, g, w = random_instance(rng)
        n_min = 1
    a = solve_gmp(Y, g, w, n_min, backend="compiled")
    b = solve_gmp(Y, g, w, n_min, backend="python")
    assert a.partition.assignment.tolist() == b.partition.assignment.tolist()
    assert a.energy == b.energy
    assert a.energy_history == b.energy_history


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("gpu")
