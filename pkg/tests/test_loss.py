import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import loss_gradient_error
from oracles import cross_partition_weights_naive, loss_naive, random_graph
from superpart.graph import AdjacencyGraph, Partition, classify_edges
from superpart.loss import LossConfig, compute_inter_edge_weights, contrastive_loss, phi, psi


def _vec(norm, m=3):
    v = np.zeros(m)
    v[0] = norm
    return v


def test_phi_values():
    assert phi(np.zeros(4)) == 0.0
    assert phi(_vec(0.3)) == pytest.approx(0.3 * (math.sqrt(2) - 1), abs=1e-15)
    assert abs(phi(_vec(0.4)) - 0.2) <= 1e-12
    assert abs(phi(np.array([0.24, 0.32]), delta=0.3) - 0.2) <= 1e-12


def test_psi_values():
    assert psi(np.zeros(2)) == 1.0
    assert psi(_vec(1.0)) == 0.0
    assert psi(_vec(3.0)) == 0.0
    assert psi(_vec(0.5)) == 0.5


@settings(max_examples=100)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_phi_psi_ranges(xs):
    d = np.array(xs)
    assert phi(d) >= 0
    assert 0 <= psi(d) <= 1


# weighting strategies

LADDER = AdjacencyGraph(10, [(i, i + 1) for i in range(5)] + [(6, 7), (7, 8), (8, 9), (5, 6), (4, 7)])
LADDER_OBJ = np.array([0] * 6 + [1] * 4)


def test_cross_partition_weights_hand_example():
    cls = classify_edges(LADDER, LADDER_OBJ)
    w = compute_inter_edge_weights("cross_partition", LADDER, cls, Partition(np.zeros(10, dtype=int), 1),
                                   LADDER_OBJ, mu=1.0)
    np.testing.assert_allclose(w, [2.0, 2.0])


def test_seal_weight_hand_example():
    # one superpoint of 10 points, 7 of them in the majority object
    g = AdjacencyGraph(10, [(i, i + 1) for i in range(9)])
    obj = np.array([0] * 7 + [1] * 3)
    cls = classify_edges(g, obj)
    w = compute_inter_edge_weights("seal", g, cls, Partition(np.zeros(10, dtype=int), 1), obj, mu=1.0)
    np.testing.assert_array_equal(w, [8.0])


def test_seal_inter_edges_across_superpoints_weigh_one():
    g = AdjacencyGraph(4, [(0, 1), (1, 2), (2, 3)])
    obj = np.array([0, 0, 1, 1])
    w = compute_inter_edge_weights("seal", g, classify_edges(g, obj), Partition.from_labels(obj), obj, 1.0)
    np.testing.assert_array_equal(w, [1.0])


def test_proportional_weight_hand_example():
    # 9 intra and 3 inter edges
    edges = [(i, i + 1) for i in range(12)]
    obj = np.array([0] * 4 + [1] * 3 + [2] * 3 + [3] * 3)
    g = AdjacencyGraph(13, edges)
    cls = classify_edges(g, obj)
    assert (len(cls.intra), len(cls.inter)) == (9, 3)
    w = compute_inter_edge_weights("proportional", g, cls, None, obj, mu=5.0)
    np.testing.assert_array_equal(w, [3.0, 3.0, 3.0])


def test_partition_dependent_modes_need_a_partition():
    cls = classify_edges(LADDER, LADDER_OBJ)
    for mode in ("cross_partition", "seal"):
        with pytest.raises(ValueError):
            compute_inter_edge_weights(mode, LADDER, cls, None, LADDER_OBJ, 1.0)
    with pytest.raises(ValueError):
        compute_inter_edge_weights("triplet", LADDER, cls, None, LADDER_OBJ, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 8))
def test_cross_partition_mass_per_superedge(seed, mu):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    g = AdjacencyGraph(n, random_graph(rng, n, 0.2))
    obj = rng.integers(0, 3, n)
    sp = Partition.from_labels(rng.integers(0, 4, n))
    cls = classify_edges(g, obj)
    w = compute_inter_edge_weights("cross_partition", g, cls, sp, obj, mu)
    want = cross_partition_weights_naive(g.edges.tolist(), sp.assignment, obj, mu)
    np.testing.assert_allclose(w, [want[tuple(g.edges[e])] for e in cls.inter], rtol=1e-12)


# loss value

def test_zero_loss_configuration():
    # objects on a path; embeddings constant per object and unit-spaced along one axis
    g = AdjacencyGraph(9, [(i, i + 1) for i in range(8)] + [(0, 2), (3, 5)])
    obj = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    e = np.zeros((9, 4))
    e[:, 0] = obj * 1.0
    cls = classify_edges(g, obj)
    loss, grad = contrastive_loss(e, g, cls, np.full(len(cls.inter), 7.0))
    assert abs(loss) <= 1e-12
    np.testing.assert_array_equal(grad, 0.0)


def test_single_inter_edge_equal_embeddings():
    g = AdjacencyGraph(2, [(0, 1)])
    cls = classify_edges(g, np.array([0, 1]))
    loss, _ = contrastive_loss(np.ones((2, 3)) / math.sqrt(3), g, cls, np.array([2.0]))
    assert loss == 2.0


def test_single_intra_edge_value():
    g = AdjacencyGraph(2, [(0, 1)])
    cls = classify_edges(g, np.array([4, 4]))
    loss, _ = contrastive_loss(np.array([[0.0, 0.0], [0.24, 0.32]]), g, cls, np.zeros(0))
    assert abs(loss - 0.2) <= 1e-12


def test_empty_edge_set():
    g = AdjacencyGraph(3, np.zeros((0, 2)))
    loss, grad = contrastive_loss(np.ones((3, 2)), g, classify_edges(g, np.zeros(3)), np.zeros(0))
    assert loss == 0.0 and not grad.any()


def test_weight_count_must_match():
    g = AdjacencyGraph(2, [(0, 1)])
    with pytest.raises(ValueError):
        contrastive_loss(np.zeros((2, 2)), g, classify_edges(g, np.array([0, 1])), np.zeros(2))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 2.0))
def test_loss_matches_naive_loop(seed, delta):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 15))
    g = AdjacencyGraph(n, random_graph(rng, n, 0.4))
    obj = rng.integers(-1, 3, n)
    cls = classify_edges(g, obj)
    e = rng.normal(size=(n, 3))
    w = rng.uniform(0, 4, len(cls.inter))
    mu = {tuple(g.edges[k]): x for k, x in zip(cls.inter, w)}
    loss, _ = contrastive_loss(e, g, cls, w, delta)
    assert loss >= 0
    assert loss == pytest.approx(loss_naive(e, g.edges.tolist(), obj, mu, delta), rel=1e-12, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10))
def test_scaling_weights_scales_inter_term(seed, t):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    g = AdjacencyGraph(n, random_graph(rng, n, 0.5))
    obj = rng.integers(0, 3, n)
    cls = classify_edges(g, obj)
    e = rng.normal(scale=0.3, size=(n, 2))
    w = rng.uniform(0.1, 2, len(cls.inter))
    base = contrastive_loss(e, g, cls, np.zeros_like(w))[0]
    one = contrastive_loss(e, g, cls, w)[0] - base
    scaled = contrastive_loss(e, g, cls, t * w)[0] - base
    assert scaled == pytest.approx(t * one, rel=1e-9, abs=1e-12)


def test_zero_loss_requires_separation():
    g = AdjacencyGraph(2, [(0, 1)])
    cls = classify_edges(g, np.array([0, 1]))
    assert contrastive_loss(np.array([[0.0], [0.999]]), g, cls, np.array([1.0]))[0] > 0
    assert contrastive_loss(np.array([[0.0], [1.0]]), g, cls, np.array([1.0]))[0] == 0


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    assert max(loss_gradient_error(rng) for _ in range(20)) < 1e-5


def test_hinge_gradient_vanishes_at_kinks():
    g = AdjacencyGraph(2, [(0, 1)])
    cls = classify_edges(g, np.array([0, 1]))
    for e in (np.zeros((2, 2)), np.array([[0.0, 0.0], [1.0, 0.0]])):
        _, grad = contrastive_loss(e, g, cls, np.array([3.0]))
        np.testing.assert_array_equal(grad, 0.0)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(delta=0)
    with pytest.raises(ValueError):
        LossConfig(mu_tilde=-1)
    with pytest.raises(ValueError):
        LossConfig(weighting="tv")
