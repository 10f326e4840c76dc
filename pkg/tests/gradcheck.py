"""Finite-difference harness for the embedder and the loss, shared by unit and acceptance tests."""
from __future__ import annotations

import numpy as np

from oracles import central_difference
from superpart.cloud import PointCloud, build_knn
from superpart.embed import EmbedderConfig, backward_batch, forward_batch, init_params, make_batch
from superpart.graph import AdjacencyGraph, classify_edges
from superpart.loss import contrastive_loss

KINK_MARGIN = 1e-4
SMALL = dict(d=2, m=3, stn_conv=(4, 8), stn_fc=(8, 4), lpe_conv=(8, 8), lpe_fc=(8, 4))


def tensor_rel_error(analytic: dict, numeric: dict) -> float:
    """Largest per-tensor ``||a - n|| / max(||a||, ||n||)``; tensors with negligible gradient use the global scale."""
    scale = np.sqrt(sum(float(np.sum(v * v)) for v in analytic.values()))
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        den = max(np.linalg.norm(a), np.linalg.norm(n), 1e-3 * scale, 1e-12)
        worst = max(worst, float(np.linalg.norm(a - n) / den))
    return worst


def _relu_margin(params, cache) -> float:
    """Smallest |pre-activation| over every hidden layer."""
    m = np.inf
    for key, h in cache.items():
        name = key[:-3]
        if key.endswith(".in") and name + ".mask" in cache:
            z = h @ params.tensors[name + ".W"] + params.tensors[name + ".b"]
            m = min(m, float(np.min(np.abs(z))))
    return m


def _layer_output(params, cache, name):
    h = cache[name + ".in"]
    a = np.maximum(h @ params.tensors[name + ".W"] + params.tensors[name + ".b"], 0.0)
    if name + ".norm" not in cache:
        return a
    xhat = cache[name + ".norm"][2]
    return xhat * params.tensors[name + ".gamma"] + params.tensors[name + ".beta"]


def _pool_gap(h: np.ndarray) -> float:
    """Gap between each channel's maximum and its next strictly smaller value.

    Exact ties are harmless: tied rows share values and derivatives.
    """
    s = np.sort(h, axis=1)
    top = s[:, -1:, :]
    below = np.where(s < top, s, -np.inf).max(axis=1)
    return float(np.min(top[:, 0, :] - below))


def random_embedder_instance(rng, norm: str):
    """Small cloud, batch and params whose forward pass stays clear of every kink."""
    cfg = EmbedderConfig(norm=norm, groups=4, **SMALL)
    pooled = (f"stn.conv{len(cfg.stn_conv) - 1}", f"mlp1.{len(cfg.lpe_conv) - 1}")
    while True:
        n = int(rng.integers(5, 9))
        cloud = PointCloud(rng.normal(size=(n, 3)), rng.random((n, cfg.d)))
        params = init_params(int(rng.integers(1 << 30)), cfg)
        for key, v in params.tensors.items():
            # move away from the symmetric initialization
            params.tensors[key] = v + rng.normal(scale=0.3, size=v.shape)
        batch = make_batch(cloud, build_knn(cloud, 4))
        train = norm == "batch"
        _, cache, _ = forward_batch(batch, params, train=train)
        margin = min([_relu_margin(params, cache)]
                     + [_pool_gap(_layer_output(params, cache, p)) for p in pooled])
        if margin >= KINK_MARGIN:
            return params, batch, train


def embedder_gradient_error(rng, norm: str, h: float = 1e-6) -> float:
    params, batch, train = random_embedder_instance(rng, norm)
    e, cache, _ = forward_batch(batch, params, train=train)
    up = rng.normal(size=e.shape)
    analytic = backward_batch(up, params, cache)
    numeric = {}
    for key, tensor in params.tensors.items():
        def f(x, key=key):
            saved = params.tensors[key]
            params.tensors[key] = x
            try:
                out = forward_batch(batch, params, train=train)[0]
            finally:
                params.tensors[key] = saved
            return float(np.sum(up * out))
        numeric[key] = central_difference(f, tensor, h)
    return tensor_rel_error(analytic, numeric)


def random_loss_instance(rng):
    """Graph with labeled objects and embeddings away from the hinge kinks."""
    while True:
        n, m = int(rng.integers(3, 12)), int(rng.integers(1, 5))
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
        if not pairs:
            continue
        g = AdjacencyGraph(n, pairs)
        obj = rng.integers(0, 3, n)
        cls = classify_edges(g, obj)
        e = rng.normal(scale=0.5, size=(n, m))
        d = np.linalg.norm(e[g.edges[cls.inter, 0]] - e[g.edges[cls.inter, 1]], axis=1)
        if len(d) and (np.min(np.abs(d - 1.0)) < 1e-3 or np.min(d) < 1e-3):
            continue
        w = rng.uniform(0.1, 5.0, len(cls.inter))
        return e, g, cls, w


def loss_gradient_error(rng, delta: float = 0.3, h: float = 1e-6) -> float:
    e, g, cls, w = random_loss_instance(rng)
    _, grad = contrastive_loss(e, g, cls, w, delta)
    num = central_difference(lambda x: contrastive_loss(x, g, cls, w, delta)[0], e, h)
    return tensor_rel_error({"e": grad}, {"e": num})
