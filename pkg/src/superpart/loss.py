"""Graph-structured contrastive loss and its inter-edge weighting strategies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AdjacencyGraph, EdgeClassification, Partition, build_cross_partition

WEIGHTINGS = ("cross_partition", "seal", "proportional")


@dataclass(frozen=True)
class LossConfig:
    delta: float = 0.3
    mu_tilde: float = 5.0
    weighting: str = "cross_partition"

    def __post_init__(self):
        if not self.delta > 0 or not self.mu_tilde > 0:
            raise ValueError("delta and mu_tilde must be positive")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")


def phi(diff, delta: float = 0.3):
    """Pseudo-Huber penalty on the norm of ``diff`` (last axis)."""
    sq = np.sum(np.square(diff), axis=-1)
    return delta * (np.sqrt(sq / delta**2 + 1.0) - 1.0)


def psi(diff):
    """Hinge ``max(1 - ||diff||, 0)``."""
    return np.maximum(1.0 - np.linalg.norm(diff, axis=-1), 0.0)


def compute_inter_edge_weights(mode: str, graph: AdjacencyGraph, classification: EdgeClassification,
                               superpoints: Partition | None, object_ids: np.ndarray | None,
                               mu: float) -> np.ndarray:
    """Weight of every edge in ``classification.inter`` (same order)."""
    inter = classification.inter
    if mode == "proportional":
        return np.full(len(inter), len(classification.intra) / max(1, len(inter)))
    if mode not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {mode!r}")
    if superpoints is None or object_ids is None:
        raise ValueError(f"weighting {mode!r} requires a superpoint partition and object ids")
    if mode == "cross_partition":
        return build_cross_partition(graph, classification, superpoints, object_ids, mu).per_edge_weight

    sp = superpoints.assignment
    obj = np.asarray(object_ids)
    labeled = obj >= 0
    # majority object count per superpoint, over labeled points
    pairs = np.stack([sp[labeled], obj[labeled]], axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    majority = np.zeros(superpoints.num_superpoints, dtype=np.int64)
    np.maximum.at(majority, uniq[:, 0], counts)
    size = superpoints.sizes()
    i, j = graph.edges[inter, 0], graph.edges[inter, 1]
    same = sp[i] == sp[j]
    s = sp[i]
    trespass = size[s] - majority[s]
    return np.where(same, 1.0 + size[s] - trespass, 1.0)


def contrastive_loss(embeddings: np.ndarray, graph: AdjacencyGraph, classification: EdgeClassification,
                     weights: np.ndarray, delta: float = 0.3) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to the embeddings.

    Normalized by the number of intra plus inter edges. The hinge gradient is
    taken as zero at ``||diff|| = 0`` and for ``||diff|| >= 1``.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    intra, inter = classification.intra, classification.inter
    if len(weights) != len(inter):
        raise ValueError(f"{len(weights)} weights for {len(inter)} inter edges")
    grad = np.zeros_like(e)
    n_edges = len(intra) + len(inter)
    if n_edges == 0:
        return 0.0, grad

    ei, ej = graph.edges[intra, 0], graph.edges[intra, 1]
    d = e[ei] - e[ej]
    root = np.sqrt(np.einsum("ij,ij->i", d, d) / delta**2 + 1.0)
    intra_term = np.sum(delta * (root - 1.0))
    g = d / (delta * root)[:, None]
    np.add.at(grad, ei, g)
    np.subtract.at(grad, ej, g)

    ii, ij = graph.edges[inter, 0], graph.edges[inter, 1]
    d = e[ii] - e[ij]
    nrm = np.sqrt(np.einsum("ij,ij->i", d, d))
    active = (nrm < 1.0)
    inter_term = np.sum(weights * np.where(active, 1.0 - nrm, 0.0))
    live = active & (nrm > 0)
    coef = np.zeros(len(inter))
    coef[live] = -weights[live] / nrm[live]
    g = d * coef[:, None]
    np.add.at(grad, ii, g)
    np.subtract.at(grad, ij, g)

    return float((intra_term + inter_term) / n_edges), grad / n_edges
