"""Adjacency graphs, ground-truth edge classes, components and the cross-partition graph."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree

from .cloud import PointCloud, build_knn


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected graph stored as a sorted, deduplicated ``(E, 2)`` array with ``i < j``."""

    num_vertices: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(e):
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("self-loops are not allowed")
            e = np.sort(e, axis=1)
            e = np.unique(e, axis=0)
            if e.min() < 0 or e.max() >= self.num_vertices:
                raise ValueError("edge endpoint out of range")
        object.__setattr__(self, "edges", np.ascontiguousarray(e))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def connectivity(self) -> float:
        """Average connectivity ``|E| / |V|``."""
        return self.num_edges / self.num_vertices if self.num_vertices else 0.0

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(indptr, indices, edge_ids)`` of the symmetric adjacency, rows sorted by neighbor."""
        n, e = self.num_vertices, self.edges
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        eid = np.concatenate([np.arange(len(e)), np.arange(len(e))])
        order = np.lexsort((dst, src))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return indptr, dst[order].astype(np.int64), eid[order].astype(np.int64)

    def subgraph(self, vertices: np.ndarray) -> tuple["AdjacencyGraph", np.ndarray]:
        """Induced subgraph on ``vertices`` (relabelled 0..len-1) and the kept edge ids."""
        vertices = np.asarray(vertices, dtype=np.int64)
        remap = np.full(self.num_vertices, -1, dtype=np.int64)
        remap[vertices] = np.arange(len(vertices))
        a, b = remap[self.edges[:, 0]], remap[self.edges[:, 1]]
        keep = np.flatnonzero((a >= 0) & (b >= 0))
        return AdjacencyGraph(len(vertices), np.stack([a[keep], b[keep]], axis=1)), keep


@dataclass(frozen=True)
class EdgeClassification:
    """Edge-index sets of intra-object, inter-object and tolerance-expanded inter edges."""

    intra: np.ndarray
    inter: np.ndarray
    inter_expanded: np.ndarray


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray
    num_superpoints: int

    def __post_init__(self):
        a = np.ascontiguousarray(self.assignment, dtype=np.int64)
        if len(a) and (a.min() < 0 or a.max() != self.num_superpoints - 1):
            raise ValueError("superpoint ids must be contiguous 0..num_superpoints-1")
        object.__setattr__(self, "assignment", a)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_superpoints)

    def transitions(self, graph: AdjacencyGraph) -> np.ndarray:
        """Indices of edges whose endpoints lie in different superpoints."""
        a = self.assignment
        return np.flatnonzero(a[graph.edges[:, 0]] != a[graph.edges[:, 1]])

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "Partition":
        """Relabel arbitrary ids to 0..K-1 in order of first occurrence."""
        labels = np.asarray(labels)
        _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        return cls(rank[inv.reshape(-1)], len(first))


@dataclass
class CrossPartitionGraph:
    """Refinement of the superpoints by the objects, with weighted inter-edge superedges."""

    components: list
    component_of: np.ndarray  # per point, -1 for unlabeled points
    superedges: list  # (u, v, edge ids) with u < v component indices
    inter_edges: np.ndarray  # edge ids, aligned with per_edge_weight
    per_edge_weight: np.ndarray = field(default_factory=lambda: np.zeros(0))


def build_adjacency(cloud: PointCloud, k_adj: int = 5, radius: float | None = None) -> AdjacencyGraph:
    """Symmetrized k-nn graph (union rule), optionally augmented by all pairs within ``radius``."""
    table = build_knn(cloud, k_adj)
    n = cloud.n
    rows = np.repeat(np.arange(n), k_adj)
    edges = np.stack([rows, table.neighbor_ids.reshape(-1)], axis=1)
    if radius is not None and radius > 0:
        pairs = cKDTree(cloud.positions).query_pairs(radius, output_type="ndarray")
        edges = np.concatenate([edges, pairs.astype(np.int64)])
    return AdjacencyGraph(n, edges)


def classify_edges(graph: AdjacencyGraph, object_ids: np.ndarray | None) -> EdgeClassification:
    """Split edges into intra/inter-object sets; negative ids mark unlabeled points."""
    if object_ids is None:
        raise ValueError("object ids are required to classify edges")
    obj = np.asarray(object_ids)
    if len(obj) != graph.num_vertices:
        raise ValueError(f"got {len(obj)} object ids for {graph.num_vertices} vertices")
    a, b = obj[graph.edges[:, 0]], obj[graph.edges[:, 1]]
    labeled = (a >= 0) & (b >= 0)
    intra = np.flatnonzero(labeled & (a == b))
    inter = np.flatnonzero(labeled & (a != b))
    touched = np.zeros(graph.num_vertices, dtype=bool)
    touched[graph.edges[inter].reshape(-1)] = True
    expanded = np.flatnonzero(touched[graph.edges[:, 0]] | touched[graph.edges[:, 1]])
    return EdgeClassification(intra, inter, expanded)


def connected_components(graph: AdjacencyGraph, cut_edges: np.ndarray | None = None) -> Partition:
    """Components after removing ``cut_edges``; ids ordered by smallest member vertex."""
    keep = np.ones(graph.num_edges, dtype=bool)
    if cut_edges is not None and len(cut_edges):
        keep[np.asarray(cut_edges, dtype=np.int64)] = False
    return _components(graph.num_vertices, graph.edges[keep])


def _components(n: int, edges: np.ndarray) -> Partition:
    if n == 0:
        return Partition(np.zeros(0, dtype=np.int64), 0)
    mat = sparse.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    _, labels = _cc(mat, directed=False)
    return Partition.from_labels(labels)


def build_cross_partition(graph: AdjacencyGraph, classification: EdgeClassification,
                          superpoints: Partition, object_ids: np.ndarray,
                          mu: float = 1.0) -> CrossPartitionGraph:
    """Cross-partition of superpoints and objects with per-inter-edge weights.

    Every inter edge (i, j) belongs to the superedge linking the components
    U and V of its endpoints and receives ``mu * min(|U|, |V|) / |(U, V)|``.
    """
    obj = np.asarray(object_ids)
    sp = superpoints.assignment
    if len(obj) != graph.num_vertices or len(sp) != graph.num_vertices:
        raise ValueError("object ids and superpoints must cover every vertex")
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    keep = (obj[i] >= 0) & (obj[j] >= 0) & (obj[i] == obj[j]) & (sp[i] == sp[j])
    part = _components(graph.num_vertices, graph.edges[keep])
    # unlabeled points are dropped from the component list, relabel the rest
    labeled = obj >= 0
    comp = np.full(graph.num_vertices, -1, dtype=np.int64)
    if labeled.any():
        sub = Partition.from_labels(part.assignment[labeled])
        comp[labeled] = sub.assignment
        ncomp = sub.num_superpoints
    else:
        ncomp = 0
    order = np.argsort(comp, kind="stable")
    bounds = np.searchsorted(comp[order], np.arange(ncomp + 1))
    components = [order[bounds[c]:bounds[c + 1]] for c in range(ncomp)]
    sizes = np.diff(bounds)

    inter = classification.inter
    cu, cv = comp[i[inter]], comp[j[inter]]
    lo, hi = np.minimum(cu, cv), np.maximum(cu, cv)
    weights = np.zeros(len(inter))
    superedges = []
    if len(inter):
        key_order = np.lexsort((hi, lo))
        lo_s, hi_s = lo[key_order], hi[key_order]
        start = np.ones(len(inter), dtype=bool)
        start[1:] = (lo_s[1:] != lo_s[:-1]) | (hi_s[1:] != hi_s[:-1])
        starts = np.append(np.flatnonzero(start), len(inter))
        for s, t in zip(starts[:-1], starts[1:]):
            members = key_order[s:t]
            u, v = int(lo_s[s]), int(hi_s[s])
            weights[members] = mu * min(sizes[u], sizes[v]) / (t - s)
            superedges.append((u, v, inter[np.sort(members)]))
    return CrossPartitionGraph(components, comp, superedges, inter, weights)


def export_edges_csv(graph: AdjacencyGraph, path: str | os.PathLike,
                     weights: np.ndarray | None = None) -> None:
    """Write ``i,j,weight`` rows for debugging."""
    w = np.ones(graph.num_edges) if weights is None else np.asarray(weights, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("i,j,weight\n")
        for (a, b), x in zip(graph.edges, w):
            fh.write(f"{a},{b},{float(x)!r}\n")
