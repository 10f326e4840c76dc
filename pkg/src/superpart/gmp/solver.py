"""Approximate generalized minimal partition by split-and-merge (l0 cut pursuit).

Minimizes ``sum_i ||f_i - y_i||^2 + sum_(i,j) w_ij [f_i != f_j]`` over
piecewise-constant ``f``. For a fixed partition the optimal ``f`` is the
per-component mean, so the solver only manipulates partitions.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..graph import AdjacencyGraph, Partition, connected_components
from .kernels import get_backend

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GMPConfig:
    lambda_tilde: float = 1.0
    sigma: float = 0.5
    alpha_spat: float = 0.2
    n_min_1: int = 40
    ramp: float = 0.7
    max_iters: int = 10
    split_iters: int = 3
    max_sweeps: int = 20
    lloyd_iters: int = 3
    agglomerative_start: bool = True
    perturb_pairs: int = 64

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.lambda_tilde < 0:
            raise ValueError("lambda_tilde must be non-negative")
        if not 0 < self.ramp <= 1:
            raise ValueError("ramp must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class GMPSolution:
    f: np.ndarray
    partition: Partition
    energy: float
    energy_history: list = field(default_factory=list)
    iterations: int = 0
    warning: str | None = None


def lambda_from_normalized(lambda_tilde: float, c: float) -> float:
    if not c > 0:
        raise ValueError(f"connectivity must be positive, got {c}")
    return lambda_tilde / (4.0 * c)


def min_superpoint_size(lambda_tilde: float, n_min_1: float) -> int:
    """Heuristic smallest superpoint size for a given normalized regularization."""
    if not lambda_tilde > 0:
        raise ValueError(f"lambda_tilde must be positive, got {lambda_tilde}")
    return int(math.ceil(max(n_min_1 / 2.0, n_min_1 + n_min_1 / 2.0 * math.log10(lambda_tilde))))


def gmp_edge_weights(embeddings: np.ndarray, graph: AdjacencyGraph, lam: float, sigma: float) -> np.ndarray:
    """``lam * exp(-||e_i - e_j||^2 / sigma)`` per edge."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    e = np.asarray(embeddings, dtype=np.float64)
    d = e[graph.edges[:, 0]] - e[graph.edges[:, 1]]
    return lam * np.exp(-np.einsum("ij,ij->i", d, d) / sigma)


def augment_features(embeddings: np.ndarray, positions: np.ndarray, alpha_spat: float) -> np.ndarray:
    """Append coordinates scaled by ``alpha_spat`` to the embeddings."""
    return np.concatenate([np.asarray(embeddings, dtype=np.float64),
                           alpha_spat * np.asarray(positions, dtype=np.float64)], axis=1)


def _component_means(Y: np.ndarray, comp: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    cnt = np.bincount(comp, minlength=k).astype(np.float64)
    sums = np.zeros((k, Y.shape[1]))
    np.add.at(sums, comp, Y)
    return sums / np.maximum(cnt, 1.0)[:, None], cnt


def _fidelity_per_component(Y, comp, k):
    mean, _ = _component_means(Y, comp, k)
    r = Y - mean[comp]
    return np.bincount(comp, np.einsum("ij,ij->i", r, r), minlength=k)


def gmp_energy(f: np.ndarray, features: np.ndarray, graph: AdjacencyGraph, w: np.ndarray,
               partition: Partition | np.ndarray | None = None) -> float:
    """Fidelity plus the weight of edges joining different components.

    Components come from ``partition`` when given; otherwise rows of ``f``
    are grouped by exact equality.
    """
    f = np.asarray(f, dtype=np.float64)
    Y = np.asarray(features, dtype=np.float64)
    if f.shape != Y.shape:
        raise ValueError(f"f {f.shape} and features {Y.shape} differ in shape")
    if partition is None:
        _, ids = np.unique(f, axis=0, return_inverse=True)
        ids = ids.reshape(-1)
    else:
        ids = partition.assignment if isinstance(partition, Partition) else np.asarray(partition)
    r = f - Y
    cut = ids[graph.edges[:, 0]] != ids[graph.edges[:, 1]]
    return float(np.sum(r * r) + np.sum(np.asarray(w)[cut]))


def partition_energy(Y: np.ndarray, graph: AdjacencyGraph, w: np.ndarray, comp: np.ndarray) -> float:
    """Energy of the best piecewise-constant ``f`` over the components ``comp``."""
    k = int(comp.max()) + 1 if len(comp) else 0
    fid = _fidelity_per_component(Y, comp, k).sum()
    cut = comp[graph.edges[:, 0]] != comp[graph.edges[:, 1]]
    return float(fid + np.sum(w[cut]))


def extract_partition(solution: GMPSolution | np.ndarray, graph: AdjacencyGraph) -> Partition:
    """Connected components of regions where ``f`` is exactly equal."""
    f = solution.f if isinstance(solution, GMPSolution) else np.asarray(solution)
    diff = np.any(f[graph.edges[:, 0]] != f[graph.edges[:, 1]], axis=1)
    return connected_components(graph, np.flatnonzero(diff))


# ---------------------------------------------------------------------------
# split step

def _segment_argmax(values: np.ndarray, comp: np.ndarray, k: int) -> np.ndarray:
    """Index of the largest value per component, smallest index on ties."""
    order = np.lexsort((np.arange(len(values)), -values, comp))
    first = np.ones(len(order), dtype=bool)
    first[1:] = comp[order][1:] != comp[order][:-1]
    out = np.full(k, -1, dtype=np.int64)
    out[comp[order][first]] = order[first]
    return out


def _two_means(Y, comp, k, iters):
    """Per-component 2-means seeded by farthest points; returns ``(labels, H0, H1)``."""
    mean, _ = _component_means(Y, comp, k)
    d = np.einsum("ij,ij->i", Y - mean[comp], Y - mean[comp])
    a = _segment_argmax(d, comp, k)
    H0 = Y[a].copy()
    d = np.einsum("ij,ij->i", Y - H0[comp], Y - H0[comp])
    b = _segment_argmax(d, comp, k)
    H1 = Y[b].copy()
    labels = np.zeros(len(Y), dtype=np.int8)
    for _ in range(max(iters, 1)):
        d0 = np.einsum("ij,ij->i", Y - H0[comp], Y - H0[comp])
        d1 = np.einsum("ij,ij->i", Y - H1[comp], Y - H1[comp])
        labels = (d1 < d0).astype(np.int8)
        H0, H1 = _label_means(Y, comp, labels, k, H0, H1)
    return labels, H0, H1


def _label_means(Y, comp, labels, k, H0, H1):
    key = comp * 2 + labels
    m, cnt = _component_means(Y, key, 2 * k)
    m = m.reshape(k, 2, -1)
    cnt = cnt.reshape(k, 2)
    H0 = np.where(cnt[:, 0:1] > 0, m[:, 0], H0)
    H1 = np.where(cnt[:, 1:2] > 0, m[:, 1], H1)
    return np.ascontiguousarray(H0), np.ascontiguousarray(H1)


def _split(Y, graph, w_eff, comp, k, cfg, kern):
    """Refine every component by a binary labeling; keep only energy-decreasing splits."""
    indptr, indices, eid = graph.csr
    w_csr = np.ascontiguousarray(w_eff[eid])
    labels, H0, H1 = _two_means(Y, comp, k, cfg.lloyd_iters)
    for _ in range(cfg.split_iters):
        labels, _ = kern.icm_sweeps(indptr, indices, w_csr, comp, Y, H0, H1, labels, cfg.max_sweeps)
        H0, H1 = _label_means(Y, comp, labels, k, H0, H1)
    key = comp * 2 + labels.astype(np.int64)
    new, nnew = kern.label_components(indptr, indices, np.ascontiguousarray(key))

    # accept per component if fidelity drop beats the newly cut weight
    old_fid = _fidelity_per_component(Y, comp, k)
    new_fid_c = _fidelity_per_component(Y, new, nnew)
    parent = np.zeros(nnew, dtype=np.int64)
    parent[new] = comp
    new_fid = np.bincount(parent, new_fid_c, minlength=k)
    e0, e1 = graph.edges[:, 0], graph.edges[:, 1]
    newly_cut = (comp[e0] == comp[e1]) & (new[e0] != new[e1])
    added = np.bincount(comp[e0][newly_cut], w_eff[newly_cut], minlength=k)
    accept = new_fid + added < old_fid - 1e-12 * np.maximum(old_fid, 1.0)
    key = np.where(accept[comp], new + k, comp)
    return _relabel(key)


def _relabel(key: np.ndarray) -> tuple[np.ndarray, int]:
    p = Partition.from_labels(key)
    return p.assignment, p.num_superpoints


# ---------------------------------------------------------------------------
# merge steps on the reduced graph

class _Reduced:
    """Component adjacency with sizes, feature sums and boundary weights."""

    def __init__(self, Y, graph, w, comp, k):
        self.size = np.bincount(comp, minlength=k).astype(np.float64).tolist()
        sums = np.zeros((k, Y.shape[1]))
        np.add.at(sums, comp, Y)
        self.sums = list(sums)
        self.alive = [True] * k
        self.adj: list[dict] = [dict() for _ in range(k)]
        a, b = comp[graph.edges[:, 0]], comp[graph.edges[:, 1]]
        cut = a != b
        lo, hi, ww = np.minimum(a[cut], b[cut]), np.maximum(a[cut], b[cut]), w[cut]
        if len(lo):
            pair = lo * k + hi
            uniq, inv = np.unique(pair, return_inverse=True)
            tot = np.bincount(inv.reshape(-1), ww, minlength=len(uniq))
            for p, t in zip(uniq.tolist(), tot.tolist()):
                u, v = divmod(p, k)
                self.adj[u][v] = t
                self.adj[v][u] = t
        self.parent = list(range(k))

    def delta(self, u, v):
        """Energy change if ``u`` and ``v`` merge."""
        nu, nv = self.size[u], self.size[v]
        diff = self.sums[u] / nu - self.sums[v] / nv
        return nu * nv / (nu + nv) * float(diff @ diff) - self.adj[u][v]

    def merge(self, u, v):
        """Absorb ``v`` into ``u``."""
        self.size[u] += self.size[v]
        self.sums[u] = self.sums[u] + self.sums[v]
        self.alive[v] = False
        self.parent[v] = u
        for x, t in self.adj[v].items():
            if x == u:
                continue
            nt = self.adj[u].get(x, 0.0) + t
            self.adj[u][x] = nt
            self.adj[x][u] = nt
            del self.adj[x][v]
        self.adj[u].pop(v, None)
        self.adj[v] = {}

    def labels(self, comp):
        root = list(range(len(self.parent)))
        for i in range(len(root)):
            r = i
            while self.parent[r] != r:
                r = self.parent[r]
            root[i] = r
        return np.asarray(root, dtype=np.int64)[comp]


def _reduced_pairs(graph, w, comp, k):
    """Adjacent component pairs ``(u < v)`` with their summed boundary weight."""
    a, b = comp[graph.edges[:, 0]], comp[graph.edges[:, 1]]
    cut = a != b
    lo, hi = np.minimum(a[cut], b[cut]), np.maximum(a[cut], b[cut])
    uniq, inv = np.unique(lo * k + hi, return_inverse=True)
    tot = np.bincount(inv.reshape(-1), w[cut], minlength=len(uniq)).astype(np.float64)
    return (uniq // k).astype(np.int64), (uniq % k).astype(np.int64), tot


def _merge_greedy(Y, graph, w, comp, k, kern):
    """Repeatedly apply the most energy-decreasing merge of adjacent components."""
    size = np.bincount(comp, minlength=k).astype(np.float64)
    sums = np.zeros((k, Y.shape[1]))
    np.add.at(sums, comp, Y)
    pu, pv, pw = _reduced_pairs(graph, w, comp, k)
    parent = kern.greedy_merge(size, sums, pu, pv, pw)
    if np.array_equal(parent, np.arange(k)):
        return comp, k
    # survivors always hold the smaller id, so one pass in id order resolves roots
    root = parent.copy()
    for x in range(k):
        root[x] = root[parent[x]]
    return _relabel(root[comp])


def _refine(Y, graph, w, comp, k, cfg, kern, allow_new=True, frozen=None):
    """Energy-decreasing single-vertex moves at full regularization."""
    indptr, indices, eid = graph.csr
    n = len(Y)
    sums = np.zeros((k + n, Y.shape[1]))
    np.add.at(sums, comp, Y)
    size = np.zeros(k + n)
    size[:k] = np.bincount(comp, minlength=k)
    frozen = np.zeros(n, dtype=np.int8) if frozen is None else np.ascontiguousarray(frozen, dtype=np.int8)
    new, nk, moves = kern.refine_moves(indptr, indices, np.ascontiguousarray(w[eid]), comp, Y,
                                       sums, size, k, cfg.max_sweeps, allow_new, frozen)
    if not moves:
        return comp, k
    return _relabel(new)


def _merge_small(Y, graph, w, comp, k, n_min):
    """Merge components below ``n_min`` into the neighbor that raises the energy least."""
    red = _Reduced(Y, graph, w, comp, k)
    heap = [(red.size[u], u) for u in range(k) if red.size[u] < n_min]
    heapq.heapify(heap)
    merged = False
    while heap:
        s, u = heapq.heappop(heap)
        if not red.alive[u] or red.size[u] != s or s >= n_min or not red.adj[u]:
            continue
        best = min(red.adj[u], key=lambda x: (red.delta(u, x), x))
        a, b = (u, best) if u < best else (best, u)
        red.merge(a, b)
        merged = True
        if red.size[a] < n_min:
            heapq.heappush(heap, (red.size[a], a))
    if not merged:
        return comp, k
    return _relabel(red.labels(comp))


def _perturb(Y, graph, w, comp, k, energy, cfg, kern):
    """Force-merge adjacent pairs, re-optimize locally and keep improvements.

    Escapes optima where no single merge or vertex move helps but a merge
    followed by moves does. At most ``cfg.perturb_pairs`` pairs are tried.
    """
    budget = cfg.perturb_pairs
    improved = True
    while improved and budget > 0:
        improved = False
        pu, pv, pw = _reduced_pairs(graph, w, comp, k)
        size = np.bincount(comp, minlength=k).astype(np.float64)
        sums = np.zeros((k, Y.shape[1]))
        np.add.at(sums, comp, Y)
        diff = sums[pu] / size[pu, None] - sums[pv] / size[pv, None]
        delta = size[pu] * size[pv] / (size[pu] + size[pv]) * np.einsum("ij,ij->i", diff, diff) - pw
        # cheapest forced merges first
        order = np.lexsort((pv, pu, delta))
        pairs = np.stack([pu[order], pv[order]], axis=1)
        for u, v in pairs:
            if budget <= 0:
                break
            budget -= 1
            inside = (comp == u) | (comp == v)
            trial, tk = _relabel(np.where(comp == v, u, comp))
            # let the rest of the graph adapt before the merged pair may shrink
            trial, tk = _refine(Y, graph, w, trial, tk, cfg, kern, frozen=inside)
            trial, tk = _refine(Y, graph, w, trial, tk, cfg, kern)
            trial, tk = _merge_greedy(Y, graph, w, trial, tk, kern)
            te = partition_energy(Y, graph, w, trial)
            if te < energy - 1e-12 * max(abs(energy), 1.0):
                comp, k, energy = trial, tk, te
                improved = True
                break
    return comp, k, energy


# ---------------------------------------------------------------------------

def _cut_pursuit(Y, graph, w, base, cfg, kern):
    comp, k = base.assignment.copy(), base.num_superpoints
    energy = partition_energy(Y, graph, w, comp)
    history = [energy]
    it = 0
    for it in range(1, 2 * cfg.max_iters + 1):
        scale = cfg.ramp ** max(cfg.max_iters - it, 0)
        new, nk = _split(Y, graph, w * scale, comp, k, cfg, kern)
        new, nk = _merge_greedy(Y, graph, w, new, nk, kern)
        new, nk = _refine(Y, graph, w, new, nk, cfg, kern)
        new_energy = partition_energy(Y, graph, w, new)
        if new_energy > energy + 1e-12 * max(abs(energy), 1.0):
            new, nk, new_energy = comp, k, energy
        changed = nk != k or not np.array_equal(new, comp)
        comp, k, energy = new, nk, new_energy
        history.append(energy)
        if scale == 1.0 and not changed:
            break
    return comp, k, energy, history, it


def solve_gmp(features: np.ndarray, graph: AdjacencyGraph, w: np.ndarray, n_min: int = 1,
              config: GMPConfig | None = None, backend: str | None = None) -> GMPSolution:
    """Split-and-merge approximation of the generalized minimal partition.

    Each outer iteration splits components under a regularization that ramps
    geometrically up to ``w``, then greedily merges adjacent components at
    full regularization. Iterations that would raise the full energy are
    rolled back. Components smaller than ``n_min`` are merged at the end.
    """
    cfg = config or GMPConfig()
    kern = get_backend(backend)
    Y = np.ascontiguousarray(features, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    n = len(Y)
    if len(w) != graph.num_edges or graph.num_vertices != n:
        raise ValueError("features, graph and weights are inconsistent")
    if np.any(w < 0):
        raise ValueError("edge weights must be non-negative")
    if n == 0:
        return GMPSolution(Y.copy(), Partition(np.zeros(0, dtype=np.int64), 0), 0.0)

    base = connected_components(graph)
    if n_min >= n:
        comp = base.assignment
        f = _component_means(Y, comp, base.num_superpoints)[0][comp]
        e = partition_energy(Y, graph, w, comp)
        return GMPSolution(f, base, e, [e], 0, warning=f"n_min={n_min} >= N={n}: single component returned")

    comp, k, energy, history, it = _cut_pursuit(Y, graph, w, base, cfg, kern)
    if cfg.agglomerative_start:
        # second start from singletons; keep whichever local optimum is lower
        c2, k2 = _merge_greedy(Y, graph, w, np.arange(n, dtype=np.int64), n, kern)
        c2, k2 = _refine(Y, graph, w, c2, k2, cfg, kern)
        e2 = partition_energy(Y, graph, w, c2)
        if e2 < energy - 1e-12 * max(abs(energy), 1.0):
            comp, k, energy = c2, k2, e2
            history.append(e2)
    if cfg.perturb_pairs > 0:
        comp, k, e3 = _perturb(Y, graph, w, comp, k, energy, cfg, kern)
        if e3 < energy:
            energy = e3
            history.append(e3)

    if n_min > 1:
        comp, k = _merge_small(Y, graph, w, comp, k, n_min)
    part = Partition.from_labels(comp)
    comp, k = part.assignment, part.num_superpoints
    f = _component_means(Y, comp, k)[0][comp]
    return GMPSolution(f, part, partition_energy(Y, graph, w, comp), history, it)
