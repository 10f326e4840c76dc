"""Synthetic rooms, regularization sweeps, non-learned baselines and embedding colors."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import NeighborhoodTable, PointCloud, build_knn
from .embed import EmbedderParams, embed_cloud
from .gmp import (GMPConfig, GMPSolution, augment_features, gmp_edge_weights, lambda_from_normalized,
                  min_superpoint_size, solve_gmp)
from .graph import AdjacencyGraph, Partition, build_adjacency, classify_edges, connected_components
from .metrics import MetricsReport, evaluate_partition

log = logging.getLogger(__name__)

FLOOR, CEILING, WALL, BOX, BOARD = range(5)
DEFAULT_LABELS = {"floor": FLOOR, "ceiling": CEILING, "wall": WALL, "box": BOX, "board": BOARD}

DEFAULT_PALETTES = {
    "floor": ((0.45, 0.36, 0.28), (0.55, 0.55, 0.52)),
    "ceiling": ((0.93, 0.93, 0.91),),
    "wall": ((0.88, 0.88, 0.86), (0.86, 0.87, 0.89), (0.90, 0.88, 0.84)),
    "box": ((0.75, 0.20, 0.18), (0.20, 0.45, 0.75), (0.25, 0.60, 0.30), (0.85, 0.70, 0.20),
            (0.50, 0.30, 0.60), (0.35, 0.35, 0.38)),
    # near-white boards on near-white walls
    "board": ((0.95, 0.95, 0.94), (0.92, 0.93, 0.95)),
}


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    extent: tuple = (6.0, 5.0, 3.0)
    # points are scattered this far off their surface along its normal
    thickness: float = 0.01
    box_count: tuple = (2, 5)
    board_count: tuple = (1, 3)
    density: float = 150.0
    color_jitter: float = 0.02
    palettes: dict = field(default_factory=lambda: DEFAULT_PALETTES)
    labels: dict = field(default_factory=lambda: DEFAULT_LABELS)

    def __post_init__(self):
        if len(self.extent) != 3 or min(self.extent) <= 0:
            raise ValueError(f"room extent must be three positive lengths, got {self.extent}")
        if not self.density > 0:
            raise ValueError("density must be positive")
        if self.thickness < 0 or self.color_jitter < 0:
            raise ValueError("thickness and color jitter must be non-negative")
        for name in ("box_count", "board_count"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must be a range 0 <= lo <= hi")


def _sample_rect(rng, origin, u, v, density, thickness, normal):
    """Poisson number of stratified points on the rectangle ``origin + s*u + t*v``.

    Points occupy distinct cells of a grid sized to the draw and are jittered
    uniformly inside their cell, which avoids the clumps and holes of plain
    uniform sampling.
    """
    lu, lv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    n = int(rng.poisson(density * lu * lv))
    if n == 0:
        return np.zeros((0, 3))
    nu = max(1, int(round(math.sqrt(n * lu / lv))))
    nv = max(1, -(-n // nu))
    cells = rng.choice(nu * nv, size=n, replace=False)
    st = np.stack([(cells // nv + rng.uniform(size=n)) / nu, (cells % nv + rng.uniform(size=n)) / nv], axis=1)
    pts = origin + st[:, :1] * u + st[:, 1:] * v
    if thickness > 0:
        pts = pts + rng.uniform(-thickness / 2, thickness / 2, size=(n, 1)) * normal
    return pts


class _Builder:
    def __init__(self, spec, rng):
        self.spec, self.rng = spec, rng
        self.pos, self.rgb, self.cls, self.obj = [], [], [], []
        self.next_id = 0

    def add(self, pts, kind, color):
        n = len(pts)
        jitter = self.rng.normal(0.0, self.spec.color_jitter, size=(n, 3))
        self.pos.append(pts)
        self.rgb.append(np.clip(np.asarray(color) + jitter, 0.0, 1.0))
        self.cls.append(np.full(n, self.spec.labels[kind], dtype=np.int64))
        self.obj.append(np.full(n, self.next_id, dtype=np.int64))
        self.next_id += 1

    def color(self, kind):
        pal = self.spec.palettes[kind]
        base = np.asarray(pal[self.rng.integers(len(pal))], dtype=np.float64)
        return np.clip(base + self.rng.uniform(-0.03, 0.03, size=3), 0.0, 1.0)

    def cloud(self):
        cat = (lambda xs, shape: np.concatenate(xs) if xs else np.zeros(shape))
        return PointCloud(cat(self.pos, (0, 3)), cat(self.rgb, (0, 3)),
                          cat(self.cls, (0,)).astype(np.int64), cat(self.obj, (0,)).astype(np.int64))


def _place_boxes(rng, spec, count):
    """Non-overlapping axis-aligned boxes standing on the floor, clear of the walls."""
    L, W, H = spec.extent
    margin = 0.3
    boxes = []
    for _ in range(count):
        for _attempt in range(50):
            size = rng.uniform([0.3, 0.3, 0.3], [min(1.2, L / 3), min(1.2, W / 3), min(1.2, H / 2)])
            lo = rng.uniform([margin, margin], [L - margin - size[0], W - margin - size[1]]) \
                if L - 2 * margin > size[0] and W - 2 * margin > size[1] else None
            if lo is None:
                break
            xy_lo, xy_hi = lo, lo + size[:2]
            gap = 0.15
            if all(xy_hi[0] + gap < b[0][0] or b[1][0] + gap < xy_lo[0] or
                   xy_hi[1] + gap < b[0][1] or b[1][1] + gap < xy_lo[1] for b in boxes):
                boxes.append((np.array([*xy_lo, 0.0]), np.array([*xy_hi, size[2]])))
                break
    return boxes


def generate_synthetic_scene(spec: SceneSpec | None = None) -> PointCloud:
    """Labeled room: floor, ceiling, four walls, boxes on the floor and boards on the walls.

    Object ids are 0 (floor), 1 (ceiling), 2-5 (walls), then boxes, then boards.
    Surface points hidden by a box or a board are removed.
    """
    spec = spec or SceneSpec()
    rng = np.random.default_rng(spec.seed)
    L, W, H = spec.extent
    dens, th = spec.density, spec.thickness
    b = _Builder(spec, rng)
    ex, ey, ez = np.eye(3)
    n_boxes = int(rng.integers(spec.box_count[0], spec.box_count[1] + 1))
    n_boards = int(rng.integers(spec.board_count[0], spec.board_count[1] + 1))
    boxes = _place_boxes(rng, spec, n_boxes)

    floor = _sample_rect(rng, np.zeros(3), L * ex, W * ey, dens, th, ez)
    for lo, hi in boxes:
        under = np.all((floor[:, :2] >= lo[:2]) & (floor[:, :2] <= hi[:2]), axis=1)
        floor = floor[~under]
    b.add(floor, "floor", b.color("floor"))
    b.add(_sample_rect(rng, H * ez, L * ex, W * ey, dens, th, ez), "ceiling", b.color("ceiling"))

    # walls as (origin, along, normal into the room, length)
    walls = [(np.zeros(3), ex, ey, L), (W * ey, ex, -ey, L),
             (np.zeros(3), ey, ex, W), (L * ex, ey, -ex, W)]
    boards = []
    for _ in range(n_boards):
        wi = int(rng.integers(4))
        origin, along, normal, length = walls[wi]
        bw = rng.uniform(0.6, min(2.0, length / 2))
        bh = rng.uniform(0.5, min(1.2, H / 2))
        s0 = rng.uniform(0.2, length - bw - 0.2)
        z0 = rng.uniform(0.8, max(0.8, H - bh - 0.3))
        if any(o[0] == wi and s0 < o[1] + o[3] + 0.1 and o[1] < s0 + bw + 0.1 for o in boards):
            continue
        boards.append((wi, s0, z0, bw, bh))
    for wi, (origin, along, normal, length) in enumerate(walls):
        pts = _sample_rect(rng, origin, length * along, H * ez, dens, th, normal)
        s = (pts - origin) @ along
        for bwi, s0, z0, bw, bh in boards:
            if bwi == wi:
                hidden = (s >= s0) & (s <= s0 + bw) & (pts[:, 2] >= z0) & (pts[:, 2] <= z0 + bh)
                pts, s = pts[~hidden], s[~hidden]
        b.add(pts, "wall", b.color("wall"))

    for lo, hi in boxes:
        d = hi - lo
        faces = [(lo + d[2] * ez, d[0] * ex, d[1] * ey, ez),  # top
                 (lo, d[0] * ex, d[2] * ez, -ey), (lo + d[1] * ey, d[0] * ex, d[2] * ez, ey),
                 (lo, d[1] * ey, d[2] * ez, -ex), (lo + d[0] * ex, d[1] * ey, d[2] * ez, ex)]
        pts = np.concatenate([_sample_rect(rng, o, u, v, dens, th, nrm) for o, u, v, nrm in faces])
        b.add(pts, "box", b.color("box"))

    board_depth = 0.02
    for wi, s0, z0, bw, bh in boards:
        origin, along, normal, _ = walls[wi]
        o = origin + s0 * along + z0 * ez + board_depth * normal
        b.add(_sample_rect(rng, o, bw * along, bh * ez, dens, th, normal), "board", b.color("board"))
    return _drop_stray_points(b.cloud())


def _drop_stray_points(cloud: PointCloud, k_adj: int = 5, max_rounds: int = 10) -> PointCloud:
    """Remove the few points cut off from the main body of their object.

    Near corners and board edges a point's nearest neighbors can all lie on
    the adjacent surface. Removing such points (a handful per scene) makes
    every object one connected piece of the adjacency graph.
    """
    for _ in range(max_rounds):
        graph = build_adjacency(cloud, k_adj)
        cls = classify_edges(graph, cloud.object_ids)
        comp = connected_components(graph, np.setdiff1d(np.arange(graph.num_edges), cls.intra)).assignment
        # largest piece per object, ties to the smallest piece id
        pairs, counts = np.unique(np.stack([cloud.object_ids, comp], axis=1), axis=0, return_counts=True)
        order = np.lexsort((pairs[:, 1], -counts, pairs[:, 0]))
        first = np.ones(len(order), dtype=bool)
        first[1:] = pairs[order[1:], 0] != pairs[order[:-1], 0]
        main = set(pairs[order[first], 1].tolist())
        keep = np.fromiter((c in main for c in comp), dtype=bool, count=cloud.n)
        if keep.all():
            return cloud
        cloud = cloud.subset(np.flatnonzero(keep))
    log.warning("some objects remain split in the adjacency graph")
    return cloud


def disconnected_objects(graph: AdjacencyGraph, object_ids: np.ndarray) -> list[int]:
    """Objects whose points do not form one connected piece through intra-object edges."""
    obj = np.asarray(object_ids)
    cls = classify_edges(graph, obj)
    cut = np.setdiff1d(np.arange(graph.num_edges), cls.intra)
    comp = connected_components(graph, cut).assignment
    bad = []
    for o in np.unique(obj[obj >= 0]):
        if len(np.unique(comp[obj == o])) > 1:
            bad.append(int(o))
    return bad


# ---------------------------------------------------------------------------
# partitions from per-point descriptors

def partition_from_descriptors(descriptors: np.ndarray, positions: np.ndarray, graph: AdjacencyGraph,
                               lambda_tilde: float, config: GMPConfig | None = None,
                               n_min: int | None = None) -> tuple[GMPSolution, int]:
    """Solve the partition problem on any per-point descriptors plus scaled coordinates.

    Edge weights use the descriptors only. ``n_min`` defaults to the
    size floor derived from ``lambda_tilde`` and ``config.n_min_1``.
    """
    cfg = config or GMPConfig()
    c = graph.connectivity
    lam = lambda_from_normalized(lambda_tilde, c) if c > 0 else 0.0
    if n_min is None:
        n_min = min_superpoint_size(lambda_tilde, cfg.n_min_1) if lambda_tilde > 0 else 1
    w = gmp_edge_weights(descriptors, graph, lam, cfg.sigma)
    feats = augment_features(descriptors, positions, cfg.alpha_spat)
    return solve_gmp(feats, graph, w, n_min=n_min, config=cfg), n_min


def geometric_features(cloud: PointCloud, k: int = 20, table: NeighborhoodTable | None = None) -> np.ndarray:
    """Linearity, planarity, scattering and verticality of each point's neighborhood covariance.

    The neighborhood is the point itself plus its ``k`` nearest neighbors.
    Verticality is ``1 - |n_z|`` for the smallest-variance direction ``n``.
    """
    table = table or build_knn(cloud, k)
    idx = np.concatenate([np.arange(cloud.n)[:, None], table.neighbor_ids], axis=1)
    P = cloud.positions[idx]
    P = P - P.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", P, P) / idx.shape[1]
    evals, evecs = np.linalg.eigh(cov)  # ascending
    l3, l2, l1 = evals[:, 0].clip(0), evals[:, 1].clip(0), evals[:, 2].clip(0)
    safe = np.where(l1 > 0, l1, 1.0)
    lin = np.where(l1 > 0, (l1 - l2) / safe, 0.0)
    pla = np.where(l1 > 0, (l2 - l3) / safe, 0.0)
    sca = np.where(l1 > 0, l3 / safe, 0.0)
    ver = 1.0 - np.abs(evecs[:, 2, 0])
    return np.stack([lin, pla, sca, ver], axis=1)


BASELINE_MODES = ("raw_features", "handcrafted_geometry")


def baseline_descriptors(cloud: PointCloud, mode: str, k: int = 20,
                         table: NeighborhoodTable | None = None) -> np.ndarray:
    if mode == "raw_features":
        return cloud.radiometry.copy()
    if mode == "handcrafted_geometry":
        return geometric_features(cloud, k, table)
    raise ValueError(f"unknown baseline mode {mode!r}, expected one of {BASELINE_MODES}")


def baseline_partition(cloud: PointCloud, mode: str, config: GMPConfig | None = None,
                       graph: AdjacencyGraph | None = None, lambda_tilde: float | None = None,
                       k: int = 20, table: NeighborhoodTable | None = None) -> Partition:
    """Partition without learning, on radiometry or on covariance eigen-features."""
    cfg = config or GMPConfig()
    graph = graph or build_adjacency(cloud)
    lam = cfg.lambda_tilde if lambda_tilde is None else lambda_tilde
    desc = baseline_descriptors(cloud, mode, k, table)
    sol, _ = partition_from_descriptors(desc, cloud.positions, graph, lam, cfg)
    return sol.partition


# ---------------------------------------------------------------------------
# sweeps

def sweep_descriptors(descriptors: np.ndarray, cloud: PointCloud, graph: AdjacencyGraph,
                      lambda_tildes, config: GMPConfig | None = None) -> list[MetricsReport]:
    """Partition and score ``cloud`` for each regularization strength."""
    cfg = config or GMPConfig()
    if cloud.class_labels is None or cloud.object_ids is None:
        raise ValueError("sweeps need class labels and object ids")
    cls = classify_edges(graph, cloud.object_ids)
    reports = []
    for lt in lambda_tildes:
        if not lt > 0:
            raise ValueError(f"lambda_tilde must be positive, got {lt}")
        sol, n_min = partition_from_descriptors(descriptors, cloud.positions, graph, lt, cfg)
        reports.append(evaluate_partition(sol.partition, graph, cloud.class_labels, cls, float(lt), n_min))
    return reports


def sweep_regularization(params: EmbedderParams, cloud: PointCloud, table: NeighborhoodTable,
                         graph: AdjacencyGraph, lambda_tildes, config: GMPConfig | None = None) -> list[MetricsReport]:
    """Metrics along a regularization path, embeddings computed once."""
    e = embed_cloud(cloud, table, params)
    return sweep_descriptors(e, cloud, graph, lambda_tildes, config)


def calibrate_lambda(count_at, target: int, lo: float = 0.05, hi: float = 50.0,
                     rel_tol: float = 0.1, max_steps: int = 12) -> tuple[float, int]:
    """Geometric bisection for a strength whose superpoint count is within ``rel_tol`` of ``target``.

    ``count_at(lambda_tilde)`` must be roughly non-increasing. Returns the
    best strength found and its count.
    """
    best = None
    for _ in range(max_steps):
        mid = math.sqrt(lo * hi)
        n = count_at(mid)
        if best is None or abs(n - target) < abs(best[1] - target):
            best = (mid, n)
        if abs(n - target) <= rel_tol * target:
            break
        if n > target:
            lo = mid
        else:
            hi = mid
    return best


# ---------------------------------------------------------------------------
# visualization

def project_embeddings_rgb(embeddings: np.ndarray) -> np.ndarray:
    """Colors from the first three principal components, each scaled to [0, 1].

    Each component is oriented so that its largest-magnitude loading is
    positive. Channels without variance are set to 0.5. Embeddings with
    fewer than three dimensions are zero-padded.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError("embeddings must be a 2-D array")
    if e.shape[1] < 3:
        e = np.concatenate([e, np.zeros((len(e), 3 - e.shape[1]))], axis=1)
    out = np.full((len(e), 3), 0.5)
    if len(e) == 0:
        return out
    X = e - e.mean(axis=0)
    scale = max(1.0, float(np.abs(e).max()))
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    for c in range(3):
        if c >= len(s) or s[c] <= 1e-9 * scale * math.sqrt(len(e)):
            continue
        axis = vt[c]
        if axis[np.argmax(np.abs(axis))] < 0:
            axis = -axis
        y = X @ axis
        span = y.max() - y.min()
        if span > 1e-12 * scale:
            out[:, c] = (y - y.min()) / span
    return out
