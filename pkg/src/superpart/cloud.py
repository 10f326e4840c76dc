"""Point cloud container, PLY I/O, voxel pruning and k-nearest-neighbor tables."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .ply import FORMATS, PlyError, read_ply, write_ply

__all__ = [
    "PointCloud", "NeighborhoodTable", "Neighborhood",
    "load_cloud", "save_cloud", "voxel_prune", "build_knn", "gather_neighborhood",
    "PlyError",
]


@dataclass(frozen=True)
class PointCloud:
    """``N`` points with positions in meters and radiometry scaled to [0, 1].

    ``class_labels`` and ``object_ids`` are optional per-point integer arrays.
    A negative object id marks an unlabeled point.
    """

    positions: np.ndarray
    radiometry: np.ndarray
    class_labels: np.ndarray | None = None
    object_ids: np.ndarray | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be N x 3, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        n = len(pos)
        rad = np.asarray(self.radiometry, dtype=np.float64)
        if rad.ndim == 1 and rad.size == 0:
            rad = np.zeros((n, 0))
        rad = np.ascontiguousarray(rad.reshape(n, -1) if rad.ndim == 1 else rad)
        if rad.shape[0] != n:
            raise ValueError(f"radiometry has {rad.shape[0]} rows, expected {n}")
        if rad.size and (rad.min() < 0.0 or rad.max() > 1.0 or not np.all(np.isfinite(rad))):
            raise ValueError("radiometry must lie within [0, 1]")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "radiometry", rad)
        for name in ("class_labels", "object_ids"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.ascontiguousarray(arr, dtype=np.int64)
                if arr.shape != (n,):
                    raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
                object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def d(self) -> int:
        return self.radiometry.shape[1]

    def subset(self, idx: np.ndarray) -> "PointCloud":
        idx = np.asarray(idx)
        return PointCloud(
            self.positions[idx], self.radiometry[idx],
            None if self.class_labels is None else self.class_labels[idx],
            None if self.object_ids is None else self.object_ids[idx],
        )


@dataclass(frozen=True)
class NeighborhoodTable:
    """Row ``i`` holds the ``k`` nearest neighbors of point ``i``, closest first."""

    k: int
    neighbor_ids: np.ndarray


@dataclass(frozen=True)
class Neighborhood:
    center: np.ndarray  # (3,)
    P: np.ndarray  # (k, 3)
    R: np.ndarray  # (k, d)


def load_cloud(path: str | os.PathLike, format: str | None = None) -> PointCloud:
    """Load a PLY cloud; ``format`` (if given) must match the file header."""
    if format is not None and format not in FORMATS:
        raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")
    cols, _ = read_ply(path, expect_format=format)
    missing = [c for c in ("x", "y", "z") if c not in cols]
    if missing:
        raise PlyError(f"required vertex properties missing: {', '.join(missing)}")
    pos = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)
    if all(c in cols for c in ("red", "green", "blue")):
        rgb = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1)
        scale = 255.0 if rgb.dtype.kind in "ui" else 1.0
        rad = rgb.astype(np.float64) / scale
    elif "intensity" in cols:
        rad = cols["intensity"].astype(np.float64)[:, None]
    else:
        extra = sorted((c for c in cols if c.startswith("radiometry_")), key=lambda c: int(c.split("_")[1]))
        rad = np.stack([cols[c] for c in extra], axis=1).astype(np.float64) if extra \
            else np.zeros((len(pos), 0))
    labels = cols["class_id"].astype(np.int64) if "class_id" in cols else None
    objects = None
    if "object_id" in cols:
        objects = cols["object_id"].astype(np.int64)
        if cols["object_id"].dtype.kind == "u":
            # uint32 max encodes "unlabeled"
            objects[cols["object_id"] == np.iinfo(cols["object_id"].dtype).max] = -1
    return PointCloud(pos, rad, labels, objects)


def save_cloud(cloud: PointCloud, path: str | os.PathLike, format: str = "ply_binary_le",
               superpoint: np.ndarray | None = None, emb_rgb: np.ndarray | None = None) -> None:
    """Write ``cloud`` as PLY, optionally with superpoint ids and embedding colors."""
    cols = [("x", cloud.positions[:, 0].astype(np.float32)),
            ("y", cloud.positions[:, 1].astype(np.float32)),
            ("z", cloud.positions[:, 2].astype(np.float32))]
    if cloud.d == 3:
        rgb = np.rint(cloud.radiometry * 255.0).astype(np.uint8)
        cols += [("red", rgb[:, 0]), ("green", rgb[:, 1]), ("blue", rgb[:, 2])]
    elif cloud.d == 1:
        cols.append(("intensity", cloud.radiometry[:, 0].astype(np.float32)))
    else:
        cols += [(f"radiometry_{c}", cloud.radiometry[:, c].astype(np.float32)) for c in range(cloud.d)]
    if cloud.object_ids is not None:
        oid = cloud.object_ids.copy()
        oid[oid < 0] = np.iinfo(np.uint32).max
        cols.append(("object_id", oid.astype(np.uint32)))
    if cloud.class_labels is not None:
        cols.append(("class_id", cloud.class_labels.astype(np.uint8)))
    if superpoint is not None:
        cols.append(("superpoint", np.asarray(superpoint).astype(np.uint32)))
    if emb_rgb is not None:
        c = np.clip(np.rint(np.asarray(emb_rgb) * 255.0), 0, 255).astype(np.uint8)
        cols += [("emb_r", c[:, 0]), ("emb_g", c[:, 1]), ("emb_b", c[:, 2])]
    write_ply(path, cols, fmt=format)


def _majority(values: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Most frequent value per group, ties resolved toward the smallest value."""
    order = np.lexsort((values, groups))
    g, v = groups[order], values[order]
    new_run = np.ones(len(g), dtype=bool)
    new_run[1:] = (g[1:] != g[:-1]) | (v[1:] != v[:-1])
    starts = np.flatnonzero(new_run)
    counts = np.diff(np.append(starts, len(g)))
    run_g, run_v = g[starts], v[starts]
    # stable sort by (group, -count): first run per group wins, smaller value on ties
    pick = np.lexsort((-counts, run_g))
    first = np.ones(len(pick), dtype=bool)
    first[1:] = run_g[pick][1:] != run_g[pick][:-1]
    out = np.empty(n_groups, dtype=values.dtype)
    out[run_g[pick][first]] = run_v[pick][first]
    return out


def voxel_prune(cloud: PointCloud, voxel_size: float) -> tuple[PointCloud, np.ndarray]:
    """Average points falling in the same cell of a world-anchored voxel grid.

    Returns the pruned cloud and the mapping from original to pruned index.
    """
    if not voxel_size > 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    keys = np.floor(cloud.positions / voxel_size).astype(np.int64)
    _, mapping, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    mapping = mapping.reshape(-1)
    nv = len(counts)
    pos = np.stack([np.bincount(mapping, cloud.positions[:, c], nv) for c in range(3)], axis=1)
    pos /= counts[:, None]
    rad = np.zeros((nv, cloud.d))
    for c in range(cloud.d):
        rad[:, c] = np.bincount(mapping, cloud.radiometry[:, c], nv) / counts
    np.clip(rad, 0.0, 1.0, out=rad)
    labels = None if cloud.class_labels is None else _majority(cloud.class_labels, mapping, nv)
    objects = None if cloud.object_ids is None else _majority(cloud.object_ids, mapping, nv)
    return PointCloud(pos, rad, labels, objects), mapping


def _sq_dist(pos: np.ndarray, rows: np.ndarray, cand: np.ndarray) -> np.ndarray:
    diff = pos[cand] - pos[rows][:, None, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def build_knn(cloud: PointCloud | np.ndarray, k: int) -> NeighborhoodTable:
    """Exact k nearest neighbors (self excluded), ties broken by smaller index."""
    pos = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(pos)
    if k < 1 or n <= k:
        raise ValueError(f"need 1 <= k < N, got k={k}, N={n}")
    tree = cKDTree(pos)
    out = np.empty((n, k), dtype=np.int64)
    todo = np.arange(n)
    q = min(n, k + 4)
    while len(todo):
        _, cand = tree.query(pos[todo], k=q)
        cand = cand.reshape(len(todo), q)
        d2 = _sq_dist(pos, todo, cand)
        horizon = d2.max(axis=1)
        d2[cand == todo[:, None]] = np.inf
        order = _row_lexsort(d2, cand)
        cand = np.take_along_axis(cand, order, 1)
        d2 = np.take_along_axis(d2, order, 1)
        # a k-th distance touching the query horizon may hide tied candidates
        worst = d2[:, k - 1]
        ok = (worst < horizon * (1.0 - 1e-9)) | (q >= n)
        out[todo[ok]] = cand[ok, :k]
        todo = todo[~ok]
        q = min(n, 2 * q)
    return NeighborhoodTable(k, out)


def _row_lexsort(d2: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Per-row argsort by (distance, index)."""
    order = np.argsort(idx, axis=1, kind="stable")
    d_sorted = np.take_along_axis(d2, order, 1)
    order2 = np.argsort(d_sorted, axis=1, kind="stable")
    return np.take_along_axis(order, order2, 1)


def gather_neighborhood(cloud: PointCloud, table: NeighborhoodTable, i: int) -> Neighborhood:
    if not 0 <= i < cloud.n:
        raise IndexError(f"point index {i} out of range for N={cloud.n}")
    ids = table.neighbor_ids[i]
    return Neighborhood(cloud.positions[i].copy(), cloud.positions[ids], cloud.radiometry[ids])
