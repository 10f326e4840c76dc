"""Preprocessed clouds: voxel pruning, neighborhoods and adjacency, cached as one binary file.

Layout (little-endian): magic, ``<IIIIII`` version, N, d, k, E, flags, then
positions (f8, N x 3), radiometry (f8, N x d), class labels (i8, N, if flag
1), object ids (i8, N, if flag 2), neighbor table (i8, N x k) and edges
(i8, E x 2).
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .cloud import NeighborhoodTable, PointCloud, build_knn, voxel_prune
from .graph import AdjacencyGraph, build_adjacency

MAGIC = b"SPPREP\x00\x01"
VERSION = 1
_HAS_LABELS, _HAS_OBJECTS = 1, 2


class CacheError(ValueError):
    pass


@dataclass(frozen=True)
class PreparedCloud:
    cloud: PointCloud
    table: NeighborhoodTable
    graph: AdjacencyGraph


def prepare(cloud: PointCloud, k: int = 20, k_adj: int = 5, voxel_size: float = 0.0,
            adjacency_radius: float = 0.0) -> PreparedCloud:
    if voxel_size > 0:
        cloud, _ = voxel_prune(cloud, voxel_size)
    table = build_knn(cloud, k)
    graph = build_adjacency(cloud, k_adj, adjacency_radius if adjacency_radius > 0 else None)
    return PreparedCloud(cloud, table, graph)


def save_prepared(prep: PreparedCloud, path: str | os.PathLike) -> None:
    c = prep.cloud
    flags = (_HAS_LABELS if c.class_labels is not None else 0) | (_HAS_OBJECTS if c.object_ids is not None else 0)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIIII", VERSION, c.n, c.d, prep.table.k, prep.graph.num_edges, flags))
        fh.write(c.positions.astype("<f8").tobytes())
        fh.write(c.radiometry.astype("<f8").tobytes())
        if c.class_labels is not None:
            fh.write(c.class_labels.astype("<i8").tobytes())
        if c.object_ids is not None:
            fh.write(c.object_ids.astype("<i8").tobytes())
        fh.write(prep.table.neighbor_ids.astype("<i8").tobytes())
        fh.write(prep.graph.edges.astype("<i8").tobytes())


def load_prepared(path: str | os.PathLike) -> PreparedCloud:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise CacheError(f"{path}: not a prepared-cloud cache (bad magic)")
    off = len(MAGIC)
    if len(data) < off + 24:
        raise CacheError(f"{path}: truncated header")
    version, n, d, k, e, flags = struct.unpack_from("<IIIIII", data, off)
    if version != VERSION:
        raise CacheError(f"{path}: cache version {version} unsupported (expected {VERSION})")
    off += 24

    def take(dtype, shape):
        nonlocal off
        size = int(np.prod(shape)) * 8
        if off + size > len(data):
            raise CacheError(f"{path}: truncated payload at byte {off}")
        arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=off).reshape(shape).copy()
        off += size
        return arr

    pos = take("<f8", (n, 3))
    rad = take("<f8", (n, d))
    labels = take("<i8", (n,)) if flags & _HAS_LABELS else None
    objects = take("<i8", (n,)) if flags & _HAS_OBJECTS else None
    nb = take("<i8", (n, k))
    edges = take("<i8", (e, 2))
    if off != len(data):
        raise CacheError(f"{path}: {len(data) - off} trailing bytes")
    try:
        cloud = PointCloud(pos, rad, labels, objects)
        graph = AdjacencyGraph(n, edges)
    except ValueError as exc:
        raise CacheError(f"{path}: {exc}") from None
    return PreparedCloud(cloud, NeighborhoodTable(k, nb.astype(np.int64)), graph)
