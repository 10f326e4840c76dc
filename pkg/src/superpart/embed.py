"""Local Point Embedder: spatial transform, PointNet-style MLPs and exact gradients.

All tensors in the batched code paths have shape ``(B, k, C)``: ``B``
neighborhoods of ``k`` elements each. Point-features use ``k = 1``.
Parameters are kept in a flat ordered dict; gradients mirror its keys.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .cloud import Neighborhood, NeighborhoodTable, PointCloud

RAD_EPS = 1e-8
NORM_EPS = 1e-5
BN_MOMENTUM = 0.1
NORM_MODES = ("batch", "group", "none")


@dataclass(frozen=True)
class EmbedderConfig:
    d: int = 3
    m: int = 4
    stn_conv: tuple = (16, 64)
    stn_fc: tuple = (32, 16)
    lpe_conv: tuple = (32, 128)
    lpe_fc: tuple = (64, 32, 32)
    norm: str = "batch"
    groups: int = 4
    set_in: int | None = None  # overrides 3 + d
    point_in: int | None = None  # overrides 6 + d

    def __post_init__(self):
        if self.norm not in NORM_MODES:
            raise ValueError(f"norm must be one of {NORM_MODES}")
        for name in ("stn_conv", "stn_fc", "lpe_conv", "lpe_fc"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if self.norm == "group":
            widths = self.stn_conv + self.stn_fc + self.lpe_conv + self.lpe_fc
            bad = [w for w in widths if w % self.groups]
            if bad:
                raise ValueError(f"widths {bad} not divisible by {self.groups} groups")
        if not self.lpe_conv:
            raise ValueError("lpe_conv needs at least one layer")

    @property
    def n_set_in(self) -> int:
        return 3 + self.d if self.set_in is None else self.set_in

    @property
    def n_point_in(self) -> int:
        return 6 + self.d if self.point_in is None else self.point_in

    @property
    def use_stn(self) -> bool:
        return bool(self.stn_conv)

    def layers(self):
        """Yield ``(prefix, fan_in, fan_out, hidden)`` in declaration order."""
        if self.use_stn:
            prev = 3
            for i, w in enumerate(self.stn_conv):
                yield f"stn.conv{i}", prev, w, True
                prev = w
            for i, w in enumerate(self.stn_fc):
                yield f"stn.fc{i}", prev, w, True
                prev = w
            yield "stn.out", prev, 4, False
        prev = self.n_set_in
        for i, w in enumerate(self.lpe_conv):
            yield f"mlp1.{i}", prev, w, True
            prev = w
        prev += self.n_point_in
        for i, w in enumerate(self.lpe_fc):
            yield f"mlp2.{i}", prev, w, True
            prev = w
        yield "mlp2.out", prev, self.m, False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class EmbedderParams:
    config: EmbedderConfig
    tensors: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(self.config, {k: v.copy() for k, v in self.tensors.items()},
                              {k: v.copy() for k, v in self.buffers.items()})

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


@dataclass(frozen=True)
class TransformedNeighborhood:
    P_tilde: np.ndarray
    p_tilde: np.ndarray
    rad: float
    omega: np.ndarray


def parameter_count(config: EmbedderConfig | None = None) -> int:
    config = config or EmbedderConfig()
    n = 0
    for _, fin, fout, hidden in config.layers():
        n += fin * fout + fout
        if hidden and config.norm != "none":
            n += 2 * fout
    return n


def init_params(seed: int = 0, config: EmbedderConfig | None = None) -> EmbedderParams:
    """Glorot-uniform linear layers; the transform head starts at the identity."""
    config = config or EmbedderConfig()
    rng = np.random.default_rng(seed)
    tensors, buffers = {}, {}
    for name, fin, fout, hidden in config.layers():
        if name == "stn.out":
            tensors[name + ".W"] = np.zeros((fin, fout))
            tensors[name + ".b"] = np.array([1.0, 0.0, 0.0, 1.0])
        else:
            lim = np.sqrt(6.0 / (fin + fout))
            tensors[name + ".W"] = rng.uniform(-lim, lim, size=(fin, fout))
            tensors[name + ".b"] = np.zeros(fout)
        if hidden and config.norm != "none":
            tensors[name + ".gamma"] = np.ones(fout)
            tensors[name + ".beta"] = np.zeros(fout)
            if config.norm == "batch":
                buffers[name + ".mean"] = np.zeros(fout)
                buffers[name + ".var"] = np.ones(fout)
    return EmbedderParams(config, tensors, buffers)


# ---------------------------------------------------------------------------
# layer primitives

def _norm_forward(h, name, params, train, cache, new_buffers):
    cfg = params.config
    g, b = params.tensors[name + ".gamma"], params.tensors[name + ".beta"]
    if cfg.norm == "batch":
        if train:
            mu = h.mean(axis=(0, 1))
            var = h.var(axis=(0, 1))
            cnt = h.shape[0] * h.shape[1]
            unbiased = var * cnt / max(cnt - 1, 1)
            new_buffers[name + ".mean"] = (1 - BN_MOMENTUM) * params.buffers[name + ".mean"] + BN_MOMENTUM * mu
            new_buffers[name + ".var"] = (1 - BN_MOMENTUM) * params.buffers[name + ".var"] + BN_MOMENTUM * unbiased
        else:
            mu, var = params.buffers[name + ".mean"], params.buffers[name + ".var"]
        inv = 1.0 / np.sqrt(var + NORM_EPS)
        xhat = (h - mu) * inv
        cache[name + ".norm"] = ("batch", train, xhat, inv)
    else:
        B, k, C = h.shape
        G = cfg.groups
        hg = h.reshape(B, k, G, C // G)
        mu = hg.mean(axis=(1, 3), keepdims=True)
        var = hg.var(axis=(1, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + NORM_EPS)
        xhat = ((hg - mu) * inv).reshape(B, k, C)
        cache[name + ".norm"] = ("group", True, xhat, inv)
    return xhat * g + b


def _norm_backward(dy, name, params, cache, grads):
    kind, train, xhat, inv = cache[name + ".norm"]
    g = params.tensors[name + ".gamma"]
    grads[name + ".gamma"] += np.einsum("bkc,bkc->c", dy, xhat)
    grads[name + ".beta"] += dy.sum(axis=(0, 1))
    dxhat = dy * g
    if kind == "batch":
        if not train:
            return dxhat * inv
        cnt = dy.shape[0] * dy.shape[1]
        s1 = dxhat.sum(axis=(0, 1))
        s2 = np.einsum("bkc,bkc->c", dxhat, xhat)
        return inv * (dxhat - s1 / cnt - xhat * (s2 / cnt))
    B, k, C = dy.shape
    G = params.config.groups
    dg = dxhat.reshape(B, k, G, C // G)
    xg = xhat.reshape(B, k, G, C // G)
    cnt = k * (C // G)
    s1 = dg.sum(axis=(1, 3), keepdims=True)
    s2 = (dg * xg).sum(axis=(1, 3), keepdims=True)
    return (inv * (dg - s1 / cnt - xg * (s2 / cnt))).reshape(B, k, C)


def _dense_forward(h, name, hidden, params, train, cache, new_buffers):
    W, b = params.tensors[name + ".W"], params.tensors[name + ".b"]
    cache[name + ".in"] = h
    z = h @ W + b
    if not hidden:
        return z
    a = np.maximum(z, 0.0)
    cache[name + ".mask"] = z > 0
    if params.config.norm == "none":
        return a
    return _norm_forward(a, name, params, train, cache, new_buffers)


def _dense_backward(dy, name, hidden, params, cache, grads, need_input=True):
    if hidden:
        if params.config.norm != "none":
            dy = _norm_backward(dy, name, params, cache, grads)
        dy = dy * cache[name + ".mask"]
    h = cache[name + ".in"]
    C_in = h.shape[-1]
    grads[name + ".W"] += h.reshape(-1, C_in).T @ dy.reshape(-1, dy.shape[-1])
    grads[name + ".b"] += dy.sum(axis=(0, 1))
    if need_input:
        return dy @ params.tensors[name + ".W"].T
    return None


def _maxpool_forward(h, name, cache):
    idx = h.argmax(axis=1)  # (B, C), first maximum on ties
    cache[name] = (idx, h.shape)
    return np.take_along_axis(h, idx[:, None, :], axis=1)


def _maxpool_backward(dy, name, cache):
    idx, shape = cache[name]
    out = np.zeros(shape, dtype=dy.dtype)
    np.put_along_axis(out, idx[:, None, :], dy, axis=1)
    return out


# ---------------------------------------------------------------------------
# batched network

@dataclass
class Batch:
    """Inputs for ``B`` points: normalized neighbor offsets and point descriptors."""

    rel: np.ndarray  # (B, k, 3) offsets divided by rad
    rad: np.ndarray  # (B,)
    elevation: np.ndarray  # (B,)
    R: np.ndarray  # (B, k, d)
    r: np.ndarray  # (B, d)

    def __len__(self):
        return len(self.rel)


def normalize_neighborhoods(centers: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Center on the query point and scale by the RMS distance to it (floored at ``RAD_EPS``)."""
    D = P - centers[:, None, :]
    rad = np.sqrt(np.einsum("bkc,bkc->b", D, D) / P.shape[1])
    rad = np.maximum(rad, RAD_EPS)
    return D / rad[:, None, None], rad


def make_batch(cloud: PointCloud, table: NeighborhoodTable, idx: np.ndarray | None = None,
               positions: np.ndarray | None = None) -> Batch:
    """Gather neighborhoods of points ``idx`` (all by default).

    ``positions`` may override the cloud's positions, e.g. for a rotated copy.
    """
    pos = cloud.positions if positions is None else positions
    idx = np.arange(cloud.n) if idx is None else np.asarray(idx)
    nb = table.neighbor_ids[idx]
    rel, rad = normalize_neighborhoods(pos[idx], pos[nb])
    return Batch(rel, rad, pos[idx, 2].copy(), cloud.radiometry[nb], cloud.radiometry[idx])


def _forward(batch: Batch, params: EmbedderParams, train: bool, cache: dict, new_buffers: dict):
    cfg = params.config
    B, k, _ = batch.rel.shape
    rel = batch.rel
    if cfg.use_stn:
        h = rel
        for i, _w in enumerate(cfg.stn_conv):
            h = _dense_forward(h, f"stn.conv{i}", True, params, train, cache, new_buffers)
        h = _maxpool_forward(h, "stn.pool", cache)
        for i, _w in enumerate(cfg.stn_fc):
            h = _dense_forward(h, f"stn.fc{i}", True, params, train, cache, new_buffers)
        omega = _dense_forward(h, "stn.out", False, params, train, cache, new_buffers).reshape(B, 2, 2)
    else:
        omega = np.broadcast_to(np.eye(2, dtype=rel.dtype), (B, 2, 2))
    xy = np.einsum("bkj,bjl->bkl", rel[..., :2], omega)
    P_tilde = np.concatenate([xy, rel[..., 2:3]], axis=2)
    X = np.concatenate([P_tilde, batch.R.astype(rel.dtype, copy=False)], axis=2)
    x = np.concatenate([batch.elevation[:, None], batch.rad[:, None], omega.reshape(B, 4),
                        batch.r.astype(rel.dtype, copy=False)], axis=1)
    h = X
    for i, _w in enumerate(cfg.lpe_conv):
        h = _dense_forward(h, f"mlp1.{i}", True, params, train, cache, new_buffers)
    g = _maxpool_forward(h, "mlp1.pool", cache)
    h = np.concatenate([g, x[:, None, :]], axis=2)
    for i, _w in enumerate(cfg.lpe_fc):
        h = _dense_forward(h, f"mlp2.{i}", True, params, train, cache, new_buffers)
    out = _dense_forward(h, "mlp2.out", False, params, train, cache, new_buffers)[:, 0, :]
    norm = np.sqrt(np.einsum("bc,bc->b", out, out))
    e = out / norm[:, None]
    cache.update(rel=rel, omega=omega, P_tilde=P_tilde, x=x, e=e, out_norm=norm, g_dim=g.shape[2])
    return e


def forward_batch(batch: Batch, params: EmbedderParams, train: bool = False):
    """Embed a batch. Returns ``(embeddings, cache, new_buffers)``.

    In training mode batch statistics feed the normalization layers and the
    updated running statistics are returned rather than written in place.
    """
    cache, new_buffers = {}, {}
    e = _forward(batch, params, train, cache, new_buffers)
    return e, cache, new_buffers


def backward_batch(de: np.ndarray, params: EmbedderParams, cache: dict) -> dict:
    """Gradient of ``sum(de * e)`` with respect to every parameter tensor."""
    cfg = params.config
    grads = params.zeros_like()
    e, norm = cache["e"], cache["out_norm"]
    if de.shape != e.shape:
        raise ValueError(f"upstream gradient shape {de.shape} != embeddings {e.shape}")
    dout = (de - e * np.einsum("bc,bc->b", e, de)[:, None]) / norm[:, None]
    dh = _dense_backward(dout[:, None, :], "mlp2.out", False, params, cache, grads)
    for i in reversed(range(len(cfg.lpe_fc))):
        dh = _dense_backward(dh, f"mlp2.{i}", True, params, cache, grads)
    gdim = cache["g_dim"]
    dg, dx = dh[..., :gdim], dh[:, 0, gdim:]
    dh = _maxpool_backward(dg, "mlp1.pool", cache)
    for i in reversed(range(len(cfg.lpe_conv))):
        dh = _dense_backward(dh, f"mlp1.{i}", True, params, cache, grads, need_input=i > 0 or cfg.use_stn)
    if not cfg.use_stn:
        return grads
    B = len(e)
    dxy = dh[..., :2]
    domega = np.einsum("bkj,bkl->bjl", cache["rel"][..., :2], dxy).reshape(B, 4) + dx[:, 2:6]
    dh = _dense_backward(domega[:, None, :], "stn.out", False, params, cache, grads)
    for i in reversed(range(len(cfg.stn_fc))):
        dh = _dense_backward(dh, f"stn.fc{i}", True, params, cache, grads)
    dh = _maxpool_backward(dh, "stn.pool", cache)
    for i in reversed(range(len(cfg.stn_conv))):
        dh = _dense_backward(dh, f"stn.conv{i}", True, params, cache, grads, need_input=i > 0)
    return grads


# ---------------------------------------------------------------------------
# single-neighborhood and whole-cloud API

def spatial_transform(nbhd: Neighborhood, params: EmbedderParams) -> TransformedNeighborhood:
    """Normalize one neighborhood and rotate its horizontal coordinates by the learned 2x2 matrix."""
    P = np.asarray(nbhd.P, dtype=np.float64)
    if P.ndim != 2 or len(P) == 0:
        raise ValueError("empty neighborhood")
    rel, rad = normalize_neighborhoods(np.asarray(nbhd.center, dtype=np.float64)[None], P[None])
    cache: dict = {}
    if params.config.use_stn:
        h = rel
        for i, _ in enumerate(params.config.stn_conv):
            h = _dense_forward(h, f"stn.conv{i}", True, params, False, cache, {})
        h = _maxpool_forward(h, "stn.pool", cache)
        for i, _ in enumerate(params.config.stn_fc):
            h = _dense_forward(h, f"stn.fc{i}", True, params, False, cache, {})
        omega = _dense_forward(h, "stn.out", False, params, False, cache, {}).reshape(2, 2)
    else:
        omega = np.eye(2)
    P_tilde = np.concatenate([rel[0, :, :2] @ omega, rel[0, :, 2:3]], axis=1)
    p_tilde = np.concatenate([[nbhd.center[2], rad[0]], omega.reshape(4)])
    return TransformedNeighborhood(P_tilde, p_tilde, float(rad[0]), omega)


def lpe_forward(X: np.ndarray, x: np.ndarray, params: EmbedderParams) -> np.ndarray:
    """Embed one set-feature ``X`` (k x set_in) and point-feature ``x`` (point_in,)."""
    cfg = params.config
    X = np.asarray(X, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.n_set_in or x.shape != (cfg.n_point_in,):
        raise ValueError(f"expected X (k, {cfg.n_set_in}) and x ({cfg.n_point_in},), "
                         f"got {X.shape} and {x.shape}")
    cache: dict = {}
    h = X[None]
    for i, _ in enumerate(cfg.lpe_conv):
        h = _dense_forward(h, f"mlp1.{i}", True, params, False, cache, {})
    h = np.concatenate([h.max(axis=1, keepdims=True), x[None, None, :]], axis=2)
    for i, _ in enumerate(cfg.lpe_fc):
        h = _dense_forward(h, f"mlp2.{i}", True, params, False, cache, {})
    out = _dense_forward(h, "mlp2.out", False, params, False, cache, {})[0, 0]
    return out / np.linalg.norm(out)


def embed_cloud(cloud: PointCloud, table: NeighborhoodTable, params: EmbedderParams,
                chunk: int = 4096, dtype=np.float64) -> np.ndarray:
    """Inference-mode embeddings for every point, computed in fixed-size chunks."""
    if table.neighbor_ids.shape[0] != cloud.n:
        raise ValueError("neighborhood table does not match the cloud")
    if cloud.d != params.config.d:
        raise ValueError(f"cloud has d={cloud.d} radiometry channels, model expects {params.config.d}")
    run = cast_params(params, dtype)
    out = np.empty((cloud.n, params.config.m))
    for s in range(0, cloud.n, chunk):
        idx = np.arange(s, min(s + chunk, cloud.n))
        batch = cast_batch(make_batch(cloud, table, idx), dtype)
        out[idx] = forward_batch(batch, run, train=False)[0]
    return out


def backward(cloud: PointCloud, table: NeighborhoodTable, params: EmbedderParams,
             upstream_grads: np.ndarray, train: bool = False) -> dict:
    """Parameter gradients of ``sum_i <upstream_i, e_i>`` over the whole cloud."""
    upstream_grads = np.asarray(upstream_grads, dtype=np.float64)
    if upstream_grads.shape != (cloud.n, params.config.m):
        raise ValueError(f"upstream gradient must be ({cloud.n}, {params.config.m}), "
                         f"got {upstream_grads.shape}")
    _, cache, _ = forward_batch(make_batch(cloud, table), params, train=train)
    return backward_batch(upstream_grads, params, cache)


def cast_params(params: EmbedderParams, dtype) -> EmbedderParams:
    if all(v.dtype == dtype for v in params.tensors.values()):
        return params
    return EmbedderParams(params.config, {k: v.astype(dtype) for k, v in params.tensors.items()},
                          {k: v.astype(dtype) for k, v in params.buffers.items()})


def cast_batch(batch: Batch, dtype) -> Batch:
    if batch.rel.dtype == dtype:
        return batch
    return Batch(*(a.astype(dtype) for a in (batch.rel, batch.rad, batch.elevation, batch.R, batch.r)))


# ---------------------------------------------------------------------------
# weight files

MAGIC = b"SPEMBW\x00\x01"
VERSION = 1


class WeightFileError(ValueError):
    pass


def _pack_tensors(fh, arrays):
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise WeightFileError(f"truncated weight file while reading {what}")
    return buf


def save_params(params: EmbedderParams, path: str | os.PathLike, extra: dict | None = None) -> None:
    """Write config, tensors and running statistics; ``extra`` holds optional named arrays
    (e.g. optimizer state) appended after the model block."""
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    extra = extra or {}
    meta = json.dumps({k: list(np.shape(v)) for k, v in extra.items()}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(cfg)))
        fh.write(cfg)
        _pack_tensors(fh, params.tensors.values())
        _pack_tensors(fh, params.buffers.values())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        _pack_tensors(fh, (extra[k] for k in sorted(extra)))


def load_params(path: str | os.PathLike, config: EmbedderConfig | None = None,
                with_extra: bool = False):
    """Read a weight file; if ``config`` is given it must match the stored one."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise WeightFileError("not a superpart weight file (bad magic)")
        version, ncfg = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise WeightFileError(f"weight file version {version} unsupported (expected {VERSION})")
        stored = EmbedderConfig.from_dict(json.loads(_read_exact(fh, ncfg, "config").decode()))
        if config is not None and stored != config:
            raise WeightFileError(f"weight file config {stored} does not match requested {config}")
        template = init_params(0, stored)

        def read_like(ref):
            return np.frombuffer(_read_exact(fh, ref.size * 8, "tensors"), dtype="<f8").reshape(ref.shape).copy()

        tensors = {k: read_like(v) for k, v in template.tensors.items()}
        buffers = {k: read_like(v) for k, v in template.buffers.items()}
        (nmeta,) = struct.unpack("<I", _read_exact(fh, 4, "extra header"))
        meta = json.loads(_read_exact(fh, nmeta, "extra header").decode())
        extra = {k: read_like(np.empty(meta[k])) for k in sorted(meta)}
        if fh.read(1):
            raise WeightFileError("trailing bytes after weight data")
    params = EmbedderParams(stored, tensors, buffers)
    return (params, extra) if with_extra else params
