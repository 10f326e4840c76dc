"""Training loop for the local point embedder.

Each step samples one breadth-first subgraph per cloud in the batch, embeds
its points from augmented neighborhoods, evaluates the contrastive loss on
the induced edges and applies a clipped Adam update.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .cloud import NeighborhoodTable, PointCloud
from .embed import (Batch, EmbedderConfig, EmbedderParams, forward_batch, backward_batch,
                    init_params, make_batch, save_params)
from .gmp import (GMPConfig, augment_features, gmp_edge_weights, lambda_from_normalized,
                  min_superpoint_size, solve_gmp)
from .graph import AdjacencyGraph, classify_edges
from .loss import LossConfig, compute_inter_edge_weights, contrastive_loss

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    decay_epochs: tuple = (20, 35, 45)
    decay_factor: float = 0.7
    batch_clouds: int = 16
    subgraph_size: int = 10000
    lr: float = 1e-2
    clip: float = 1.0
    seed: int = 0
    noise_std: float = 0.03
    noise_clamp: float = 0.1
    loss: LossConfig = field(default_factory=LossConfig)
    # partition used by the cross-partition weighting during training
    gmp: GMPConfig = field(default_factory=GMPConfig)

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if not self.clip > 0:
            raise ValueError("clip must be positive")
        if list(self.decay_epochs) != sorted(self.decay_epochs):
            raise ValueError("decay epochs must be sorted")
        if any(e >= self.epochs or e < 1 for e in self.decay_epochs):
            raise ValueError(f"decay epochs must lie in [1, epochs), got {self.decay_epochs}")
        if self.batch_clouds < 1 or self.subgraph_size < 1:
            raise ValueError("batch_clouds and subgraph_size must be >= 1")
        if self.noise_std < 0 or self.noise_clamp < 0:
            raise ValueError("noise parameters must be non-negative")


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Rate used during 1-based ``epoch``; decay events take effect after their epoch."""
    n = sum(1 for d in config.decay_epochs if d < epoch)
    return config.lr * config.decay_factor ** n


# ---------------------------------------------------------------------------
# sampling and augmentation

@dataclass(frozen=True)
class SubgraphSample:
    vertices: np.ndarray  # original ids in visiting order
    graph: AdjacencyGraph  # induced, relabelled 0..len-1 in the order of ``vertices``
    edge_ids: np.ndarray  # kept edges of the parent graph
    whole_cloud: bool = False


def sample_training_subgraph(cloud: PointCloud, graph: AdjacencyGraph, size: int,
                             rng: np.random.Generator) -> SubgraphSample:
    """Breadth-first region of ``size`` vertices around a uniformly drawn seed.

    Neighbors are visited in increasing index order. If the seed's component
    runs out first, growth continues from a fresh random unvisited seed.
    """
    n = graph.num_vertices
    if cloud.n != n:
        raise ValueError("cloud and graph sizes differ")
    if size >= n:
        whole = size > n
        if whole:
            log.warning("subgraph size %d exceeds cloud size %d, using the whole cloud", size, n)
        verts = np.arange(n)
        sub, kept = graph.subgraph(verts)
        return SubgraphSample(verts, sub, kept, whole)
    if size < 1:
        raise ValueError("subgraph size must be >= 1")
    indptr, indices, _ = graph.csr
    visited = np.zeros(n, dtype=bool)
    order = []
    while len(order) < size:
        free = np.flatnonzero(~visited)
        seed = int(free[rng.integers(len(free))])
        visited[seed] = True
        queue = deque([seed])
        while queue and len(order) < size:
            v = queue.popleft()
            order.append(v)
            for u in indices[indptr[v]:indptr[v + 1]]:
                if not visited[u]:
                    visited[u] = True
                    queue.append(u)
    verts = np.asarray(order, dtype=np.int64)
    sub, kept = graph.subgraph(verts)
    return SubgraphSample(verts, sub, kept)


def rotate_z(positions: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the vertical axis through the origin."""
    c, s = math.cos(angle), math.sin(angle)
    out = np.array(positions, dtype=np.float64, copy=True)
    x, y = positions[:, 0], positions[:, 1]
    out[:, 0] = c * x - s * y
    out[:, 1] = s * x + c * y
    return out


def augment_batch(batch: Batch, rng: np.random.Generator, config: TrainConfig) -> Batch:
    """Add clamped Gaussian noise to normalized offsets and radiometry."""
    if config.noise_std == 0:
        return batch

    def noise(shape):
        return np.clip(rng.normal(0.0, config.noise_std, size=shape), -config.noise_clamp, config.noise_clamp)

    return Batch(batch.rel + noise(batch.rel.shape), batch.rad.copy(), batch.elevation.copy(),
                 batch.R + noise(batch.R.shape), batch.r + noise(batch.r.shape))


def _concat(batches: list[Batch]) -> Batch:
    return Batch(*(np.concatenate([getattr(b, f) for b in batches])
                   for f in ("rel", "rad", "elevation", "R", "r")))


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def zeros(cls, params: EmbedderParams) -> "AdamState":
        return cls(0, params.zeros_like(), params.zeros_like())

    def to_arrays(self) -> dict:
        out = {"adam.step": np.array([float(self.step)])}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, params: EmbedderParams) -> "AdamState":
        try:
            return cls(int(arrays["adam.step"][0]),
                       {k: arrays[f"adam.m.{k}"].reshape(v.shape) for k, v in params.tensors.items()},
                       {k: arrays[f"adam.v.{k}"].reshape(v.shape) for k, v in params.tensors.items()})
        except KeyError as exc:
            raise ValueError(f"checkpoint lacks optimizer state {exc}") from None


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))


def clip_gradients(grads: dict, clip: float) -> tuple[dict, float]:
    """Scale ``grads`` so that their global norm is at most ``clip``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise FloatingPointError("non-finite gradient, step rejected")
    if norm <= clip:
        return grads, norm
    scale = clip / norm
    out = {k: g * scale for k, g in grads.items()}
    # rounding may leave the result a hair above the bound
    while global_norm(out) > clip:
        scale = np.nextafter(scale, 0.0)
        out = {k: g * scale for k, g in grads.items()}
    return out, norm


def adam_step(params: EmbedderParams, grads: dict, state: AdamState, lr: float,
              clip: float) -> tuple[EmbedderParams, AdamState, float]:
    """Clipped Adam update. Returns new params, new state and the pre-clip gradient norm."""
    if set(grads) != set(params.tensors) or set(state.m) != set(params.tensors):
        raise ValueError("gradient/state tensors do not match the parameters")
    for k, g in grads.items():
        if g.shape != params.tensors[k].shape:
            raise ValueError(f"gradient {k} has shape {g.shape}, expected {params.tensors[k].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {k}, step rejected")
    grads, norm = clip_gradients(grads, clip)
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    tensors, m_new, v_new = {}, {}, {}
    for k, p in params.tensors.items():
        g = grads[k]
        m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g
        tensors[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        m_new[k], v_new[k] = m, v
    new = EmbedderParams(params.config, tensors, {k: b.copy() for k, b in params.buffers.items()})
    return new, AdamState(t, m_new, v_new), norm


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainItem:
    """A training cloud with its neighborhood table and adjacency graph."""

    cloud: PointCloud
    table: NeighborhoodTable
    graph: AdjacencyGraph


@dataclass
class TrainResult:
    params: EmbedderParams
    state: AdamState
    log: list  # (epoch, mean loss, lr)


def batch_loss(embeddings: np.ndarray, sample: SubgraphSample, cloud: PointCloud,
               config: TrainConfig) -> tuple[float, np.ndarray]:
    """Contrastive loss and gradient of one sampled subgraph."""
    g = sample.graph
    obj = cloud.object_ids[sample.vertices]
    cls = classify_edges(g, obj)
    c = g.connectivity
    mu = config.loss.mu_tilde * c
    superpoints = None
    if config.loss.weighting == "cross_partition" and len(cls.inter):
        gcfg = config.gmp
        lam = lambda_from_normalized(1.0, c) if c > 0 else 0.0
        w = gmp_edge_weights(embeddings, g, lam, gcfg.sigma)
        feats = augment_features(embeddings, cloud.positions[sample.vertices], gcfg.alpha_spat)
        n_min = min_superpoint_size(1.0, gcfg.n_min_1)
        superpoints = solve_gmp(feats, g, w, n_min=n_min, config=gcfg).partition
    weights = compute_inter_edge_weights(config.loss.weighting, g, cls, superpoints, obj, mu) \
        if len(cls.inter) else np.zeros(0)
    return contrastive_loss(embeddings, g, cls, weights, config.loss.delta)


def train(items: list[TrainItem], config: TrainConfig, embed_config: EmbedderConfig | None = None,
          init: EmbedderParams | None = None, log_path: str | os.PathLike | None = None,
          checkpoint_dir: str | os.PathLike | None = None, state: AdamState | None = None,
          start_epoch: int = 1) -> TrainResult:
    """Train the embedder on ``items``; returns the final parameters and per-epoch log."""
    if not items:
        raise ValueError("no training clouds")
    for i, it in enumerate(items):
        if it.cloud.object_ids is None:
            raise ValueError(f"training cloud {i} has no object ids")
    params = init.copy() if init is not None else init_params(config.seed, embed_config)
    state = state or AdamState.zeros(params)
    history = []
    if log_path is not None and start_epoch == 1:
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(["epoch", "loss", "lr"])
    per_batch = min(config.batch_clouds, len(items))
    for epoch in range(start_epoch, config.epochs + 1):
        lr = learning_rate(config, epoch)
        # one stream per epoch, so a resumed run draws what an uninterrupted one would
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(items))
        losses = []
        for s in range(0, len(order), per_batch):
            chosen = order[s:s + per_batch]
            parts, samples = [], []
            for ci in chosen:
                it = items[ci]
                size = min(config.subgraph_size, it.cloud.n)
                sample = sample_training_subgraph(it.cloud, it.graph, size, rng)
                angle = rng.uniform(0.0, 2.0 * math.pi)
                pos = rotate_z(it.cloud.positions, angle)
                b = make_batch(it.cloud, it.table, sample.vertices, positions=pos)
                parts.append(augment_batch(b, rng, config))
                samples.append((sample, it.cloud))
            batch = _concat(parts)
            e, cache, new_buffers = forward_batch(batch, params, train=True)
            de = np.zeros_like(e)
            total, start = 0.0, 0
            for sample, cloud in samples:
                k = len(sample.vertices)
                value, grad = batch_loss(e[start:start + k], sample, cloud, config)
                total += value
                de[start:start + k] = grad
                start += k
            loss = total / len(samples)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {s // per_batch}")
            grads = backward_batch(de / len(samples), params, cache)
            try:
                params, state, _ = adam_step(params, grads, state, lr, config.clip)
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, batch {s // per_batch}: {exc}") from None
            params.buffers.update(new_buffers)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        history.append((epoch, mean_loss, lr))
        log.info("epoch %d loss %.6f lr %.3g", epoch, mean_loss, lr)
        if log_path is not None:
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow([epoch, repr(mean_loss), repr(lr)])
        if checkpoint_dir is not None:
            save_checkpoint(os.path.join(checkpoint_dir, f"epoch_{epoch:03d}.spw"), params, state, epoch)
    return TrainResult(params, state, history)


def save_checkpoint(path: str | os.PathLike, params: EmbedderParams, state: AdamState, epoch: int) -> None:
    extra = state.to_arrays()
    extra["train.epoch"] = np.array([float(epoch)])
    save_params(params, path, extra=extra)
