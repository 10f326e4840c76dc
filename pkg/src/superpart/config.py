"""Flat ``key = value`` pipeline configuration."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .embed import EmbedderConfig
from .gmp import GMPConfig
from .loss import LossConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # neighborhoods and graph
    k: int = 20
    k_adj: int = 5
    adjacency_radius: float = 0.0
    voxel_size: float = 0.0
    # embedder
    m: int = 4
    lpe_conv: tuple = (32, 128)
    lpe_fc: tuple = (64, 32, 32)
    stn_conv: tuple = (16, 64)
    stn_fc: tuple = (32, 16)
    norm: str = "batch"
    # partition
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
    # loss
    delta: float = 0.3
    mu_tilde: float = 5.0
    weighting: str = "cross_partition"
    # training
    epochs: int = 50
    decay_epochs: tuple = (20, 35, 45)
    decay_factor: float = 0.7
    batch_clouds: int = 16
    subgraph_size: int = 10000
    lr: float = 1e-2
    clip: float = 1.0
    noise_std: float = 0.03
    noise_clamp: float = 0.1
    seed: int = 0

    def __post_init__(self):
        # build the component configs once so that invalid values fail early
        try:
            self.embedder_config()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.k < 1 or self.k_adj < 1:
            raise ConfigError("k and k_adj must be >= 1")
        if self.voxel_size < 0 or self.adjacency_radius < 0:
            raise ConfigError("voxel_size and adjacency_radius must be >= 0")

    def embedder_config(self, d: int = 3) -> EmbedderConfig:
        return EmbedderConfig(d=d, m=self.m, stn_conv=self.stn_conv, stn_fc=self.stn_fc,
                              lpe_conv=self.lpe_conv, lpe_fc=self.lpe_fc, norm=self.norm)

    def gmp_config(self) -> GMPConfig:
        return GMPConfig(lambda_tilde=self.lambda_tilde, sigma=self.sigma, alpha_spat=self.alpha_spat,
                         n_min_1=self.n_min_1, ramp=self.ramp, max_iters=self.max_iters,
                         split_iters=self.split_iters, max_sweeps=self.max_sweeps,
                         lloyd_iters=self.lloyd_iters, agglomerative_start=self.agglomerative_start,
                         perturb_pairs=self.perturb_pairs)

    def loss_config(self) -> LossConfig:
        return LossConfig(delta=self.delta, mu_tilde=self.mu_tilde, weighting=self.weighting)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, decay_epochs=self.decay_epochs,
                           decay_factor=self.decay_factor, batch_clouds=self.batch_clouds,
                           subgraph_size=self.subgraph_size, lr=self.lr, clip=self.clip, seed=self.seed,
                           noise_std=self.noise_std, noise_clamp=self.noise_clamp,
                           loss=self.loss_config(), gmp=self.gmp_config())

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    # -- text form ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        return (base or cls()).with_overrides(parse_pairs(text.splitlines()))

    @classmethod
    def from_file(cls, path: str | os.PathLike, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, base)

    def with_overrides(self, pairs: list[tuple[int, str, str]]) -> "PipelineConfig":
        """Apply ``(line number, key, raw value)`` triples; unknown keys are rejected."""
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for lineno, key, raw in pairs:
            where = f"line {lineno}: " if lineno else ""
            if key not in types:
                raise ConfigError(f"{where}unknown key {key!r}")
            if key in changes:
                raise ConfigError(f"{where}duplicate key {key!r}")
            changes[key] = _coerce(getattr(self, key), raw, f"{where}{key}")
        try:
            return dataclasses.replace(self, **changes)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def parse_pairs(lines) -> list[tuple[int, str, str]]:
    """``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = []
    for i, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {i}: expected 'key = value', got {line.strip()!r}")
        key, value = body.split("=", 1)
        out.append((i, key.strip(), value.strip()))
    return out


def _coerce(default, raw: str, what: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            raw = raw.strip("[]() ")
            return tuple(int(x) for x in raw.split(",") if x.strip()) if raw else ()
        return raw
    except ValueError:
        raise ConfigError(f"{what}: cannot parse {raw!r} as {type(default).__name__}") from None
