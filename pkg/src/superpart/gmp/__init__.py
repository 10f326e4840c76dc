"""Generalized minimal partition solver and its hyper-parameter helpers."""
from .kernels import BACKENDS, compiled_available, get_backend
from .solver import (
    GMPConfig,
    GMPSolution,
    augment_features,
    extract_partition,
    gmp_edge_weights,
    gmp_energy,
    lambda_from_normalized,
    min_superpoint_size,
    partition_energy,
    solve_gmp,
)

__all__ = [
    "BACKENDS", "compiled_available", "get_backend",
    "GMPConfig", "GMPSolution", "augment_features", "extract_partition", "gmp_edge_weights",
    "gmp_energy", "lambda_from_normalized", "min_superpoint_size", "partition_energy", "solve_gmp",
]
