"""Gated mixtures of Kronecker-product adapters with matmul-only application."""

from moka.adapter import (
    KronFactorPair,
    MixtureAdapter,
    PairShape,
    adapted_forward,
    apply_mixture,
    apply_pair,
    gates,
    init_adapter,
    materialize_delta,
)
from moka.dense import ShapeError, SizeCapError
from moka.grad import AdapterGradients, backward_mixture, finite_difference_check
from moka.shapes import ShapeConfig, count_trainable_params, preset, validate_config

__all__ = [
    "AdapterGradients",
    "KronFactorPair",
    "MixtureAdapter",
    "PairShape",
    "ShapeConfig",
    "ShapeError",
    "SizeCapError",
    "adapted_forward",
    "apply_mixture",
    "apply_pair",
    "backward_mixture",
    "count_trainable_params",
    "finite_difference_check",
    "gates",
    "init_adapter",
    "materialize_delta",
    "preset",
    "validate_config",
]
