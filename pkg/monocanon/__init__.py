"""Monotone-warp canonicalization of image models."""

from .canon import (
    AdaptedNetwork,
    DecCanonicalizer,
    OracleCanonicalizer,
    VanillaCanonicalizer,
    adapted_forward,
    build_adapted_classifier,
    wrap_equivariant,
    wrap_invariant,
)
from .const import __version__
from .dec import AndersonConfig, DecNet, solve_fixed_point
from .image_warp import apply_warp, apply_warp_inverse, warp_backward
from .metrics import equivariance_error, evaluate, invariance_error
from .warp import PiecewiseMonotone1D, Warp2D, WarpSampler

__all__ = [
    "AdaptedNetwork",
    "AndersonConfig",
    "DecCanonicalizer",
    "DecNet",
    "OracleCanonicalizer",
    "PiecewiseMonotone1D",
    "VanillaCanonicalizer",
    "Warp2D",
    "WarpSampler",
    "__version__",
    "adapted_forward",
    "apply_warp",
    "apply_warp_inverse",
    "build_adapted_classifier",
    "equivariance_error",
    "evaluate",
    "invariance_error",
    "solve_fixed_point",
    "warp_backward",
    "wrap_equivariant",
    "wrap_invariant",
]
