"""Executable check that a gradient-descent canonical element is a fixed point of the gradient map."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from monocanon.exceptions import SolverError
from monocanon.image_warp import apply_warp_inverse, coordinate_image
from monocanon.nn import dec_raw_size

from . import constrain
from .anderson import AndersonConfig, anderson_solve
from .energy import TemplateEnergy, gd_canonicalize

_LOGGER = logging.getLogger(__name__)


@dataclass
class FixedPointReport:
    """Agreement between the GD minimizer and the Anderson fixed point for one seed."""

    seed: int
    gd_iterations: int
    anderson_iterations: int
    max_abs_diff: float
    grad_norm: float
    step: float
    passed: bool

    def to_dict(self) -> dict:
        """JSON-ready form."""
        return asdict(self)


def check_claim1(seed: int, size: int = 16, grid: int = 2, diff_tol: float = 1e-4,
                 grad_tol: float = 1e-5, gd_steps: int = 5000) -> FixedPointReport:
    """Runs GD on a synthetic template energy, then Anderson on Phi - eta * grad E from zero.

    The image is a coordinate ramp with random channel gains and the template
    is the image unwarped by a random target warp.
    """
    _LOGGER.debug(">> check_claim1(seed=%s, size=%s, grid=%s)", seed, size, grid)
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.5, 2.0, size=2)
    img = coordinate_image(size, size) * gains[:, None, None]
    target = rng.normal(0.0, 0.3, dec_raw_size(grid, grid))
    template = apply_warp_inverse(img, constrain(target, grid))
    energy = TemplateEnergy(template, grid_n=grid)

    gd = gd_canonicalize(energy, img, lr=1.0, steps=gd_steps, grad_tol=grad_tol * 1e-3)
    eta = gd.step

    def gradient_map(z: np.ndarray) -> np.ndarray:
        return z - eta * energy.value_and_grad(img, z)[1]

    try:
        state = anderson_solve(gradient_map, np.zeros_like(gd.raw),
                               AndersonConfig(window=5, max_iters=2000, tol=1e-11))
    except SolverError as err:
        _LOGGER.warning("Anderson failed on the gradient map for seed %s: %s", seed, err)
        return FixedPointReport(seed, gd.iterations, err.iteration, float("inf"), gd.grad_norm, eta, False)
    diff = float(np.max(np.abs(state.solution - gd.raw)))
    passed = diff < diff_tol and gd.grad_norm < grad_tol
    _LOGGER.debug("Seed %s: max diff %s, grad norm %s, passed %s", seed, diff, gd.grad_norm, passed)
    return FixedPointReport(seed, gd.iterations, state.iteration, diff, gd.grad_norm, eta, passed)
