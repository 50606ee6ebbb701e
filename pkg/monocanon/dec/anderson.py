"""Anderson-accelerated fixed-point iteration."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from monocanon.exceptions import SolverError

from .const import (
    DEFAULT_BETA,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    DEFAULT_WINDOW,
    DIAGNOSTICS_LOGGER,
    TIKHONOV,
    WEIGHT_SUM_FLOOR,
)

_LOGGER = logging.getLogger(__name__)
_DIAGNOSTICS = logging.getLogger(DIAGNOSTICS_LOGGER)


@dataclass(frozen=True)
class AndersonConfig:
    """Window ``m``, relaxation ``beta``, update budget ``max_iters`` and relative tolerance."""

    window: int = DEFAULT_WINDOW
    beta: float = DEFAULT_BETA
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    verbose: bool = False

    def __post_init__(self) -> None:
        if self.window < 1 or self.max_iters < 1:
            raise ValueError("window and max_iters must be >= 1")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")


def picard_config(max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL) -> AndersonConfig:
    """The configuration under which Anderson mixing is plain Picard iteration."""
    return AndersonConfig(window=1, beta=1.0, max_iters=max_iters, tol=tol)


@dataclass
class DecState:
    """Solver history and outcome.

    ``solution`` is the last map output h(z) and ``last_input`` the z it was
    evaluated at; ``iteration`` counts mixing updates.
    """

    history_x: deque
    history_g: deque
    residuals: list = field(default_factory=list)
    iteration: int = 0
    converged: bool = False
    solution: np.ndarray = None
    last_input: np.ndarray = None

    @property
    def residual(self) -> float:
        """Relative residual of the last evaluation."""
        return self.residuals[-1]

    @property
    def abs_residual(self) -> float:
        """Absolute residual ||h(z) - z|| of the last evaluation."""
        return float(np.linalg.norm(self.solution - self.last_input))


def mixing_weights(residuals: np.ndarray) -> np.ndarray:
    """Weights summing to one that minimize ||residuals @ alpha||.

    ``residuals`` holds one residual per column. The normal equations are
    damped relative to their scale.
    """
    count = residuals.shape[1]
    if count == 1:
        return np.ones(1)
    gram = residuals.T @ residuals
    damping = TIKHONOV * max(np.trace(gram) / count, 1.0)
    system = gram + damping * np.eye(count)
    try:
        weights = np.linalg.solve(system, np.ones(count))
    except np.linalg.LinAlgError:
        weights = np.linalg.lstsq(system, np.ones(count), rcond=None)[0]
    total = weights.sum()
    if abs(total) < WEIGHT_SUM_FLOOR:
        return np.full(count, 1.0 / count)
    return weights / total


def anderson_solve(fn: Callable[[np.ndarray], np.ndarray], z0: np.ndarray, cfg: AndersonConfig) -> DecState:
    """Finds z = fn(z).

    Every round evaluates g = fn(z) and its residual relative to
    max(||g||, 1); the loop stops at ``cfg.tol`` or after ``cfg.max_iters``
    mixing updates.
    """
    z = np.array(z0, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise SolverError(0, "initial iterate is not finite")
    state = DecState(deque(maxlen=cfg.window), deque(maxlen=cfg.window))
    while True:
        g = np.asarray(fn(z), dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise SolverError(state.iteration, "map produced a non-finite iterate")
        residual = float(np.linalg.norm(g - z) / max(np.linalg.norm(g), 1.0))
        state.residuals.append(residual)
        state.solution, state.last_input = g, z
        if cfg.verbose:
            _DIAGNOSTICS.info(json.dumps({"iter": state.iteration, "residual": residual}))
        if residual <= cfg.tol:
            state.converged = True
            break
        if state.iteration >= cfg.max_iters:
            break
        state.history_x.append(z)
        state.history_g.append(g)
        xs = np.stack(state.history_x, axis=1)
        gs = np.stack(state.history_g, axis=1)
        alpha = mixing_weights(gs - xs)
        z_next = gs @ alpha
        if cfg.beta != 1.0:
            z_next = cfg.beta * z_next + (1.0 - cfg.beta) * (xs @ alpha)
        state.iteration += 1
        if not np.all(np.isfinite(z_next)):
            raise SolverError(state.iteration, "mixing produced a non-finite iterate")
        z = z_next
    if not state.converged:
        _LOGGER.warning("Fixed point not reached after %s updates (residual %s)", state.iteration, state.residual)
    return state
