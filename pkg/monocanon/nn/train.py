"""Training configuration, optimizers and the single training step."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from monocanon.enum import OptimizerKind
from monocanon.exceptions import TrainingError

from .const import ADAM_BETAS, ADAM_EPS

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    ``aux_weight`` is the weight of an extra consistency loss (InvL or EquL);
    ``freeze_canonicalizer`` keeps canonicalizer parameters fixed.
    """

    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 5
    optimizer: OptimizerKind = OptimizerKind.ADAM
    seed: int = 0
    task_weight: float = 1.0
    aux_weight: float = 0.0
    aux_samples: int = 1
    freeze_canonicalizer: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.optimizer, str):
            object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.aux_samples < 1:
            raise ValueError("batch_size, epochs and aux_samples must be positive")
        if self.task_weight < 0 or self.aux_weight < 0:
            raise ValueError("loss weights must be non-negative")


@runtime_checkable
class Trainable(Protocol):
    """Anything ``train_step`` can optimize."""

    def parameters(self) -> dict[str, np.ndarray]:
        """Named parameter arrays, updated in place."""

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple[float, dict]:
        """Scalar loss of a batch and gradients keyed like ``parameters``."""

    def mark_updated(self) -> None:
        """Called after every in-place update."""


class Sgd:
    """Plain stochastic gradient descent."""

    def __init__(self, lr: float) -> None:
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Updates every parameter that has a gradient."""
        for name, grad in grads.items():
            if name in params:
                params[name] -= self.lr * grad


class Adam:
    """Adam with bias correction."""

    def __init__(self, lr: float, betas: tuple = ADAM_BETAS, eps: float = ADAM_EPS) -> None:
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._first: dict[str, np.ndarray] = {}
        self._second: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Updates every parameter that has a gradient."""
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name in sorted(grads):
            if name not in params:
                continue
            grad = grads[name]
            first = self._first.setdefault(name, np.zeros_like(grad))
            second = self._second.setdefault(name, np.zeros_like(grad))
            first *= self.beta1
            first += (1.0 - self.beta1) * grad
            second *= self.beta2
            second += (1.0 - self.beta2) * grad * grad
            params[name] -= self.lr * (first / correction1) / (np.sqrt(second / correction2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    """Optimizer selected by the config."""
    if cfg.optimizer is OptimizerKind.SGD:
        return Sgd(cfg.lr)
    return Adam(cfg.lr)


def train_step(model: Trainable, batch: tuple, cfg: TrainConfig, optimizer=None) -> float:
    """One optimization step on ``batch = (x, y)``; returns the loss before the update."""
    optimizer = optimizer or make_optimizer(cfg)
    x, y = batch
    loss, grads = model.loss_and_grads(x, y)
    bad = sorted(name for name, grad in grads.items() if not np.all(np.isfinite(grad)))
    if not np.isfinite(loss) or bad:
        norms = {name: float(np.linalg.norm(grad)) for name, grad in grads.items()}
        raise TrainingError(
            f"non-finite loss or gradient (loss={loss})",
            diagnostics={"loss": float(loss), "non_finite": bad, "grad_norms": norms},
        )
    params = model.parameters()
    if cfg.freeze_canonicalizer:
        grads = {name: grad for name, grad in grads.items() if not name.startswith(("dec", "energy"))}
    optimizer.step(params, grads)
    model.mark_updated()
    return float(loss)
