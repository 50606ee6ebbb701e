"""Energy functions over warps and the optimization-based canonicalizers built on them."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from monocanon.const import DEFAULT_GRID_SIZE, DEFAULT_MIN_SEGMENT
from monocanon.exceptions import OptimizerError, StructuralError, UsageError
from monocanon.image_warp import apply_warp_inverse, warp_backward
from monocanon.nn import Network, build_energy_net, dec_raw_size
from monocanon.warp import Warp2D

from . import constrain, constrain_backward
from .const import ARMIJO_C1, FIBRE_WEIGHT, MAX_ENERGY_INCREASES, MIN_STEP, SECOND_ORDER_DELTA

_LOGGER = logging.getLogger(__name__)


@dataclass
class EnergyEval:
    """Energy value with gradients w.r.t. the raw warp vector, the image and the energy parameters."""

    value: float
    d_raw: np.ndarray
    d_img: np.ndarray = None
    params: dict = field(default_factory=dict)


class Energy(ABC):
    """A scalar score of how canonical S^-1(img; constrain(raw)) looks."""

    def __init__(self, grid_n: int = DEFAULT_GRID_SIZE, grid_m: int = None,
                 min_segment: float = DEFAULT_MIN_SEGMENT) -> None:
        self.grid_n = grid_n
        self.grid_m = grid_n if grid_m is None else grid_m
        self.min_segment = min_segment

    @abstractmethod
    def feature_eval(self, feature: np.ndarray) -> tuple[float, np.ndarray, dict]:
        """Energy of a canonical feature map, its gradient and parameter gradients."""

    def feature_value(self, feature: np.ndarray) -> float:
        """Energy of a canonical feature map."""
        return self.feature_eval(feature)[0]

    def raw_penalty(self, raw: np.ndarray) -> tuple[float, np.ndarray]:
        """Extra term on the raw vector itself."""
        return 0.0, np.zeros_like(raw)

    def constrain(self, raw: np.ndarray) -> Warp2D:
        """Warp of a raw vector on this energy's grid."""
        return constrain(raw, self.grid_n, self.grid_m, self.min_segment)

    def constrain_size(self) -> int:
        """Length of the raw vector."""
        return dec_raw_size(self.grid_n, self.grid_m)

    def evaluate(self, img: np.ndarray, raw: np.ndarray) -> EnergyEval:
        """E(S^-1(img; constrain(raw))) with every gradient."""
        img = np.asarray(img, dtype=np.float64)
        warp = self.constrain(raw)
        value, d_feature, params = self.feature_eval(apply_warp_inverse(img, warp))
        grads = warp_backward(img, warp, d_feature, inverse=True)
        d_raw = constrain_backward(raw, grads.d_warp_values, self.grid_n, self.grid_m, self.min_segment)
        penalty, d_penalty = self.raw_penalty(raw)
        return EnergyEval(value + penalty, d_raw + d_penalty, grads.d_pixels, params)

    def value_and_grad(self, img: np.ndarray, raw: np.ndarray) -> tuple[float, np.ndarray]:
        """Energy and its gradient w.r.t. the raw vector."""
        result = self.evaluate(img, raw)
        return result.value, result.d_raw

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameters; none by default."""
        return {}


class EnergyNet(Energy):
    """A CNN scoring canonical features."""

    def __init__(self, network: Network, grid_n: int = DEFAULT_GRID_SIZE, grid_m: int = None,
                 min_segment: float = DEFAULT_MIN_SEGMENT) -> None:
        super().__init__(grid_n, grid_m, min_segment)
        self.network = network

    @classmethod
    def build(cls, in_channels: int, grid_n: int = DEFAULT_GRID_SIZE, seed: int = 0,
              name: str = "energy", **kwargs) -> 'EnergyNet':
        """Three stride-2 convs, global pool and a scalar head."""
        return cls(build_energy_net(in_channels, seed=seed, name=name), grid_n, **kwargs)

    def feature_eval(self, feature: np.ndarray) -> tuple[float, np.ndarray, dict]:
        out, cache = self.network.forward(np.asarray(feature)[None])
        params, d_feature = self.network.backward(cache, np.ones_like(out))
        return float(out[0, 0]), d_feature[0], params

    def feature_value(self, feature: np.ndarray) -> float:
        return float(self.network(np.asarray(feature)[None])[0, 0])

    def batch_values(self, features: np.ndarray) -> np.ndarray:
        """Energies of a batch of features."""
        return self.network(features)[:, 0]

    def parameters(self) -> dict[str, np.ndarray]:
        return self.network.parameters()

    def mark_updated(self) -> None:
        """Invalidates network caches."""
        self.network.mark_updated()


class TemplateEnergy(Energy):
    """Half the squared distance of the canonical feature to a template.

    A penalty on the mean raw entry of every 1D function pins the
    one-dimensional fibres of ``constrain`` so the minimizer is isolated.
    """

    def __init__(self, template: np.ndarray, fibre_weight: float = FIBRE_WEIGHT, **kwargs) -> None:
        super().__init__(**kwargs)
        self.template = np.asarray(template, dtype=np.float64)
        self.fibre_weight = fibre_weight

    def feature_eval(self, feature: np.ndarray) -> tuple[float, np.ndarray, dict]:
        diff = feature - self.template
        return 0.5 * float(np.sum(diff * diff)), diff, {}

    def raw_penalty(self, raw: np.ndarray) -> tuple[float, np.ndarray]:
        layout = [self.grid_n] * (self.grid_m + 1) + [self.grid_m] * (self.grid_n + 1)
        value = 0.0
        grad = np.empty_like(raw)
        offset = 0
        for segments in layout:
            mean = raw[offset:offset + segments].mean()
            value += 0.5 * self.fibre_weight * mean * mean
            grad[offset:offset + segments] = self.fibre_weight * mean / segments
            offset += segments
        return value, grad


class ParameterEnergy(Energy):
    """Half the squared distance of the raw vector to a target; ignores the image."""

    def __init__(self, target_raw: np.ndarray, **kwargs) -> None:
        super().__init__(**kwargs)
        self.target_raw = np.asarray(target_raw, dtype=np.float64)

    def feature_eval(self, feature: np.ndarray) -> tuple[float, np.ndarray, dict]:
        return 0.0, np.zeros_like(feature), {}

    def evaluate(self, img: np.ndarray, raw: np.ndarray) -> EnergyEval:
        diff = np.asarray(raw, dtype=np.float64) - self.target_raw
        return EnergyEval(0.5 * float(diff @ diff), diff, np.zeros_like(np.asarray(img, dtype=np.float64)))


class ConstantEnergy(Energy):
    """The same energy everywhere."""

    def __init__(self, value: float = 0.0, **kwargs) -> None:
        super().__init__(**kwargs)
        self.value = value

    def feature_eval(self, feature: np.ndarray) -> tuple[float, np.ndarray, dict]:
        return self.value, np.zeros_like(feature), {}


class FeatureDistanceEnergy(Energy):
    """Squared distance to a reference feature, without a raw penalty."""

    def __init__(self, reference: np.ndarray, **kwargs) -> None:
        super().__init__(**kwargs)
        self.reference = np.asarray(reference, dtype=np.float64)

    def feature_eval(self, feature: np.ndarray) -> tuple[float, np.ndarray, dict]:
        diff = feature - self.reference
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size, {}


@dataclass
class GdResult:
    """Outcome of gradient-descent canonicalization."""

    warp: Warp2D
    raw: np.ndarray
    energies: list
    grad_norm: float
    step: float
    iterations: int


def gd_canonicalize(energy: Energy, img: np.ndarray, phi0: np.ndarray = None, lr: float = 0.1,
                    steps: int = 2000, line_search: bool = True, grad_tol: float = 0.0) -> GdResult:
    """Gradient descent on raw warp parameters.

    With ``line_search`` every step backtracks from min(lr, 2 * previous step)
    until the Armijo condition holds, so the energy trace never increases.
    """
    if not lr > 0:
        raise ValueError("lr must be positive")
    _LOGGER.debug(">> gd_canonicalize(energy=%s, lr=%s, steps=%s)", type(energy).__name__, lr, steps)
    raw = np.zeros(energy.constrain_size()) if phi0 is None else np.array(phi0, dtype=np.float64)
    value, grad = energy.value_and_grad(img, raw)
    energies = [value]
    step = lr
    increases = 0
    iterations = 0
    for iterations in range(1, steps + 1):
        grad_sq = float(grad @ grad)
        if np.sqrt(grad_sq) <= grad_tol or grad_sq == 0.0:
            iterations -= 1
            break
        if line_search:
            trial = min(lr, 2.0 * step)
            while True:
                candidate = raw - trial * grad
                cand_value, cand_grad = energy.value_and_grad(img, candidate)
                if cand_value <= value - ARMIJO_C1 * trial * grad_sq or trial < MIN_STEP:
                    break
                trial *= 0.5
            step = trial
        else:
            candidate = raw - lr * grad
            cand_value, cand_grad = energy.value_and_grad(img, candidate)
        if not np.isfinite(cand_value):
            raise OptimizerError(f"non-finite energy at step {iterations}")
        increases = increases + 1 if cand_value > value else 0
        if increases >= MAX_ENERGY_INCREASES:
            raise OptimizerError(f"energy increased for {increases} consecutive steps (step {iterations})")
        raw, value, grad = candidate, cand_value, cand_grad
        energies.append(value)
    return GdResult(energy.constrain(raw), raw, energies, float(np.linalg.norm(grad)), step, iterations)


def vanilla_canonicalize(energy: Energy, img: np.ndarray, candidates: Sequence[Warp2D]) -> tuple[int, Warp2D]:
    """Index and warp of the candidate minimizing E(S^-1(img; w)); the lowest index wins ties."""
    if not candidates:
        raise UsageError("candidate set is empty")
    if not any(w.is_identity for w in candidates):
        raise UsageError("candidate set must contain the identity")
    scores = np.array([energy.feature_value(apply_warp_inverse(img, w)) for w in candidates])
    index = int(np.argmin(scores))
    return index, candidates[index]


@dataclass
class GdTape:
    """Forward record of an unrolled differentiable gradient-descent canonicalization."""

    img: np.ndarray
    lr: float
    iterates: list
    features: list
    energies: list

    @property
    def output(self) -> np.ndarray:
        """Final raw vector."""
        return self.iterates[-1]


def unrolled_gd_canonicalize(energy: Energy, img: np.ndarray, phi0: np.ndarray = None,
                             lr: float = 0.1, steps: int = 10) -> GdTape:
    """``steps`` fixed-size GD steps, keeping every iterate and canonical feature for reverse mode."""
    img = np.asarray(img, dtype=np.float64)
    raw = np.zeros(energy.constrain_size()) if phi0 is None else np.array(phi0, dtype=np.float64)
    tape = GdTape(img, lr, [raw], [], [])
    for _ in range(steps):
        result = energy.evaluate(img, raw)
        tape.features.append(apply_warp_inverse(img, energy.constrain(raw)))
        tape.energies.append(result.value)
        raw = raw - lr * result.d_raw
        tape.iterates.append(raw)
    return tape


def unrolled_gd_backward(energy: Energy, tape: GdTape, d_output: np.ndarray,
                         delta: float = SECOND_ORDER_DELTA) -> EnergyEval:
    """Reverse mode through every recorded GD step.

    The Hessian-vector and mixed second-order products are central
    differences of first-order gradients along the adjoint.
    """
    adjoint = np.asarray(d_output, dtype=np.float64).copy()
    if adjoint.shape != tape.output.shape:
        raise StructuralError(f"upstream {adjoint.shape} does not match raw size {tape.output.shape}")
    params: dict = {}
    d_img = np.zeros_like(tape.img)
    for raw in reversed(tape.iterates[:-1]):
        scale = float(np.linalg.norm(adjoint))
        if scale == 0.0:
            continue
        direction = adjoint / scale
        plus = energy.evaluate(tape.img, raw + delta * direction)
        minus = energy.evaluate(tape.img, raw - delta * direction)
        factor = -tape.lr * scale / (2.0 * delta)
        for name in plus.params:
            contribution = factor * (plus.params[name] - minus.params[name])
            params[name] = params[name] + contribution if name in params else contribution
        d_img += factor * (plus.d_img - minus.d_img)
        adjoint = adjoint + factor * (plus.d_raw - minus.d_raw)
    return EnergyEval(0.0, adjoint, d_img, params)
