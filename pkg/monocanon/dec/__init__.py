"""Deep Equilibrium Canonicalizer: warp parameters as the fixed point of a learned map."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from monocanon.const import DEFAULT_GRID_SIZE, DEFAULT_MIN_SEGMENT
from monocanon.enum import BackwardMode
from monocanon.exceptions import StructuralError
from monocanon.image_warp import apply_warp_inverse, warp_backward
from monocanon.nn import NetCache, Network, build_dec_net, dec_raw_size
from monocanon.nn.const import DEC_CHANNELS
from monocanon.warp import PiecewiseMonotone1D, Warp2D, uniform_knots

from .anderson import AndersonConfig, DecState, anderson_solve, mixing_weights, picard_config
from .const import DEFAULT_UNROLL_STEPS

_LOGGER = logging.getLogger(__name__)

__all__ = [
    "AndersonConfig",
    "CanonicalizerOutput",
    "DecNet",
    "DecState",
    "DecTape",
    "anderson_solve",
    "constrain",
    "constrain_backward",
    "dec_backward",
    "h_apply",
    "mixing_weights",
    "picard_config",
    "record_tape",
    "solve_fixed_point",
    "unroll",
]


def _layout(grid_n: int, grid_m: int) -> list[int]:
    """Raw entries per 1D function: rows have N segments, columns M."""
    return [grid_n] * (grid_m + 1) + [grid_m] * (grid_n + 1)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _constrain_1d(raw: np.ndarray, min_segment: float) -> np.ndarray:
    segments = raw.size
    if np.all(raw == raw[0]):
        return uniform_knots(segments)
    soft = _softplus(raw)
    increments = min_segment + (1.0 - segments * min_segment) * soft / soft.sum()
    values = np.concatenate(([0.0], np.cumsum(increments)))
    values[-1] = 1.0
    return values


def constrain(raw: np.ndarray, grid_n: int = DEFAULT_GRID_SIZE, grid_m: int = None,
              min_segment: float = DEFAULT_MIN_SEGMENT) -> Warp2D:
    """Maps any finite raw vector onto a valid warp.

    Per 1D function, increment_n = eps + (1 - N eps) softplus(r_n) / sum softplus(r).
    Equal raw entries give exactly uniform values, so zeros give the identity.
    """
    grid_m = grid_n if grid_m is None else grid_m
    raw = np.asarray(raw, dtype=np.float64)
    layout = _layout(grid_n, grid_m)
    if raw.shape != (sum(layout),):
        raise StructuralError(f"raw vector of shape {raw.shape} does not fit grid {grid_n}x{grid_m}")
    funcs = []
    offset = 0
    for segments in layout:
        values = _constrain_1d(raw[offset:offset + segments], min_segment)
        funcs.append(PiecewiseMonotone1D(uniform_knots(segments), values, min_segment))
        offset += segments
    return Warp2D(grid_n, grid_m, tuple(funcs[:grid_m + 1]), tuple(funcs[grid_m + 1:]))


def constrain_backward(raw: np.ndarray, d_values: np.ndarray, grid_n: int = DEFAULT_GRID_SIZE,
                       grid_m: int = None, min_segment: float = DEFAULT_MIN_SEGMENT) -> np.ndarray:
    """Vector-Jacobian product of ``constrain``; ``d_values`` follows ``Warp2D.parameter_vector``."""
    grid_m = grid_n if grid_m is None else grid_m
    raw = np.asarray(raw, dtype=np.float64)
    d_values = np.asarray(d_values, dtype=np.float64)
    d_raw = np.empty_like(raw)
    raw_offset = 0
    value_offset = 0
    for segments in _layout(grid_n, grid_m):
        r = raw[raw_offset:raw_offset + segments]
        dv = d_values[value_offset:value_offset + segments + 1]
        # pinned endpoints carry no gradient
        tail = np.cumsum(dv[1:segments][::-1])[::-1]
        d_inc = np.concatenate((tail, [0.0]))
        soft = _softplus(r)
        total = soft.sum()
        d_share = (1.0 - segments * min_segment) * d_inc
        d_soft = (d_share - np.dot(d_share, soft / total)) / total
        d_raw[raw_offset:raw_offset + segments] = d_soft * _sigmoid(r)
        raw_offset += segments
        value_offset += segments + 1
    return d_raw


@dataclass
class DecNet:
    """Parameters psi of the fixed-point map together with the warp grid they predict."""

    network: Network
    grid_n: int = DEFAULT_GRID_SIZE
    grid_m: int = DEFAULT_GRID_SIZE
    min_segment: float = DEFAULT_MIN_SEGMENT

    def __post_init__(self) -> None:
        head = self.network.specs[-1]
        if head.out_channels != self.raw_size:
            raise StructuralError(f"network emits {head.out_channels} values, warp grid needs {self.raw_size}")

    @classmethod
    def build(cls, in_channels: int, grid_n: int = DEFAULT_GRID_SIZE, grid_m: int = None,
              channels: Sequence[int] = DEC_CHANNELS, seed: int = 0, zero_head: bool = True,
              min_segment: float = DEFAULT_MIN_SEGMENT, name: str = "dec") -> 'DecNet':
        """Conv stack with a (by default zero) linear head."""
        grid_m = grid_n if grid_m is None else grid_m
        network = build_dec_net(in_channels, grid_n, grid_m, channels, seed=seed, zero_head=zero_head, name=name)
        return cls(network, grid_n, grid_m, min_segment)

    @property
    def raw_size(self) -> int:
        """Length of the raw parameter vector."""
        return dec_raw_size(self.grid_n, self.grid_m)

    @property
    def version(self) -> int:
        """Parameter version of the underlying network."""
        return self.network.version

    def identity_raw(self) -> np.ndarray:
        """Raw vector of the identity warp."""
        return np.zeros(self.raw_size)

    def constrain(self, raw: np.ndarray) -> Warp2D:
        """``constrain`` on this grid."""
        return constrain(raw, self.grid_n, self.grid_m, self.min_segment)

    def constrain_backward(self, raw: np.ndarray, d_values: np.ndarray) -> np.ndarray:
        """``constrain_backward`` on this grid."""
        return constrain_backward(raw, d_values, self.grid_n, self.grid_m, self.min_segment)

    def parameters(self) -> dict[str, np.ndarray]:
        """Named parameters of the network."""
        return self.network.parameters()

    def mark_updated(self) -> None:
        """Invalidates recorded tapes."""
        self.network.mark_updated()


@dataclass
class HRecord:
    """Everything one application of h needs for its backward pass."""

    raw: np.ndarray
    warp: Warp2D
    cache: NetCache
    output: np.ndarray


def h_forward(net: DecNet, phi_raw: np.ndarray, img: np.ndarray) -> HRecord:
    """One application of h, recorded."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise StructuralError(f"h expects a (C, H, W) feature map, got {img.shape}")
    raw = np.asarray(phi_raw, dtype=np.float64)
    warp = net.constrain(raw)
    canonical = apply_warp_inverse(img, warp)
    out, cache = net.network.forward(canonical[None])
    return HRecord(raw, warp, cache, out[0])


def h_apply(net: DecNet, phi_raw: np.ndarray, img: np.ndarray) -> np.ndarray:
    """Next raw iterate: the DEC network applied to S^-1(img; constrain(phi_raw))."""
    return h_forward(net, phi_raw, img).output


def h_backward(net: DecNet, record: HRecord, img: np.ndarray, d_out: np.ndarray) -> tuple[dict, np.ndarray, np.ndarray]:
    """Gradients of one recorded application w.r.t. psi, the incoming raw vector and the image."""
    grads, d_canonical = net.network.backward(record.cache, np.asarray(d_out, dtype=np.float64)[None])
    warp_grads = warp_backward(img, record.warp, d_canonical[0], inverse=True)
    d_raw = net.constrain_backward(record.raw, warp_grads.d_warp_values)
    return grads, d_raw, warp_grads.d_pixels


@dataclass
class CanonicalizerOutput:
    """The predicted warp with solver diagnostics."""

    warp: Warp2D
    raw: np.ndarray
    iterations: int
    residual: float
    converged: bool
    state: Optional[DecState] = None


def solve_fixed_point(net: DecNet, img: np.ndarray, phi0: np.ndarray = None,
                      cfg: AndersonConfig = None) -> CanonicalizerOutput:
    """Anderson iteration on h; the warp is constrain of the last map output."""
    cfg = cfg or AndersonConfig()
    z0 = net.identity_raw() if phi0 is None else np.asarray(phi0, dtype=np.float64)
    if z0.shape != (net.raw_size,):
        raise StructuralError(f"phi0 of shape {z0.shape} does not fit raw size {net.raw_size}")
    state = anderson_solve(lambda z: h_apply(net, z, img), z0, cfg)
    return CanonicalizerOutput(
        warp=net.constrain(state.solution),
        raw=state.solution,
        iterations=state.iteration,
        residual=state.residual,
        converged=state.converged,
        state=state,
    )


@dataclass
class DecTape:
    """Recorded applications of h used by the backward pass."""

    mode: BackwardMode
    steps: int
    version: int
    start: np.ndarray
    records: list = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        """Raw vector produced by the last recorded application."""
        return self.records[-1].output


def unroll(net: DecNet, img: np.ndarray, z: np.ndarray, steps: int,
           mode: BackwardMode = BackwardMode.UNROLL) -> DecTape:
    """Applies h ``steps`` times from ``z``, recording every application."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    tape = DecTape(mode, steps, net.version, np.asarray(z, dtype=np.float64))
    current = tape.start
    for _ in range(steps):
        record = h_forward(net, current, img)
        tape.records.append(record)
        current = record.output
    return tape


def record_tape(net: DecNet, img: np.ndarray, solution: CanonicalizerOutput,
                mode: BackwardMode = BackwardMode.PHANTOM, steps: int = DEFAULT_UNROLL_STEPS) -> DecTape:
    """Tape for the backward pass, started from the solver's last input.

    Phantom mode re-applies h once, reproducing ``solution.raw`` exactly;
    unroll mode applies it ``steps`` times.
    """
    if solution.state is None:
        raise StructuralError("solution carries no solver state")
    if mode is BackwardMode.PHANTOM:
        return unroll(net, img, solution.state.last_input, 1, BackwardMode.PHANTOM)
    return unroll(net, img, solution.state.last_input, steps, BackwardMode.UNROLL)


@dataclass
class DecGradients:
    """Gradients of a canonicalization w.r.t. psi, the image and the starting iterate."""

    params: dict
    d_img: np.ndarray
    d_start: np.ndarray


def dec_backward(net: DecNet, img: np.ndarray, tape: DecTape, upstream: np.ndarray,
                 mode: BackwardMode = None) -> DecGradients:
    """Backpropagates ``upstream`` (on the output warp's knot values) through the tape.

    Phantom gradients treat the incoming iterate as a constant; ``d_start``
    is still reported for unrolled tapes.
    """
    if mode is not None and mode is not tape.mode:
        raise StructuralError(f"tape was recorded for {tape.mode}, backward requested {mode}")
    if tape.version != net.version:
        raise StructuralError("stale tape: parameters changed since it was recorded")
    img = np.asarray(img, dtype=np.float64)
    d_raw = net.constrain_backward(tape.output, upstream)
    params: dict = {}
    d_img = np.zeros_like(img)
    for record in reversed(tape.records):
        grads, d_raw, d_pixels = h_backward(net, record, img, d_raw)
        for name, grad in grads.items():
            params[name] = params[name] + grad if name in params else grad
        d_img += d_pixels
    return DecGradients(params, d_img, d_raw)
