"""Monotone piecewise-linear warps of the unit interval and the unit square."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .const import (
    _LOGGER,
    DEFAULT_CONCENTRATION,
    DEFAULT_GRID_SIZE,
    DEFAULT_MIN_SEGMENT,
    DEFAULT_SPREAD,
    DOMAIN_SLACK,
    MERGE_TOLERANCE,
)
from .exceptions import InvalidWarpError, WarpDomainError

ArrayLike = Union[float, Sequence[float], np.ndarray]

# floor used when a resampled composition has to be made strictly increasing again
_REFIT_FLOOR = 1e-9


def _frozen(values: ArrayLike) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _check_domain(x: ArrayLike, what: str = "x") -> np.ndarray:
    """Validates points against [0, 1] and clips rounding noise."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise WarpDomainError(f"{what} is not finite")
    if np.any(arr < -DOMAIN_SLACK) or np.any(arr > 1.0 + DOMAIN_SLACK):
        raise WarpDomainError(f"{what} outside [0, 1]: min {arr.min()}, max {arr.max()}")
    return np.clip(arr, 0.0, 1.0)


def uniform_knots(n_segments: int) -> np.ndarray:
    """Returns the uniform knot grid {0, 1/N, ..., 1}."""
    return np.linspace(0.0, 1.0, n_segments + 1)


def derive_seed(master: int, *keys: int) -> int:
    """Counter-based split of a master seed into an independent child seed."""
    seq = np.random.SeedSequence([int(master)] + [int(k) for k in keys])
    return int(seq.generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class PiecewiseMonotone1D:
    """A strictly increasing piecewise-linear bijection of [0, 1].

    ``knots`` are the breakpoints x_0..x_N and ``values`` the images phi_0..phi_N.
    Both are pinned to 0 and 1 at the ends and every segment is at least
    ``min_segment`` wide in both directions.
    """

    knots: np.ndarray
    values: np.ndarray
    min_segment: float = DEFAULT_MIN_SEGMENT

    def __post_init__(self) -> None:
        knots = _frozen(self.knots)
        values = _frozen(self.values)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise InvalidWarpError("knots and values must be 1D arrays of equal length >= 2")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise InvalidWarpError("knots and values must be finite")
        if knots[0] != 0.0 or knots[-1] != 1.0 or values[0] != 0.0 or values[-1] != 1.0:
            raise InvalidWarpError("endpoints must be pinned to 0 and 1")
        knot_gaps = np.diff(knots)
        value_gaps = np.diff(values)
        if np.any(knot_gaps <= 0.0) or np.any(value_gaps <= 0.0):
            raise InvalidWarpError("knots and values must be strictly increasing")
        floor = self.min_segment - DOMAIN_SLACK
        if knot_gaps.min() < floor or value_gaps.min() < floor:
            raise InvalidWarpError(
                f"segment narrower than min_segment={self.min_segment}: "
                f"knot gap {knot_gaps.min()}, value gap {value_gaps.min()}"
            )

    @classmethod
    def identity(cls, n_segments: int = DEFAULT_GRID_SIZE,
                 min_segment: float = DEFAULT_MIN_SEGMENT) -> 'PiecewiseMonotone1D':
        """The identity on a uniform knot grid."""
        knots = uniform_knots(n_segments)
        return cls(knots, knots, min_segment)

    @classmethod
    def from_increments(cls, increments: ArrayLike,
                        min_segment: float = DEFAULT_MIN_SEGMENT) -> 'PiecewiseMonotone1D':
        """Builds a warp on uniform knots from value increments summing to one."""
        inc = np.asarray(increments, dtype=np.float64)
        values = np.concatenate(([0.0], np.cumsum(inc)))
        values[-1] = 1.0
        return cls(uniform_knots(inc.size), values, min_segment)

    @property
    def n_segments(self) -> int:
        """Number of linear pieces."""
        return self.knots.size - 1

    @cached_property
    def slopes(self) -> np.ndarray:
        """Slope of every segment."""
        return np.diff(self.values) / np.diff(self.knots)

    @property
    def is_identity(self) -> bool:
        """True when every value equals its knot."""
        return bool(np.array_equal(self.knots, self.values))

    def segment_index(self, x: np.ndarray) -> np.ndarray:
        """Segment holding each x; a point on an interior knot belongs to the right segment."""
        idx = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def _locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = self.segment_index(x)
        left = self.knots[idx]
        t = (x - left) / (self.knots[idx + 1] - left)
        return idx, t

    def __call__(self, x: ArrayLike) -> Union[float, np.ndarray]:
        """Evaluates l(x) by segment-local linear interpolation."""
        arr = _check_domain(x)
        idx, t = self._locate(arr)
        out = (1.0 - t) * self.values[idx] + t * self.values[idx + 1]
        return float(out) if np.ndim(out) == 0 else out

    def solve(self, u: ArrayLike) -> Union[float, np.ndarray]:
        """Evaluates l^-1(u); a value on a knot resolves against the lower segment."""
        arr = _check_domain(u, "u")
        idx = np.clip(np.searchsorted(self.values, arr, side="left") - 1, 0, self.n_segments - 1)
        low = self.values[idx]
        t = (arr - low) / (self.values[idx + 1] - low)
        out = (1.0 - t) * self.knots[idx] + t * self.knots[idx + 1]
        return float(out) if np.ndim(out) == 0 else out

    def local_scale_factor(self, x: ArrayLike) -> Union[float, np.ndarray]:
        """dl/dx at x, taking the right-hand segment on knots."""
        arr = _check_domain(x)
        out = self.slopes[self.segment_index(arr)]
        return float(out) if np.ndim(out) == 0 else out

    def inverse(self) -> 'PiecewiseMonotone1D':
        """The exact inverse: knots and values swap roles."""
        return PiecewiseMonotone1D(self.values, self.knots, self.min_segment)

    def compose(self, inner: 'PiecewiseMonotone1D') -> 'PiecewiseMonotone1D':
        """Exact piecewise-linear composition ``self o inner``.

        The breakpoints are the knots of ``inner`` together with the preimages of
        this warp's knots under ``inner``. Knot spacing of a composition is not
        bounded below, so the result only promises strict monotonicity.
        """
        preimages = np.atleast_1d(inner.solve(self.knots[1:-1]))
        union = np.union1d(inner.knots, preimages)
        keep = np.concatenate(([True], np.diff(union) > MERGE_TOLERANCE))
        union = union[keep]
        union[0] = 0.0
        union[-1] = 1.0
        values = np.asarray(self(inner(union)), dtype=np.float64)
        values[0] = 0.0
        values[-1] = 1.0
        return PiecewiseMonotone1D(union, values, min_segment=0.0)

    def value_weights(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Segment index and the weights of values[idx], values[idx + 1] in l(x)."""
        idx, t = self._locate(x)
        return idx, 1.0 - t, t

    def knot_weights(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Segment index and dl(x)/dknots[idx], dl(x)/dknots[idx + 1]."""
        idx, t = self._locate(x)
        slope = self.slopes[idx]
        return idx, -slope * (1.0 - t), -slope * t

    def max_deviation(self, other: 'PiecewiseMonotone1D', samples: int = 1001) -> float:
        """Sup-norm distance to another warp over a dense grid plus both knot sets."""
        xs = np.union1d(np.linspace(0.0, 1.0, samples), np.union1d(self.knots, other.knots))
        return float(np.max(np.abs(self(xs) - other(xs))))


@dataclass(frozen=True, eq=False)
class Warp2D:
    """A monotone warp of the unit square built from per-row and per-column 1D warps.

    ``row_funcs[j]`` is l^{y_j} (a function of x on grid row y_j = j/M) and
    ``col_funcs[i]`` is l^{x_i} (a function of y on grid column x_i = i/N).
    l_X blends neighbouring rows linearly in y, l_Y neighbouring columns in x.
    """

    grid_n: int
    grid_m: int
    row_funcs: tuple
    col_funcs: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "row_funcs", tuple(self.row_funcs))
        object.__setattr__(self, "col_funcs", tuple(self.col_funcs))
        if self.grid_n < 1 or self.grid_m < 1:
            raise InvalidWarpError("grid resolution must be positive")
        if len(self.row_funcs) != self.grid_m + 1:
            raise InvalidWarpError(f"expected {self.grid_m + 1} row functions, got {len(self.row_funcs)}")
        if len(self.col_funcs) != self.grid_n + 1:
            raise InvalidWarpError(f"expected {self.grid_n + 1} column functions, got {len(self.col_funcs)}")
        for func in self.row_funcs + self.col_funcs:
            if not isinstance(func, PiecewiseMonotone1D):
                raise InvalidWarpError("row and column functions must be PiecewiseMonotone1D")

    @classmethod
    def identity(cls, grid_n: int = DEFAULT_GRID_SIZE, grid_m: int = None,
                 min_segment: float = DEFAULT_MIN_SEGMENT) -> 'Warp2D':
        """The identity warp."""
        grid_m = grid_n if grid_m is None else grid_m
        return cls(
            grid_n,
            grid_m,
            tuple(PiecewiseMonotone1D.identity(grid_n, min_segment) for _ in range(grid_m + 1)),
            tuple(PiecewiseMonotone1D.identity(grid_m, min_segment) for _ in range(grid_n + 1)),
        )

    @classmethod
    def separable(cls, row: PiecewiseMonotone1D, col: PiecewiseMonotone1D,
                  grid_n: int = None, grid_m: int = None) -> 'Warp2D':
        """A warp whose l_X depends on x only and l_Y on y only."""
        grid_n = row.n_segments if grid_n is None else grid_n
        grid_m = col.n_segments if grid_m is None else grid_m
        return cls(grid_n, grid_m, (row,) * (grid_m + 1), (col,) * (grid_n + 1))

    @classmethod
    def from_parameters(cls, vector: ArrayLike, grid_n: int, grid_m: int,
                        min_segment: float = DEFAULT_MIN_SEGMENT) -> 'Warp2D':
        """Rebuilds a uniform-knot warp from ``parameter_vector`` output."""
        vec = np.asarray(vector, dtype=np.float64)
        n_rows = (grid_m + 1) * (grid_n + 1)
        if vec.size != n_rows + (grid_n + 1) * (grid_m + 1):
            raise InvalidWarpError(f"parameter vector of size {vec.size} does not fit grid {grid_n}x{grid_m}")
        rows = vec[:n_rows].reshape(grid_m + 1, grid_n + 1)
        cols = vec[n_rows:].reshape(grid_n + 1, grid_m + 1)
        return cls(
            grid_n,
            grid_m,
            tuple(PiecewiseMonotone1D(uniform_knots(grid_n), r, min_segment) for r in rows),
            tuple(PiecewiseMonotone1D(uniform_knots(grid_m), c, min_segment) for c in cols),
        )

    @property
    def row_positions(self) -> np.ndarray:
        """y coordinate of every grid row."""
        return uniform_knots(self.grid_m)

    @property
    def col_positions(self) -> np.ndarray:
        """x coordinate of every grid column."""
        return uniform_knots(self.grid_n)

    @property
    def funcs(self) -> tuple:
        """All constituent 1D warps, rows first."""
        return self.row_funcs + self.col_funcs

    @cached_property
    def is_identity(self) -> bool:
        """True when every constituent function is the identity."""
        return all(f.is_identity for f in self.funcs)

    @cached_property
    def is_separable(self) -> bool:
        """True when all rows agree and all columns agree."""
        def _same(funcs: tuple) -> bool:
            first = funcs[0]
            return all(
                np.array_equal(f.knots, first.knots) and np.array_equal(f.values, first.values)
                for f in funcs[1:]
            )
        return _same(self.row_funcs) and _same(self.col_funcs)

    @property
    def min_segment(self) -> float:
        """Smallest configured segment width among the constituent functions."""
        return min(f.min_segment for f in self.funcs)

    def parameter_vector(self) -> np.ndarray:
        """All knot values, rows then columns."""
        return np.concatenate([f.values for f in self.funcs])

    def knot_vector(self) -> np.ndarray:
        """All knot positions, in the ``parameter_vector`` layout."""
        return np.concatenate([f.knots for f in self.funcs])

    @staticmethod
    def _blend_weights(positions: np.ndarray, across: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        j = np.clip(np.searchsorted(positions, across, side="right") - 1, 0, positions.size - 2)
        t = (across - positions[j]) / (positions[j + 1] - positions[j])
        return j, t

    @classmethod
    def _blend(cls, funcs: tuple, positions: np.ndarray, along: np.ndarray,
               across: np.ndarray) -> np.ndarray:
        j, t = cls._blend_weights(positions, across)
        evaluated = np.stack([np.atleast_1d(f(along)) for f in funcs])
        cols = np.arange(along.size)
        return (1.0 - t) * evaluated[j, cols] + t * evaluated[j + 1, cols]

    def _points(self, x: ArrayLike, y: ArrayLike) -> tuple[np.ndarray, np.ndarray, tuple]:
        xs = _check_domain(x, "x")
        ys = _check_domain(y, "y")
        xs, ys = np.broadcast_arrays(xs, ys)
        return xs.ravel(), ys.ravel(), xs.shape

    def __call__(self, x: ArrayLike, y: ArrayLike) -> tuple:
        """Evaluates (l_X(x, y), l_Y(x, y))."""
        xs, ys, shape = self._points(x, y)
        u = self._blend(self.row_funcs, self.row_positions, xs, ys).reshape(shape)
        v = self._blend(self.col_funcs, self.col_positions, ys, xs).reshape(shape)
        if shape == ():
            return float(u), float(v)
        return u, v

    def jacobian(self, x: ArrayLike, y: ArrayLike) -> np.ndarray:
        """Analytic 2x2 Jacobian [[dlX/dx, dlX/dy], [dlY/dx, dlY/dy]] at each point."""
        xs, ys, shape = self._points(x, y)
        cols = np.arange(xs.size)
        out = np.empty((xs.size, 2, 2))
        for axis, (funcs, positions, along, across) in enumerate((
            (self.row_funcs, self.row_positions, xs, ys),
            (self.col_funcs, self.col_positions, ys, xs),
        )):
            j, t = self._blend_weights(positions, across)
            vals = np.stack([f(along) for f in funcs])
            slopes = np.stack([f.slopes[f.segment_index(along)] for f in funcs])
            d_along = (1.0 - t) * slopes[j, cols] + t * slopes[j + 1, cols]
            d_across = (vals[j + 1, cols] - vals[j, cols]) / (positions[j + 1] - positions[j])
            out[:, axis, axis] = d_along
            out[:, axis, 1 - axis] = d_across
        return out.reshape(shape + (2, 2))

    def _vjp(self, x: ArrayLike, y: ArrayLike, d_u: np.ndarray, d_v: np.ndarray,
             wrt: str) -> np.ndarray:
        xs, ys, shape = self._points(x, y)
        d_u = np.broadcast_to(np.asarray(d_u, dtype=np.float64), shape).ravel()
        d_v = np.broadcast_to(np.asarray(d_v, dtype=np.float64), shape).ravel()
        grads = []
        for funcs, positions, along, across, upstream in (
            (self.row_funcs, self.row_positions, xs, ys, d_u),
            (self.col_funcs, self.col_positions, ys, xs, d_v),
        ):
            j, t = self._blend_weights(positions, across)
            for k, func in enumerate(funcs):
                grad = np.zeros(func.knots.size)
                weight = np.where(j == k, 1.0 - t, 0.0) + np.where(j + 1 == k, t, 0.0)
                coef = weight * upstream
                live = coef != 0.0
                if np.any(live):
                    if wrt == "values":
                        idx, w_left, w_right = func.value_weights(along[live])
                    else:
                        idx, w_left, w_right = func.knot_weights(along[live])
                    np.add.at(grad, idx, coef[live] * w_left)
                    np.add.at(grad, idx + 1, coef[live] * w_right)
                grads.append(grad)
        return np.concatenate(grads)

    def value_vjp(self, x: ArrayLike, y: ArrayLike, d_u: np.ndarray, d_v: np.ndarray) -> np.ndarray:
        """Pulls gradients on (l_X, l_Y) back to every knot value (``parameter_vector`` layout)."""
        return self._vjp(x, y, d_u, d_v, "values")

    def knot_vjp(self, x: ArrayLike, y: ArrayLike, d_u: np.ndarray, d_v: np.ndarray) -> np.ndarray:
        """Pulls gradients on (l_X, l_Y) back to every knot position."""
        return self._vjp(x, y, d_u, d_v, "knots")

    def inverse(self) -> 'Warp2D':
        """Approximate inverse from the exact inverses of every row and column function.

        The blending lattice stays uniform. The result is exact for separable warps.
        """
        return Warp2D(
            self.grid_n,
            self.grid_m,
            tuple(f.inverse() for f in self.row_funcs),
            tuple(f.inverse() for f in self.col_funcs),
        )

    def compose(self, inner: 'Warp2D') -> 'Warp2D':
        """``self o inner``: exact for two separable warps, resampled on the uniform grid otherwise."""
        if self.is_separable and inner.is_separable:
            return Warp2D.separable(
                self.row_funcs[0].compose(inner.row_funcs[0]),
                self.col_funcs[0].compose(inner.col_funcs[0]),
                self.grid_n,
                self.grid_m,
            )
        xs = uniform_knots(self.grid_n)
        ys = uniform_knots(self.grid_m)
        rows = []
        for y_j in self.row_positions:
            u, v = inner(xs, np.full_like(xs, y_j))
            rows.append(_refit(self(u, v)[0]))
        cols = []
        for x_i in self.col_positions:
            u, v = inner(np.full_like(ys, x_i), ys)
            cols.append(_refit(self(u, v)[1]))
        return Warp2D(
            self.grid_n,
            self.grid_m,
            tuple(PiecewiseMonotone1D(xs, r, min_segment=0.0) for r in rows),
            tuple(PiecewiseMonotone1D(ys, c, min_segment=0.0) for c in cols),
        )

    def max_deviation(self, other: 'Warp2D', samples: int = 65) -> float:
        """Sup-norm distance to another warp over a regular lattice."""
        grid = np.linspace(0.0, 1.0, samples)
        gx, gy = np.meshgrid(grid, grid)
        u1, v1 = self(gx, gy)
        u2, v2 = other(gx, gy)
        return float(max(np.max(np.abs(u1 - u2)), np.max(np.abs(v1 - v2))))

    def to_dict(self) -> dict:
        """JSON form; knots are implied uniform unless listed explicitly."""
        raw = {
            "grid_n": self.grid_n,
            "grid_m": self.grid_m,
            "rows": [[float(v) for v in f.values] for f in self.row_funcs],
            "cols": [[float(v) for v in f.values] for f in self.col_funcs],
        }
        if any(not np.array_equal(f.knots, uniform_knots(f.n_segments)) for f in self.funcs):
            raw["row_knots"] = [[float(k) for k in f.knots] for f in self.row_funcs]
            raw["col_knots"] = [[float(k) for k in f.knots] for f in self.col_funcs]
        return raw

    @classmethod
    def from_dict(cls, raw: dict, min_segment: float = 0.0) -> 'Warp2D':
        """Parses the JSON form written by ``to_dict``."""
        try:
            rows = raw["rows"]
            cols = raw["cols"]
            row_knots = raw.get("row_knots") or [uniform_knots(len(r) - 1) for r in rows]
            col_knots = raw.get("col_knots") or [uniform_knots(len(c) - 1) for c in cols]
            return cls(
                int(raw["grid_n"]),
                int(raw["grid_m"]),
                tuple(PiecewiseMonotone1D(k, v, min_segment) for k, v in zip(row_knots, rows)),
                tuple(PiecewiseMonotone1D(k, v, min_segment) for k, v in zip(col_knots, cols)),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidWarpError("malformed warp JSON") from exc


def _refit(values: np.ndarray) -> np.ndarray:
    """Pins a resampled value row to [0, 1] and restores strict monotonicity."""
    out = np.array(values, dtype=np.float64)
    out[0] = 0.0
    out[-1] = 1.0
    n = out.size - 1
    fixed = False
    for k in range(1, n):
        low = out[k - 1] + _REFIT_FLOOR
        high = 1.0 - (n - k) * _REFIT_FLOOR
        if not low <= out[k] <= high:
            out[k] = min(max(out[k], low), high)
            fixed = True
    if fixed:
        _LOGGER.debug("Composition refit clamped a non-monotone row")
    return out


@dataclass(frozen=True)
class WarpSampler:
    """Draws random warps: Dirichlet segment increments floored at ``min_segment``.

    By default every row and column function gets its own independent draw.
    A ``spread`` below 1 mixes each own draw with a shared per-axis base draw,
    ``spread`` being the weight of the own draw (0 gives separable warps).
    An infinite concentration is the degenerate sampler that only returns the identity.
    """

    grid_size: int = DEFAULT_GRID_SIZE
    concentration: float = DEFAULT_CONCENTRATION
    min_segment: float = DEFAULT_MIN_SEGMENT
    spread: float = DEFAULT_SPREAD

    def __post_init__(self) -> None:
        if self.grid_size < 1:
            raise ValueError("grid_size must be positive")
        if not self.concentration > 0:
            raise ValueError("concentration must be positive")
        if not 0.0 < self.min_segment * self.grid_size < 1.0:
            raise ValueError("min_segment * grid_size must lie in (0, 1)")
        if not 0.0 <= self.spread <= 1.0:
            raise ValueError("spread must lie in [0, 1]")

    @classmethod
    def identity_only(cls, grid_size: int = DEFAULT_GRID_SIZE) -> 'WarpSampler':
        """A sampler that always returns the identity."""
        return cls(grid_size=grid_size, concentration=math.inf)

    @classmethod
    def near_separable(cls, grid_size: int = DEFAULT_GRID_SIZE, **kwargs) -> 'WarpSampler':
        """Mixing weak enough that every sampled Jacobian is positive definite."""
        min_segment = kwargs.pop("min_segment", DEFAULT_MIN_SEGMENT)
        return cls(grid_size=grid_size, min_segment=min_segment, spread=min_segment, **kwargs)

    @property
    def is_identity(self) -> bool:
        """True for the degenerate identity sampler."""
        return math.isinf(self.concentration)

    @property
    def keeps_jacobian_positive(self) -> bool:
        """Off-diagonal Jacobian terms stay below ``spread * n`` and diagonal ones above
        ``min_segment * n``, so the symmetric part is positive definite when spread <= min_segment."""
        return self.spread <= self.min_segment

    def _increments(self, rng: np.random.Generator) -> np.ndarray:
        n = self.grid_size
        draw = rng.dirichlet(np.full(n, self.concentration))
        return self.min_segment + (1.0 - n * self.min_segment) * draw

    def sample_1d(self, seed: int) -> PiecewiseMonotone1D:
        """One random 1D warp; deterministic given the seed."""
        if self.is_identity:
            return PiecewiseMonotone1D.identity(self.grid_size, self.min_segment)
        rng = np.random.default_rng(seed)
        return PiecewiseMonotone1D.from_increments(self._increments(rng), self.min_segment)

    def sample(self, seed: int) -> Warp2D:
        """One random 2D warp; deterministic given the seed."""
        n = self.grid_size
        if self.is_identity:
            return Warp2D.identity(n, n, self.min_segment)
        rng = np.random.default_rng(seed)
        funcs = []
        for count in (n + 1, n + 1):
            base = self._increments(rng) if self.spread < 1.0 else None
            for _ in range(count):
                if base is None:
                    inc = self._increments(rng)
                elif self.spread > 0.0:
                    inc = (1.0 - self.spread) * base + self.spread * self._increments(rng)
                else:
                    inc = base
                funcs.append(PiecewiseMonotone1D.from_increments(inc, self.min_segment))
        return Warp2D(n, n, tuple(funcs[:n + 1]), tuple(funcs[n + 1:]))


def eval_1d(w: PiecewiseMonotone1D, x: ArrayLike):
    """l_Phi(x)."""
    return w(x)


def invert_1d(w: PiecewiseMonotone1D) -> PiecewiseMonotone1D:
    """Exact inverse of a 1D warp."""
    return w.inverse()


def compose_1d(a: PiecewiseMonotone1D, b: PiecewiseMonotone1D) -> PiecewiseMonotone1D:
    """Exact composition a o b."""
    return a.compose(b)


def local_scale_factor(w: PiecewiseMonotone1D, x: ArrayLike):
    """Local scaling factor dl/dx."""
    return w.local_scale_factor(x)


def eval_2d(w: Warp2D, p: tuple) -> tuple:
    """(l_X, l_Y) at p = (x, y)."""
    return w(p[0], p[1])


def invert_2d(w: Warp2D) -> Warp2D:
    """Approximate inverse of a 2D warp, exact for separable ones."""
    return w.inverse()


def compose_2d(a: Warp2D, b: Warp2D) -> Warp2D:
    """a o b, exact on the separable subfamily."""
    return a.compose(b)


def jacobian_2d(w: Warp2D, p: tuple) -> np.ndarray:
    """Local 2x2 Jacobian at p = (x, y)."""
    return w.jacobian(p[0], p[1])


def sample_warp(s: WarpSampler, rng_seed: int) -> Warp2D:
    """Random 2D warp from the sampler."""
    return s.sample(rng_seed)


def sample_warp_1d(s: WarpSampler, rng_seed: int) -> PiecewiseMonotone1D:
    """Random 1D warp from the sampler."""
    return s.sample_1d(rng_seed)
