"""Property suites run by ``check-group`` and ``check-claim1``."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .const import _LOGGER
from .dec.claim import FixedPointReport, check_claim1
from .parallel import run_parallel
from .warp import PiecewiseMonotone1D, Warp2D, WarpSampler, derive_seed

GROUP_TOLERANCE = 1e-12
DEFAULT_GRID_SIZES = (2, 4, 8, 16)
DEFAULT_TRIPLES = 1000
DEFAULT_POINTS = 10000


@dataclass
class SuiteReport:
    """Worst residual of one property over all its cases."""

    name: str
    cases: int
    max_residual: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        """JSON-ready form."""
        return asdict(self)


@dataclass
class CheckReport:
    """All suites of one command, plus statistics that are reported but not asserted."""

    suites: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        """True when every suite passed."""
        return all(s.passed for s in self.suites)

    def to_dict(self) -> dict:
        """JSON-ready form."""
        out = {"passed": self.passed, "suites": [s.to_dict() for s in self.suites]}
        if self.stats:
            out["stats"] = self.stats
        return out


def _suite(name: str, residuals: Sequence[float], tolerance: float = GROUP_TOLERANCE) -> SuiteReport:
    worst = float(np.max(residuals)) if len(residuals) else 0.0
    report = SuiteReport(name, len(residuals), worst, tolerance, worst < tolerance)
    level = logging.INFO if report.passed else logging.WARNING
    _LOGGER.log(level, "%s: max residual %.3g over %s cases", name, worst, len(residuals))
    return report


def _max_gap_1d(f: Callable, g: Callable, xs: np.ndarray) -> float:
    return float(np.max(np.abs(f(xs) - g(xs))))


def _points(rng: np.random.Generator, count: int) -> np.ndarray:
    return np.concatenate(([0.0, 1.0], rng.uniform(0.0, 1.0, count)))


def group_suites_1d(grid_sizes: Sequence[int] = DEFAULT_GRID_SIZES, triples: int = DEFAULT_TRIPLES,
                    seed: int = 0) -> list[SuiteReport]:
    """Associativity, identity, inverse and solve consistency of 1D warps."""
    residuals: dict = {"associativity": [], "identity": [], "inverse": [], "solve": []}
    for n in grid_sizes:
        sampler = WarpSampler(grid_size=n)

        def one(i: int, n: int = n, sampler: WarpSampler = sampler) -> tuple:
            rng = np.random.default_rng(derive_seed(seed, n, i))
            a, b, c = (sampler.sample_1d(derive_seed(seed, n, i, k)) for k in range(3))
            xs = _points(rng, 64)
            ident = PiecewiseMonotone1D.identity(n)
            return (
                _max_gap_1d(a.compose(b).compose(c), a.compose(b.compose(c)), xs),
                max(_max_gap_1d(a.compose(ident), a, xs), _max_gap_1d(ident.compose(a), a, xs)),
                max(_max_gap_1d(a.compose(a.inverse()), lambda x: x, xs),
                    _max_gap_1d(a.inverse().compose(a), lambda x: x, xs)),
                _max_gap_1d(lambda x: a(a.solve(x)), lambda x: x, xs),
            )

        for row in run_parallel(one, range(triples)):
            for key, value in zip(residuals, row):
                residuals[key].append(value)
    return [_suite(f"1d_{key}", values) for key, values in residuals.items()]


def _gap_2d(a: Warp2D, b: Warp2D, xs: np.ndarray, ys: np.ndarray) -> float:
    ua, va = a(xs, ys)
    ub, vb = b(xs, ys)
    return float(max(np.max(np.abs(ua - ub)), np.max(np.abs(va - vb))))


def _eigen_positive(jac: np.ndarray) -> np.ndarray:
    """Per point: every eigenvalue of the Jacobian has a positive real part."""
    return np.linalg.eigvals(jac).real.min(axis=-1) > 0.0


def _jacobians(sampler: WarpSampler, warps: int, points: int, seed: int, stream: int) -> list:
    rng = np.random.default_rng(derive_seed(seed, 3))
    xs, ys = rng.uniform(0.0, 1.0, points), rng.uniform(0.0, 1.0, points)
    return run_parallel(lambda i: sampler.sample(derive_seed(seed, 3, stream, i)).jacobian(xs, ys), range(warps))


def group_suites_2d(grid_size: int = 4, triples: int = 200, points: int = DEFAULT_POINTS,
                    seed: int = 0) -> list[SuiteReport]:
    """Group axioms of separable 2D warps and Jacobian positivity over ``triples`` sampled warps.

    Positivity is asserted for separable and near-separable warps only; the
    independent default sampler can fold, see ``jacobian_stats``.
    """
    separable = WarpSampler(grid_size=grid_size, spread=0.0)
    near = WarpSampler.near_separable(grid_size=grid_size)
    ident = Warp2D.identity(grid_size)

    def one(i: int) -> tuple:
        rng = np.random.default_rng(derive_seed(seed, 2, i))
        a, b, c = (separable.sample(derive_seed(seed, 2, i, k)) for k in range(3))
        xs, ys = _points(rng, 64), _points(rng, 64)
        inv = a.inverse()
        return (
            _gap_2d(a.compose(b).compose(c), a.compose(b.compose(c)), xs, ys),
            max(_gap_2d(a.compose(ident), a, xs, ys), _gap_2d(ident.compose(a), a, xs, ys)),
            max(_gap_2d(a.compose(inv), ident, xs, ys), _gap_2d(inv.compose(a), ident, xs, ys)),
        )

    residuals = list(zip(*run_parallel(one, range(triples))))
    reports = [_suite(f"2d_separable_{key}", values)
               for key, values in zip(("associativity", "identity", "inverse"), residuals)]

    diagonal, separable_positive = [], []
    for jac in _jacobians(separable, triples, points, seed, 0):
        diagonal.append(float(np.max(np.abs(jac[..., [0, 1], [1, 0]]))))
        # a non-positive eigenvalue counts as an infinite residual
        separable_positive.append(0.0 if _eigen_positive(jac).all() else np.inf)
    reports.append(_suite("2d_separable_jacobian_diagonal", diagonal))
    reports.append(_suite("2d_separable_jacobian_positive", separable_positive))
    near_positive = [0.0 if _eigen_positive(jac).all() else np.inf
                     for jac in _jacobians(near, triples, points, seed, 1)]
    reports.append(_suite("2d_near_separable_jacobian_positive", near_positive))
    return reports


def jacobian_stats(grid_size: int = 4, warps: int = 200, points: int = DEFAULT_POINTS, seed: int = 0) -> dict:
    """How often independently drawn warps keep every Jacobian eigenvalue in the right half-plane."""
    sampler = WarpSampler(grid_size=grid_size)
    masks = [_eigen_positive(jac) for jac in _jacobians(sampler, warps, points, seed, 2)]
    stats = {
        "warps": warps,
        "points": points,
        "warp_fraction": float(np.mean([m.all() for m in masks])),
        "point_fraction": float(np.mean([m.mean() for m in masks])),
    }
    _LOGGER.info("Independent warps: %.3f of warps and %.3f of points have positive Jacobian spectra",
                 stats["warp_fraction"], stats["point_fraction"])
    return stats


def run_group_checks(grid_sizes: Sequence[int] = DEFAULT_GRID_SIZES, triples: int = DEFAULT_TRIPLES,
                     seed: int = 0) -> CheckReport:
    """Every warp group property suite."""
    _LOGGER.debug(">> run_group_checks(grid_sizes=%s, triples=%s, seed=%s)", grid_sizes, triples, seed)
    suites = group_suites_1d(grid_sizes, triples, seed)
    warps = max(1, triples // 5)
    suites += group_suites_2d(triples=warps, seed=seed)
    return CheckReport(suites, {"independent_jacobian": jacobian_stats(warps=warps, seed=seed)})


@dataclass
class ClaimReport:
    """Per-seed results of the fixed-point oracle."""

    seeds: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True when every seed passed."""
        return bool(self.seeds) and all(r.passed for r in self.seeds)

    def to_dict(self) -> dict:
        """JSON-ready form."""
        worst = max((r.max_abs_diff for r in self.seeds), default=0.0)
        return {"passed": self.passed, "max_abs_diff": worst, "seeds": [r.to_dict() for r in self.seeds]}


def run_claim_checks(seeds: Sequence[int] = range(20), **kwargs) -> ClaimReport:
    """``check_claim1`` for every seed, in parallel."""
    reports: list[FixedPointReport] = run_parallel(lambda s: check_claim1(s, **kwargs), list(seeds))
    return ClaimReport(list(reports))
