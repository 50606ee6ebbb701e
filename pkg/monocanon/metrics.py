"""Consistency and accuracy measurements of canonicalized models."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .canon import AdaptedLayer, DecCanonicalizer
from .const import _LOGGER, DEFAULT_N_WARPS, DEFAULT_SCALE_BUCKETS, INV_E_REPORT_SCALE, MONOTONE_FRACTION_WARN
from .enum import AdapterMode
from .exceptions import UsageError
from .image_warp import apply_warp, apply_warp_inverse, round_trip_error
from .nn import BlockClassifier, softmax
from .parallel import run_parallel
from .warp import WarpSampler, derive_seed

Model = Callable[[np.ndarray], np.ndarray]


def _sq(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def _equivariant_view(layer):
    if isinstance(layer, AdaptedLayer) and layer.canonicalizer is not None and layer.mode is AdapterMode.INVARIANT:
        return AdaptedLayer(layer.layer, layer.canonicalizer, AdapterMode.EQUIVARIANT)
    return layer


def trunk(model) -> Model:
    """The spatial part of a classifier: every layer but the head.

    A canonicalized block in invariant mode is measured in equivariant mode,
    so the trunk output stays in the input frame. Bare callables are returned
    as they are.
    """
    if isinstance(model, BlockClassifier):
        layers = model.blocks
    elif hasattr(model, "layers") and hasattr(model, "canonicalizers"):
        layers = [_equivariant_view(layer) for layer in model.layers[:-1]]
    else:
        return model

    def run(batch: np.ndarray) -> np.ndarray:
        out = np.asarray(batch, dtype=np.float64)
        for layer in layers:
            out = layer.forward(out)[0]
        return out

    return run


def equivariance_error(model: Model, images: np.ndarray, sampler: WarpSampler, n_warps: int = DEFAULT_N_WARPS,
                       seed: int = 0) -> float:
    """Mean of ||S(M(I); Phi) - M(S(I; Phi))||^2 over images and sampled warps.

    Warp k of image i is drawn from ``derive_seed(seed, i, k)``.
    """
    images = np.asarray(images, dtype=np.float64)
    if n_warps < 1:
        raise ValueError("n_warps must be >= 1")

    def one(index: int) -> float:
        img = images[index]
        reference = model(img[None])
        if reference.ndim != 4:
            raise UsageError(f"equivariance needs a spatial model output, got {reference.shape}")
        total = 0.0
        for k in range(n_warps):
            warp = sampler.sample(derive_seed(seed, index, k))
            total += _sq(apply_warp(reference[0], warp), model(apply_warp(img, warp)[None])[0])
        return total / n_warps

    return float(np.mean(run_parallel(one, range(images.shape[0]))))


def interpolation_floor(images: np.ndarray, sampler: WarpSampler, n_warps: int = DEFAULT_N_WARPS,
                        seed: int = 0) -> float:
    """Mean round-trip error E||S(S^-1(I; Phi); Phi) - I||^2 over the warps used by ``equivariance_error``."""
    images = np.asarray(images, dtype=np.float64)

    def one(index: int) -> float:
        return float(np.mean([round_trip_error(images[index], sampler.sample(derive_seed(seed, index, k)))
                              for k in range(n_warps)]))

    return float(np.mean(run_parallel(one, range(images.shape[0]))))


def invariance_errors(model: Model, image_groups: Sequence[np.ndarray], use_softmax: bool = False) -> np.ndarray:
    """Per-group mean of ||M(I) - M(I_s)||^2, with I the first image of each group."""
    if not len(image_groups):
        raise UsageError("no image groups")
    for index, group in enumerate(image_groups):
        if len(group) < 2:
            raise UsageError(f"group {index} has no variants")

    def one(group: np.ndarray) -> float:
        out = model(np.asarray(group, dtype=np.float64))
        if use_softmax:
            out = softmax(out)
        return float(np.mean([_sq(out[0], variant) for variant in out[1:]]))

    return np.array(run_parallel(one, image_groups))


def invariance_error(model: Model, image_groups: Sequence[np.ndarray], use_softmax: bool = False) -> float:
    """Mean of ``invariance_errors`` over groups."""
    return float(np.mean(invariance_errors(model, image_groups, use_softmax)))


def sampled_groups(images: np.ndarray, sampler: WarpSampler, n_warps: int = DEFAULT_N_WARPS,
                   seed: int = 0) -> list[np.ndarray]:
    """Every image followed by ``n_warps`` warped copies."""
    images = np.asarray(images, dtype=np.float64)
    return [np.stack([img] + [apply_warp(img, sampler.sample(derive_seed(seed, i, k))) for k in range(n_warps)])
            for i, img in enumerate(images)]


@dataclass
class ScaleBucket:
    """Accuracy of the samples whose dominant scale falls in [lo, hi)."""

    lo: float
    hi: float
    acc: float
    n: int


@dataclass
class ScaleBreakdown:
    """Per-bucket accuracy, with samples outside every bucket counted apart."""

    buckets: list
    overflow: int = 0
    overflow_acc: Optional[float] = None

    @property
    def mean(self) -> float:
        """Mean accuracy over non-empty buckets."""
        accs = [b.acc for b in self.buckets if b.n]
        return float(np.mean(accs)) if accs else 0.0

    @property
    def std(self) -> float:
        """Population std of the accuracy over non-empty buckets."""
        accs = [b.acc for b in self.buckets if b.n]
        return float(np.std(accs)) if accs else 0.0


def bucket_index(scales: np.ndarray, buckets: Sequence[tuple]) -> np.ndarray:
    """Bucket of every scale, -1 for overflow. The last bucket includes its upper edge."""
    scales = np.asarray(scales, dtype=np.float64)
    out = np.full(scales.shape, -1, dtype=np.intp)
    for index, (lo, hi) in enumerate(buckets):
        upper = scales <= hi if index == len(buckets) - 1 else scales < hi
        out[(out < 0) & (scales >= lo) & upper] = index
    return out


def per_scale_from_predictions(predictions: np.ndarray, labels: np.ndarray, scales: np.ndarray,
                               buckets: Sequence[tuple] = DEFAULT_SCALE_BUCKETS) -> ScaleBreakdown:
    """Accuracy per scale bucket from precomputed predictions."""
    if not buckets:
        raise UsageError("no scale buckets")
    correct = np.asarray(predictions) == np.asarray(labels)
    index = bucket_index(scales, buckets)
    rows = []
    for k, (lo, hi) in enumerate(buckets):
        members = correct[index == k]
        rows.append(ScaleBucket(float(lo), float(hi), float(members.mean()) if members.size else 0.0,
                                int(members.size)))
    outside = correct[index < 0]
    if outside.size:
        _LOGGER.warning("%s samples fall outside every scale bucket", outside.size)
    return ScaleBreakdown(rows, int(outside.size), float(outside.mean()) if outside.size else None)


def predict(model: Model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Argmax class of every image, computed in batches."""
    images = np.asarray(images, dtype=np.float64)
    starts = range(0, images.shape[0], batch_size)
    outputs = [np.argmax(model(images[s:s + batch_size]), axis=-1) for s in starts]
    return np.concatenate(outputs) if outputs else np.zeros(0, dtype=np.intp)


def per_scale_accuracy(model: Model, dataset, buckets: Sequence[tuple] = DEFAULT_SCALE_BUCKETS,
                       batch_size: int = 64) -> ScaleBreakdown:
    """Accuracy per bucket of the samples' dominant scale."""
    predictions = predict(model, dataset.images, batch_size)
    return per_scale_from_predictions(predictions, dataset.labels, dataset.dominant_scales, buckets)


def canonicalizer_equivariance_probe(canonicalizer, images: np.ndarray, sampler: WarpSampler,
                                     n_warps: int = DEFAULT_N_WARPS, seed: int = 0) -> float:
    """Mean distance between S^-1(S(I; g); h(S(I; g))) and S^-1(I; h(I)).

    Image i is canonicalized with index i * (n_warps + 1); its k-th warped copy
    with index i * (n_warps + 1) + k + 1, so an oracle can look up the warp.
    """
    images = np.asarray(images, dtype=np.float64)
    stride = n_warps + 1
    total = []
    for i, img in enumerate(images):
        reference, _ = canonicalizer.canonicalize(img, i * stride)
        canonical = apply_warp_inverse(img, reference)
        for k in range(n_warps):
            warped = apply_warp(img, sampler.sample(derive_seed(seed, i, k)))
            phi, _ = canonicalizer.canonicalize(warped, i * stride + k + 1)
            total.append(_sq(apply_warp_inverse(warped, phi), canonical))
    return float(np.mean(total))


def monotone_residual_fraction(solves: Sequence[tuple], window: int) -> float:
    """Fraction of solves whose residuals never increase after the first ``window`` evaluations.

    ``solves`` holds ``(iterations, converged, residuals)`` entries as kept by
    ``DecCanonicalizer.solves``; a solve that stops within the window counts as
    monotone.
    """
    if not solves:
        return 1.0
    hits = [bool(np.all(np.diff(np.asarray(residuals[window:], dtype=np.float64)) <= 0.0))
            for _, _, residuals in solves]
    return float(np.mean(hits))


def _dec_canonicalizers(model) -> list:
    return [c for c in getattr(model, "canonicalizers", ()) if isinstance(c, DecCanonicalizer)]


def solver_diagnostics(canonicalizers: Sequence[DecCanonicalizer]) -> dict:
    """Convergence summary of the solves recorded since the histories were last cleared."""
    solves = [solve for c in canonicalizers for solve in c.solves]
    fractions = [monotone_residual_fraction(c.solves, c.anderson.window) for c in canonicalizers if c.solves]
    weights = [len(c.solves) for c in canonicalizers if c.solves]
    out = {
        "solves": len(solves),
        "converged": float(np.mean([converged for _, converged, _ in solves])) if solves else 1.0,
        "mean_iterations": float(np.mean([iterations for iterations, _, _ in solves])) if solves else 0.0,
        "monotone_fraction": float(np.average(fractions, weights=weights)) if fractions else 1.0,
    }
    level = logging.WARNING if out["monotone_fraction"] < MONOTONE_FRACTION_WARN else logging.INFO
    _LOGGER.log(level, "DEC solves=%s converged=%.3f monotone residuals=%.3f", out["solves"], out["converged"],
                out["monotone_fraction"])
    return out


@dataclass
class MetricsReport:
    """Contents of metrics.json."""

    accuracy: float
    equ_e: float
    inv_e: float
    interpolation_floor: float
    per_scale: list
    seed: int
    n_warps: int
    inv_e_std: float = 0.0
    acc_std: float = 0.0
    canonicalizer: str = "none"
    overflow: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready dict; adds InvE scaled by 100."""
        out = asdict(self)
        out["per_scale"] = [asdict(b) if isinstance(b, ScaleBucket) else dict(b) for b in self.per_scale]
        out["inv_e_x100"] = self.inv_e * INV_E_REPORT_SCALE
        if not self.extra:
            out.pop("extra")
        return out


def evaluate(model, dataset, sampler: WarpSampler, variants=None, n_warps: int = DEFAULT_N_WARPS, seed: int = 0,
             buckets: Sequence[tuple] = DEFAULT_SCALE_BUCKETS, canonicalizer: str = "none",
             batch_size: int = 64) -> MetricsReport:
    """Accuracy, per-scale accuracy, EquE of the trunk, InvE and the interpolation floor.

    InvE uses the stored ``variants`` split when given, else warps drawn from
    ``sampler``. Models with fixed-point canonicalizers also get a
    ``dec_solver`` entry in ``extra`` summarizing the solves made here.
    """
    _LOGGER.debug(">> evaluate(samples=%s, n_warps=%s, seed=%s)", len(dataset), n_warps, seed)
    if hasattr(model, "eval"):
        model.eval()
    decs = _dec_canonicalizers(model)
    for dec in decs:
        dec.solves.clear()
    predictions = predict(model, dataset.images, batch_size)
    accuracy = float(np.mean(predictions == dataset.labels))
    breakdown = per_scale_from_predictions(predictions, dataset.labels, dataset.dominant_scales, buckets)
    equ_e = equivariance_error(trunk(model), dataset.images, sampler, n_warps, seed)
    floor = interpolation_floor(dataset.images, sampler, n_warps, seed)
    if variants is not None and len(variants):
        groups = dataset.groups(variants)
    else:
        groups = sampled_groups(dataset.images, sampler, n_warps, seed)
    inv = invariance_errors(model, groups)
    _LOGGER.info("accuracy=%.4f equ_e=%.3g inv_e=%.3g floor=%.3g", accuracy, equ_e, float(inv.mean()), floor)
    report = MetricsReport(
        accuracy=accuracy,
        equ_e=equ_e,
        inv_e=float(inv.mean()),
        interpolation_floor=floor,
        per_scale=breakdown.buckets,
        seed=seed,
        n_warps=n_warps,
        inv_e_std=float(inv.std()),
        acc_std=breakdown.std,
        canonicalizer=str(canonicalizer),
        overflow=breakdown.overflow,
    )
    if decs:
        report.extra["dec_solver"] = solver_diagnostics(decs)
    return report
