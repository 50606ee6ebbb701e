"""Comparison methods sharing the toy classifier: augmentation, vanilla canonicalization, loss fine-tuning, DEC."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .canon import build_adapted_classifier, equivariance_loss_and_grads, invariance_loss_and_grads
from .const import (
    _LOGGER,
    CANDIDATE_SLOPE_RANGE,
    CANDIDATE_SLOPES_PER_AXIS,
    DEFAULT_GRID_SIZE,
    DEFAULT_LOSS_WEIGHT,
    DEFAULT_MIN_SEGMENT,
    LOSS_WEIGHT_SWEEP,
)
from .dec import AndersonConfig
from .dec.const import DEFAULT_UNROLL_STEPS
from .enum import BackwardMode, BaselineKind, CanonicalizerKind
from .exceptions import UsageError
from .metrics import MetricsReport, evaluate
from .nn import BlockClassifier, build_toy_classifier
from .nn.checkpoint import assign_parameters, load_checkpoint, save_checkpoint
from .nn.const import TOY_CHANNELS
from .nn.train import TrainConfig
from .trainer import EpochRecord, Trainer
from .warp import PiecewiseMonotone1D, Warp2D, WarpSampler, uniform_knots

COMPARISON_FIELDS = (
    "kind", "loss_weight", "accuracy", "acc_std", "equ_e", "inv_e", "inv_e_x100", "inv_e_std",
    "interpolation_floor",
)


def two_segment_warp(slope: float, grid_size: int = DEFAULT_GRID_SIZE,
                     min_segment: float = DEFAULT_MIN_SEGMENT) -> PiecewiseMonotone1D:
    """Slope ``slope`` up to the middle knot, then whatever slope reaches (1, 1).

    The function lives on the uniform ``grid_size`` lattice so it can be
    blended with other candidates.
    """
    knots = uniform_knots(grid_size)
    split = max(1, grid_size // 2)
    if split == grid_size:
        return PiecewiseMonotone1D.identity(grid_size, min_segment)
    pivot = knots[split]
    value = float(np.clip(pivot * slope, split * min_segment, 1.0 - (grid_size - split) * min_segment))
    values = np.interp(knots, [0.0, pivot, 1.0], [0.0, value, 1.0])
    return PiecewiseMonotone1D(knots, values, min_segment)


def candidate_slopes(count: int = CANDIDATE_SLOPES_PER_AXIS,
                     slope_range: tuple = CANDIDATE_SLOPE_RANGE) -> np.ndarray:
    """Log-spaced slopes with the one nearest 1 replaced by exactly 1."""
    slopes = np.geomspace(slope_range[0], slope_range[1], count)
    slopes[np.argmin(np.abs(np.log(slopes)))] = 1.0
    return slopes


def build_candidate_set(grid_size: int = DEFAULT_GRID_SIZE, count: int = CANDIDATE_SLOPES_PER_AXIS,
                        min_segment: float = DEFAULT_MIN_SEGMENT) -> list[Warp2D]:
    """count x count separable two-segment warps, identity first."""
    slopes = candidate_slopes(count)
    funcs = [two_segment_warp(s, grid_size, min_segment) for s in slopes]
    pairs = [(i, j) for i in range(count) for j in range(count)]
    unit = int(np.flatnonzero(slopes == 1.0)[0])
    pairs.remove((unit, unit))
    pairs.insert(0, (unit, unit))
    return [Warp2D.separable(funcs[i], funcs[j], grid_size, grid_size) for i, j in pairs]


@dataclass(frozen=True)
class BaselineConfig:
    """Model side of a baseline run; data and optimization come separately."""

    n_classes: int = 100
    size: int = 64
    channels: tuple = TOY_CHANNELS
    grid_size: int = DEFAULT_GRID_SIZE
    min_segment: float = DEFAULT_MIN_SEGMENT
    dec_channels: Optional[tuple] = None
    anderson: AndersonConfig = field(default_factory=AndersonConfig)
    backward_mode: BackwardMode = BackwardMode.PHANTOM
    unroll_steps: int = DEFAULT_UNROLL_STEPS
    placements: Optional[int] = None
    shared: bool = False
    loss_weight: float = DEFAULT_LOSS_WEIGHT
    seed: int = 0

    def base_model(self) -> BlockClassifier:
        """Freshly initialized toy classifier."""
        return build_toy_classifier(1, self.n_classes, self.size, tuple(self.channels), seed=self.seed)


@dataclass
class BaselineResult:
    """Trained model of one kind and its training history."""

    kind: BaselineKind
    model: object
    history: list
    loss_weight: float = 0.0


def _augmented_tensors(augmented: Union[str, Path, dict, None]) -> dict:
    if augmented is None:
        raise UsageError("this baseline starts from an augmented checkpoint; train the augmented kind first")
    if isinstance(augmented, dict):
        return augmented
    path = Path(augmented)
    if not path.exists():
        raise UsageError(f"augmented checkpoint {path} does not exist")
    return load_checkpoint(path)


def build_baseline_model(kind: BaselineKind, config: BaselineConfig, base: BlockClassifier = None):
    """The model trained for ``kind``, wrapping ``base`` where the kind adapts it."""
    kind = BaselineKind(kind)
    base = base or config.base_model()
    if kind in (BaselineKind.AUGMENTED, BaselineKind.EQU_LOSS, BaselineKind.INV_LOSS):
        return base
    options = {
        "placements": config.placements,
        "grid_size": config.grid_size,
        "min_segment": config.min_segment,
        "seed": config.seed,
    }
    if kind is BaselineKind.VANILLA_CANON:
        return build_adapted_classifier(base, CanonicalizerKind.VANILLA,
                                        candidates=build_candidate_set(config.grid_size, min_segment=config.min_segment),
                                        **options)
    return build_adapted_classifier(base, CanonicalizerKind.DEC, shared=config.shared, dec_channels=config.dec_channels,
                                    anderson=config.anderson, backward_mode=config.backward_mode,
                                    unroll_steps=config.unroll_steps, **options)


def train_baseline(kind: BaselineKind, config: BaselineConfig, train_cfg: TrainConfig, sampler: WarpSampler, train,
                   val=None, augmented: Union[str, Path, dict, None] = None, log_path: Union[str, Path] = None,
                   checkpoint: Union[str, Path] = None) -> BaselineResult:
    """Trains one comparison method.

    Every kind but ``augmented`` starts from the augmented model's weights and
    keeps the warp augmentation on, so the kinds differ only in mechanism.
    """
    kind = BaselineKind(kind)
    _LOGGER.debug(">> train_baseline(kind=%s, seed=%s)", kind, train_cfg.seed)
    base = config.base_model()
    if kind is not BaselineKind.AUGMENTED:
        assign_parameters(base, _augmented_tensors(augmented))
    model = build_baseline_model(kind, config, base)
    aux = None
    weight = 0.0
    if kind is BaselineKind.EQU_LOSS:
        aux, weight = equivariance_loss_and_grads, config.loss_weight
    elif kind is BaselineKind.INV_LOSS:
        aux, weight = invariance_loss_and_grads, config.loss_weight
    cfg = replace(train_cfg, aux_weight=weight)
    trainer = Trainer(model, cfg, sampler=sampler, augment=True, aux_loss=aux)
    history = trainer.fit(train, val, log_path=log_path)
    if checkpoint is not None:
        save_checkpoint(checkpoint, model.parameters())
    return BaselineResult(kind, model, history, weight)


def comparison_row(result: BaselineResult, report: MetricsReport) -> dict:
    """One comparison.csv row."""
    metrics = report.to_dict()
    row = {"kind": str(result.kind), "loss_weight": result.loss_weight}
    row.update({key: metrics[key] for key in COMPARISON_FIELDS if key in metrics})
    return row


def write_comparison(path: Union[str, Path], rows: Sequence[dict]) -> None:
    """Writes the consolidated comparison table."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=COMPARISON_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def run_comparison(config: BaselineConfig, train_cfg: TrainConfig, sampler: WarpSampler, train, test, variants=None,
                   out_dir: Union[str, Path] = ".", kinds: Sequence[BaselineKind] = tuple(BaselineKind),
                   sweep: bool = False, n_warps: int = 8, eval_seed: int = 0,
                   buckets: Sequence[tuple] = None) -> list[dict]:
    """Trains the augmented model, then every other kind from it, and evaluates them all on ``test``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = {} if buckets is None else {"buckets": buckets}
    rows = []

    def record(result: BaselineResult) -> None:
        report = evaluate(result.model, test, sampler, variants=variants, n_warps=n_warps, seed=eval_seed,
                          canonicalizer=str(result.kind), **extra)
        rows.append(comparison_row(result, report))

    augmented_path = out / "augmented.mcan"
    record(train_baseline(BaselineKind.AUGMENTED, config, train_cfg, sampler, train,
                          log_path=out / "augmented_log.csv", checkpoint=augmented_path))
    for kind in kinds:
        kind = BaselineKind(kind)
        if kind is BaselineKind.AUGMENTED:
            continue
        weights = [config.loss_weight]
        if sweep and kind in (BaselineKind.EQU_LOSS, BaselineKind.INV_LOSS):
            weights = list(LOSS_WEIGHT_SWEEP)
        for weight in weights:
            tag = f"{kind}" if len(weights) == 1 else f"{kind}_{weight:g}"
            result = train_baseline(kind, replace(config, loss_weight=weight), train_cfg, sampler, train,
                                    augmented=augmented_path, log_path=out / f"{tag}_log.csv",
                                    checkpoint=out / f"{tag}.mcan")
            record(result)
    write_comparison(out / "comparison.csv", rows)
    _LOGGER.info("Wrote comparison of %s runs to %s", len(rows), out / "comparison.csv")
    return rows
