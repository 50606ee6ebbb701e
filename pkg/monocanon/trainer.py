"""Epoch loop with warp augmentation, consistency-loss hooks and a CSV log."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .const import _LOGGER
from .image_warp import apply_warp
from .metrics import predict
from .nn.train import TrainConfig, make_optimizer, train_step
from .warp import Warp2D, WarpSampler, derive_seed

# Independent seed streams
SHUFFLE_STREAM = 0
AUGMENT_STREAM = 1
AUX_STREAM = 2

LOG_FIELDS = ("epoch", "loss", "val_accuracy")

AuxLoss = Callable[[object, np.ndarray, Sequence[Warp2D]], tuple]


@dataclass
class EpochRecord:
    """One row of train_log.csv."""

    epoch: int
    loss: float
    val_accuracy: Optional[float] = None


class _Objective:
    """Task loss plus a weighted auxiliary loss, seen by ``train_step`` as one model."""

    def __init__(self, model, cfg: TrainConfig, aux: Optional[AuxLoss]) -> None:
        self.model = model
        self.cfg = cfg
        self.aux = aux
        self.aux_warps: list = []

    def parameters(self) -> dict[str, np.ndarray]:
        return self.model.parameters()

    def mark_updated(self) -> None:
        self.model.mark_updated()

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple[float, dict]:
        loss, grads = self.model.loss_and_grads(x, y)
        loss *= self.cfg.task_weight
        grads = {name: self.cfg.task_weight * grad for name, grad in grads.items()}
        if self.aux is None or self.cfg.aux_weight == 0.0:
            return loss, grads
        scale = self.cfg.aux_weight / len(self.aux_warps)
        for warps in self.aux_warps:
            aux_loss, aux_grads = self.aux(self.model, x, warps)
            loss += scale * aux_loss
            for name, grad in aux_grads.items():
                grads[name] = grads[name] + scale * grad if name in grads else scale * grad
        return loss, grads


class Trainer:
    """Trains any model with ``loss_and_grads`` on a ``Dataset``.

    Shuffling, augmentation and auxiliary warps draw from separate seed
    streams, so switching one of them off leaves the others unchanged.
    """

    def __init__(self, model, config: TrainConfig, sampler: WarpSampler = None, augment: bool = False,
                 aux_loss: AuxLoss = None) -> None:
        self.model = model
        self.config = config
        self.sampler = sampler
        self.augment = augment
        self.objective = _Objective(model, config, aux_loss)
        self.optimizer = make_optimizer(config)
        self.history: list[EpochRecord] = []
        if (augment or aux_loss is not None) and sampler is None:
            raise ValueError("augmentation and auxiliary losses need a warp sampler")

    def _warps(self, stream: int, epoch: int, step: int, count: int, draw: int = 0) -> list[Warp2D]:
        seed = self.config.seed
        return [self.sampler.sample(derive_seed(seed, stream, epoch, step, draw, i)) for i in range(count)]

    def run_epoch(self, data, epoch: int) -> float:
        """One pass over ``data`` in a seeded order; returns the mean batch loss."""
        cfg = self.config
        order = np.random.default_rng(derive_seed(cfg.seed, SHUFFLE_STREAM, epoch)).permutation(len(data))
        if hasattr(self.model, "train"):
            self.model.train()
        losses = []
        for step, start in enumerate(range(0, len(data), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x = np.asarray(data.images[idx], dtype=np.float64)
            y = np.asarray(data.labels[idx], dtype=np.int64)
            if self.augment:
                x = np.stack([apply_warp(f, w) for f, w in zip(x, self._warps(AUGMENT_STREAM, epoch, step, len(x)))])
            if self.objective.aux is not None and cfg.aux_weight > 0.0:
                self.objective.aux_warps = [self._warps(AUX_STREAM, epoch, step, len(x), draw)
                                            for draw in range(cfg.aux_samples)]
            losses.append(train_step(self.objective, (x, y), cfg, self.optimizer))
        return float(np.mean(losses))

    def fit(self, train, val=None, log_path: Union[str, Path] = None) -> list[EpochRecord]:
        """Runs ``config.epochs`` epochs; validation accuracy is measured in inference mode."""
        _LOGGER.debug(">> Trainer.fit(samples=%s, epochs=%s, augment=%s)", len(train), self.config.epochs,
                      self.augment)
        for epoch in range(self.config.epochs):
            loss = self.run_epoch(train, epoch)
            accuracy = None
            if val is not None:
                if hasattr(self.model, "eval"):
                    self.model.eval()
                accuracy = float(np.mean(predict(self.model, val.images, self.config.batch_size) == val.labels))
            self.history.append(EpochRecord(epoch, loss, accuracy))
            _LOGGER.info("epoch %s loss=%.5f val_accuracy=%s", epoch, loss, accuracy)
        if log_path is not None:
            write_log(log_path, self.history)
        return self.history


def write_log(path: Union[str, Path], history: Sequence[EpochRecord]) -> None:
    """Writes ``epoch,loss,val_accuracy`` rows; missing accuracies stay empty."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(LOG_FIELDS)
        for record in history:
            writer.writerow([record.epoch, repr(record.loss),
                             "" if record.val_accuracy is None else repr(record.val_accuracy)])
