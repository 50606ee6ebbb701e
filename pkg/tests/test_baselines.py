"""Tests for the comparison methods."""

import csv
from dataclasses import replace

import numpy as np
import pytest

from monocanon.baselines import (
    BaselineConfig,
    build_baseline_model,
    build_candidate_set,
    candidate_slopes,
    run_comparison,
    train_baseline,
    two_segment_warp,
)
from monocanon.canon import AdaptedNetwork, VanillaCanonicalizer
from monocanon.enum import BaselineKind
from monocanon.exceptions import UsageError
from monocanon.nn.checkpoint import assign_parameters
from monocanon.nn.train import TrainConfig
from monocanon.trainer import Trainer
from monocanon.warp import WarpSampler

CONFIG = BaselineConfig(n_classes=10, size=32, channels=(4, 4), dec_channels=(4,), seed=0)
TRAIN = TrainConfig(lr=1e-3, batch_size=4, epochs=1, seed=2)


def test_candidate_slopes_contain_one():
    slopes = candidate_slopes()
    assert slopes.size == 8 and 1.0 in slopes
    assert slopes.min() == pytest.approx(0.5) and slopes.max() == pytest.approx(2.0)


def test_two_segment_warp():
    assert two_segment_warp(1.0).is_identity
    steep = two_segment_warp(1.5)
    assert steep(0.5) == pytest.approx(0.75)
    assert steep.local_scale_factor(0.25) == pytest.approx(1.5)
    # the second segment is clipped to keep its minimum width
    assert np.diff(two_segment_warp(100.0).values).min() >= 0.02 - 1e-12


def test_candidate_set():
    candidates = build_candidate_set()
    assert len(candidates) == 64
    assert candidates[0].is_identity
    assert sum(w.is_identity for w in candidates) == 1
    assert all(w.is_separable for w in candidates)
    vectors = {tuple(w.parameter_vector()) for w in candidates}
    assert len(vectors) == 64


def test_model_per_kind():
    base = CONFIG.base_model()
    assert build_baseline_model(BaselineKind.AUGMENTED, CONFIG, base) is base
    assert build_baseline_model("inv_loss", CONFIG, base) is base
    vanilla = build_baseline_model(BaselineKind.VANILLA_CANON, CONFIG)
    assert isinstance(vanilla, AdaptedNetwork)
    assert isinstance(vanilla.canonicalizers[0], VanillaCanonicalizer)
    dec = build_baseline_model(BaselineKind.DEC, CONFIG)
    assert len(dec.canonicalizers) == 2


def test_adapted_kinds_need_the_augmented_checkpoint(tiny_dataset, tmp_path):
    sampler = WarpSampler(grid_size=4)
    with pytest.raises(UsageError):
        train_baseline(BaselineKind.DEC, CONFIG, TRAIN, sampler, tiny_dataset["train"])
    with pytest.raises(UsageError):
        train_baseline(BaselineKind.EQU_LOSS, CONFIG, TRAIN, sampler, tiny_dataset["train"],
                       augmented=tmp_path / "missing.mcan")


def test_zero_weight_invariance_loss_is_plain_fine_tuning(tiny_dataset):
    sampler = WarpSampler(grid_size=4)
    train = tiny_dataset["train"]
    augmented = train_baseline(BaselineKind.AUGMENTED, CONFIG, TRAIN, sampler, train)
    weights = {name: value.copy() for name, value in augmented.model.parameters().items()}
    result = train_baseline(BaselineKind.INV_LOSS, replace(CONFIG, loss_weight=0.0),
                            TRAIN, sampler, train, augmented=weights)
    plain = CONFIG.base_model()
    assign_parameters(plain, weights)
    Trainer(plain, TRAIN, sampler=sampler, augment=True).fit(train)
    for name, value in plain.parameters().items():
        np.testing.assert_array_equal(result.model.parameters()[name], value)
    assert result.loss_weight == 0.0


def test_comparison_table(tiny_dataset, tmp_path):
    sampler = WarpSampler(grid_size=4)
    rows = run_comparison(CONFIG, TRAIN, sampler, tiny_dataset["train"], tiny_dataset["test"],
                          variants=tiny_dataset["variants"], out_dir=tmp_path,
                          kinds=(BaselineKind.AUGMENTED, BaselineKind.INV_LOSS, BaselineKind.DEC), n_warps=1)
    assert [row["kind"] for row in rows] == ["augmented", "inv_loss", "dec"]
    for name in ("augmented.mcan", "inv_loss.mcan", "dec.mcan", "dec_log.csv", "comparison.csv"):
        assert (tmp_path / name).exists(), name
    with open(tmp_path / "comparison.csv", newline="", encoding="utf-8") as handle:
        table = list(csv.DictReader(handle))
    assert len(table) == 3 and table[0]["kind"] == "augmented"
    assert float(table[1]["inv_e_x100"]) == pytest.approx(100.0 * float(table[1]["inv_e"]))
