"""Tests for the consistency and accuracy metrics."""

import numpy as np
import pytest

from monocanon.canon import (
    AdaptedLayer,
    AdaptedNetwork,
    Canonicalizer,
    DecCanonicalizer,
    build_adapted_classifier,
    wrap_invariant,
)
from monocanon.dec import DecNet, picard_config
from monocanon.enum import AdapterMode, CanonicalizerKind
from monocanon.exceptions import UsageError
from monocanon.image_warp import apply_warp
from monocanon.metrics import (
    MetricsReport,
    bucket_index,
    canonicalizer_equivariance_probe,
    equivariance_error,
    evaluate,
    interpolation_floor,
    invariance_error,
    invariance_errors,
    monotone_residual_fraction,
    per_scale_from_predictions,
    predict,
    sampled_groups,
    trunk,
)
from monocanon.nn import LayerSpec, Network, build_toy_classifier
from monocanon.warp import Warp2D, WarpSampler, derive_seed

from .conftest import smooth_image


@pytest.fixture
def images(rng):
    return np.stack([smooth_image(rng) for _ in range(3)])


def test_identity_model_is_equivariant(images, sampler):
    assert equivariance_error(lambda b: b, images, sampler, n_warps=2) == 0.0


def test_pointwise_model_is_nearly_equivariant(images, near_separable_sampler):
    # a pointwise map commutes with resampling up to interpolation
    error = equivariance_error(lambda b: b ** 2, images, near_separable_sampler, n_warps=2)
    assert 0.0 < error < 1e-2


def test_equivariance_needs_spatial_output(images, sampler, tiny_classifier):
    with pytest.raises(UsageError):
        equivariance_error(tiny_classifier, images, sampler, n_warps=1)
    with pytest.raises(ValueError):
        equivariance_error(lambda b: b, images, sampler, n_warps=0)


def test_interpolation_floor(images, sampler):
    assert interpolation_floor(images, WarpSampler.identity_only(4), n_warps=2) == 0.0
    assert interpolation_floor(images, sampler, n_warps=2) > 0.0


def test_constant_model_is_invariant(images, sampler):
    groups = sampled_groups(images, sampler, n_warps=2)
    assert len(groups) == 3 and groups[0].shape == (3, 1, 16, 16)
    assert invariance_error(lambda b: np.ones((len(b), 4)), groups) == 0.0


def test_invariance_error_by_hand():
    group = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    # variant 1 differs by 1 in both entries, variant 2 by 2 in one entry
    assert invariance_error(lambda b: b, [group]) == pytest.approx((1.0 + 2.0) / 2)
    np.testing.assert_allclose(invariance_errors(lambda b: b, [group, group[:2]]), [1.5, 1.0])


def test_invariance_error_rejects_degenerate_groups():
    with pytest.raises(UsageError):
        invariance_error(lambda b: b, [])
    with pytest.raises(UsageError):
        invariance_error(lambda b: b, [np.zeros((1, 2))])


def test_softmax_invariance_is_bounded():
    group = np.array([[100.0, 0.0], [0.0, 100.0]])
    assert invariance_error(lambda b: b, [group], use_softmax=True) == pytest.approx(1.0)


def test_bucket_edges():
    buckets = ((0.4, 1.0), (1.0, 1.5), (1.5, 2.0))
    np.testing.assert_array_equal(bucket_index([0.4, 1.0, 1.49, 1.5, 2.0, 2.1, 0.3], buckets),
                                  [0, 1, 1, 2, 2, -1, -1])


def test_per_scale_planted_errors():
    scales = np.array([0.5, 0.6, 1.2, 1.7, 2.0, 2.5])
    labels = np.zeros(6, dtype=int)
    predictions = np.array([0, 1, 0, 0, 1, 0])
    breakdown = per_scale_from_predictions(predictions, labels, scales)
    assert [(b.acc, b.n) for b in breakdown.buckets] == [(0.5, 2), (1.0, 1), (0.5, 2)]
    assert breakdown.overflow == 1 and breakdown.overflow_acc == 1.0
    assert breakdown.mean == pytest.approx(2.0 / 3.0)
    assert breakdown.std == pytest.approx(np.std([0.5, 1.0, 0.5]))
    with pytest.raises(UsageError):
        per_scale_from_predictions(predictions, labels, scales, buckets=())


def test_empty_bucket_is_left_out_of_the_spread():
    breakdown = per_scale_from_predictions(np.array([0, 0]), np.array([0, 1]), np.array([0.5, 0.7]))
    assert breakdown.buckets[1].n == 0
    assert breakdown.mean == 0.5 and breakdown.std == 0.0


def test_predict_batches(images, tiny_classifier):
    np.testing.assert_array_equal(predict(tiny_classifier, images, batch_size=2),
                                  np.argmax(tiny_classifier(images), axis=1))
    assert predict(tiny_classifier, images[:0]).size == 0


def test_trunk_drops_the_head(images, tiny_classifier):
    features = trunk(tiny_classifier)(images)
    assert features.shape == (3, 4, 4, 4)
    adapted = build_adapted_classifier(tiny_classifier, CanonicalizerKind.NONE)
    np.testing.assert_array_equal(trunk(adapted)(images), features)


class _NearestLookup(Canonicalizer):
    """Returns the warp stored with the closest known feature map."""

    kind = CanonicalizerKind.ORACLE

    def __init__(self, pairs):
        super().__init__()
        self.pairs = pairs

    def canonicalize(self, feature, index=0):
        distances = [np.mean((feature - known) ** 2) for known, _ in self.pairs]
        return self.pairs[int(np.argmin(distances))][1], None


def test_trunk_measures_invariant_blocks_in_the_input_frame(images, near_separable_sampler):
    block = Network.build([LayerSpec.conv(1, 1, kernel=1), LayerSpec.relu()], (1, 16, 16), name="block")
    for name, value in block.parameters().items():
        value[...] = 1.0 if name.endswith("weight") else 0.0
    head = Network.build([LayerSpec.pool(2, 2), LayerSpec.flatten(), LayerSpec.dense(4, 3)], (1, 16, 16), name="head")
    pairs = []
    for i, img in enumerate(images):
        pairs.append((img, Warp2D.identity(4)))
        for k in range(2):
            warp = near_separable_sampler.sample(derive_seed(0, i, k))
            pairs.append((apply_warp(img, warp), warp))
    model = AdaptedNetwork([wrap_invariant(block, _NearestLookup(pairs)),
                            AdaptedLayer(head, None, AdapterMode.INVARIANT)])
    equ_e = equivariance_error(trunk(model), images, near_separable_sampler, n_warps=2)
    invariant_only = equivariance_error(lambda b: model.layers[0].forward(b)[0], images, near_separable_sampler,
                                        n_warps=2)
    floor = interpolation_floor(images, near_separable_sampler, n_warps=2)
    assert equ_e < 0.1 * invariant_only
    assert equ_e < 10.0 * floor
    assert model.layers[0].mode is AdapterMode.INVARIANT


def test_monotone_residual_fraction():
    solves = [(3, True, (1.0, 0.5, 0.6, 0.2)), (2, True, (1.0, 0.2, 0.1)), (0, True, (0.5,))]
    assert monotone_residual_fraction(solves, window=1) == pytest.approx(2 / 3)
    assert monotone_residual_fraction(solves, window=2) == 1.0
    assert monotone_residual_fraction([], window=5) == 1.0


def test_contractive_dec_residuals_are_monotone(tiny_dataset):
    test = tiny_dataset["test"]
    base = build_toy_classifier(1, 10, 32, channels=(4, 4), seed=0)
    adapted = build_adapted_classifier(base, CanonicalizerKind.DEC, dec_channels=(4,),
                                       anderson=picard_config(max_iters=30, tol=1e-10))
    rng = np.random.default_rng(4)
    for canonicalizer in adapted.canonicalizers:
        for name, value in canonicalizer.parameters().items():
            if name.endswith("head.weight"):
                # a tiny head keeps h a strong contraction, so Picard residuals shrink every step
                value[...] = rng.normal(0.0, 1e-4, value.shape)
        canonicalizer.mark_updated()
    report = evaluate(adapted, test, WarpSampler(grid_size=4), n_warps=1, canonicalizer="dec")
    solver = report.extra["dec_solver"]
    assert solver["solves"] > 0
    assert solver["mean_iterations"] > 1.0
    assert solver["monotone_fraction"] == 1.0
    assert report.to_dict()["extra"]["dec_solver"] == solver


def test_probe_with_identity_sampler(images):
    canonicalizer = DecCanonicalizer(DecNet.build(1, 4, channels=(4,), zero_head=False, seed=3))
    assert canonicalizer_equivariance_probe(canonicalizer, images, WarpSampler.identity_only(4), n_warps=2) == 0.0


def test_report_dict():
    report = MetricsReport(0.5, 0.1, 0.02, 0.01, [], seed=1, n_warps=8)
    raw = report.to_dict()
    assert raw["inv_e_x100"] == pytest.approx(2.0)
    assert "extra" not in raw
    report.extra["custom"] = 0.3
    assert report.to_dict()["extra"] == {"custom": 0.3}


def test_zero_init_dec_metrics_match_bare_model(tiny_dataset):
    test, variants = tiny_dataset["test"], tiny_dataset["variants"]
    sampler = WarpSampler(grid_size=4)
    base = build_toy_classifier(1, 10, 32, channels=(4, 4), seed=0)
    bare = evaluate(base, test, sampler, variants=variants, n_warps=2, seed=1).to_dict()
    adapted = build_adapted_classifier(base, CanonicalizerKind.DEC, dec_channels=(4,))
    dec = evaluate(adapted, test, sampler, variants=variants, n_warps=2, seed=1, canonicalizer="dec").to_dict()
    assert dec.pop("canonicalizer") == "dec"
    solver = dec.pop("extra")["dec_solver"]
    assert solver["solves"] > 0
    assert solver["converged"] == 1.0 and solver["monotone_fraction"] == 1.0
    assert bare.pop("canonicalizer") == "none"
    assert dec == bare
    assert 0.0 <= bare["accuracy"] <= 1.0
    assert bare["equ_e"] > 0.0 and bare["n_warps"] == 2
    assert sum(b["n"] for b in bare["per_scale"]) + bare["overflow"] == len(test)
