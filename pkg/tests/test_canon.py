"""Tests for latent canonicalization adapters."""

import numpy as np
import pytest

from monocanon.canon import (
    AdaptedNetwork,
    DecCanonicalizer,
    OracleCanonicalizer,
    VanillaCanonicalizer,
    adapted_forward,
    build_adapted_classifier,
    equivariance_loss,
    equivariance_loss_and_grads,
    invariance_loss,
    invariance_loss_and_grads,
    wrap_equivariant,
    wrap_invariant,
)
from monocanon.dec import AndersonConfig, DecNet
from monocanon.dec.energy import EnergyNet
from monocanon.enum import CanonicalizerKind
from monocanon.exceptions import StructuralError, UsageError
from monocanon.image_warp import apply_warp, apply_warp_inverse
from monocanon.metrics import canonicalizer_equivariance_probe
from monocanon.warp import Warp2D, WarpSampler, derive_seed

from .conftest import smooth_image
from .gradcheck import directional_error


@pytest.fixture
def batch(rng):
    return np.stack([smooth_image(rng) for _ in range(3)])


def test_zero_init_dec_reproduces_base(tiny_classifier, batch):
    adapted = build_adapted_classifier(tiny_classifier, CanonicalizerKind.DEC, dec_channels=(4,))
    expected = tiny_classifier(batch)
    np.testing.assert_array_equal(adapted(batch), expected)
    adapted.train()
    np.testing.assert_array_equal(adapted(batch), expected)
    labels = np.array([0, 1, 2])
    loss, grads = adapted.loss_and_grads(batch, labels)
    base_loss, base_grads = tiny_classifier.loss_and_grads(batch, labels)
    assert loss == base_loss
    np.testing.assert_array_equal(grads["head.2.weight"], base_grads["head.2.weight"])
    assert "dec0.head.weight" in grads and "dec1.head.weight" in grads


def test_none_kind_is_bare(tiny_classifier, batch):
    adapted = build_adapted_classifier(tiny_classifier, CanonicalizerKind.NONE)
    assert adapted.canonicalizers == []
    np.testing.assert_array_equal(adapted(batch), tiny_classifier(batch))


def test_shared_canonicalizer_is_counted_once(tiny_classifier, batch):
    adapted = build_adapted_classifier(tiny_classifier, CanonicalizerKind.DEC, shared=True, dec_channels=(4,))
    assert len(adapted.canonicalizers) == 1
    assert [name for name in adapted.parameters() if name.startswith("dec")] == ["dec0.0.weight", "dec0.0.bias",
                                                                                 "dec0.head.weight", "dec0.head.bias"]
    np.testing.assert_array_equal(adapted(batch), tiny_classifier(batch))


def test_placements(tiny_classifier):
    adapted = build_adapted_classifier(tiny_classifier, CanonicalizerKind.DEC, placements=1, dec_channels=(4,))
    assert adapted.layers[0].canonicalizer is not None
    assert adapted.layers[1].canonicalizer is None
    with pytest.raises(UsageError):
        build_adapted_classifier(tiny_classifier, CanonicalizerKind.DEC, placements=3)
    with pytest.raises(UsageError):
        build_adapted_classifier(tiny_classifier, CanonicalizerKind.VANILLA)
    with pytest.raises(UsageError):
        build_adapted_classifier(tiny_classifier, CanonicalizerKind.ORACLE)


def test_equivariant_after_invariant_rejected(tiny_classifier):
    oracle = OracleCanonicalizer(Warp2D.identity(4))
    block0, block1 = tiny_classifier.blocks
    with pytest.raises(UsageError):
        AdaptedNetwork([wrap_invariant(block0, oracle), wrap_equivariant(block1, oracle)])
    with pytest.raises(StructuralError):
        AdaptedNetwork([])


def test_equivariant_wrap_needs_spatial_output(tiny_classifier, batch):
    oracle = OracleCanonicalizer(Warp2D.identity(4))
    layer = wrap_equivariant(tiny_classifier.head, oracle)
    features = tiny_classifier.blocks[1](tiny_classifier.blocks[0](batch))
    with pytest.raises(StructuralError):
        layer.forward(features)


def test_oracle_wrap_matches_manual_warping(tiny_classifier, batch, sampler):
    warp = sampler.sample(1)
    block = tiny_classifier.blocks[0]
    out, _ = wrap_equivariant(block, OracleCanonicalizer(warp)).forward(batch)
    canonical = np.stack([apply_warp_inverse(f, warp) for f in batch])
    expected = np.stack([apply_warp(f, warp) for f in block(canonical)])
    np.testing.assert_allclose(out, expected, atol=1e-12)
    invariant, _ = wrap_invariant(block, OracleCanonicalizer([warp] * 3)).forward(batch)
    np.testing.assert_allclose(invariant, block(canonical), atol=1e-12)


def test_oracle_canonicalization_removes_the_warp(separable_sampler, batch):
    n_warps = 3
    stride = n_warps + 1
    canonical = [separable_sampler.sample(derive_seed(99, i)) for i in range(len(batch))]

    def lookup(index):
        image, k = divmod(index, stride)
        if k == 0:
            return canonical[image]
        return separable_sampler.sample(derive_seed(0, image, k - 1)).compose(canonical[image])

    oracle = canonicalizer_equivariance_probe(OracleCanonicalizer(lookup), batch, separable_sampler, n_warps)
    blind = canonicalizer_equivariance_probe(OracleCanonicalizer(Warp2D.identity(4)), batch, separable_sampler, n_warps)
    assert oracle < 0.1 * blind


def test_dec_adapter_backward_matches_finite_differences(tiny_classifier, batch):
    rng = np.random.default_rng(5)
    dec = DecNet.build(1, 2, channels=(4,), seed=1, zero_head=False)
    # a tolerance this loose stops after one application of h from the identity
    canonicalizer = DecCanonicalizer(dec, AndersonConfig(tol=1e9))
    net = AdaptedNetwork([wrap_equivariant(tiny_classifier.blocks[0], canonicalizer)]).train()
    x = batch[:2]
    out, record = net.forward(x)
    assert not record.phis[0][0].is_identity
    upstream = rng.standard_normal(out.shape)
    grads, d_x = net.backward(record, upstream)

    def loss(value):
        return float(np.sum(upstream * net.forward(value)[0]))

    assert directional_error(loss, x, d_x, rng) < 1e-3
    for name in ("dec.head.weight", "block0.0.weight"):
        param = net.parameters()[name]
        original = param.copy()

        def loss_param(value, param=param):
            param[...] = value
            return loss(x)

        assert directional_error(loss_param, original, grads[name], rng) < 1e-3, name
        param[...] = original


def test_vanilla_canonicalizer_modes(batch, sampler):
    candidates = [Warp2D.identity(4), sampler.sample(1), sampler.sample(2)]
    canonicalizer = VanillaCanonicalizer(EnergyNet.build(1, 4, seed=0), candidates)
    feature = batch[0]
    scores = canonicalizer.scores(feature)
    warp, tape = canonicalizer.canonicalize(feature)
    assert tape is None and warp is candidates[int(np.argmin(scores))]
    canonicalizer.training = True
    blended, tape = canonicalizer.canonicalize(feature)
    assert tape.weights.sum() == pytest.approx(1.0)
    grads, d_feature = canonicalizer.backward(feature, tape, np.ones(blended.parameter_vector().size))
    assert d_feature.shape == feature.shape
    assert set(grads) <= set(canonicalizer.parameters())
    with pytest.raises(UsageError):
        VanillaCanonicalizer(EnergyNet.build(1, 4), [])


def test_adapted_forward_single_image(tiny_classifier, batch):
    adapted = build_adapted_classifier(tiny_classifier, CanonicalizerKind.DEC, dec_channels=(4,))
    logits, phis = adapted_forward(adapted, batch[0])
    assert logits.shape == (10,)
    assert len(phis) == 3 and phis[0][0].is_identity and phis[2] == []


def test_consistency_losses(tiny_classifier, batch, sampler):
    identity = WarpSampler.identity_only(4)
    assert invariance_loss(tiny_classifier, batch, identity) == 0.0
    assert equivariance_loss(lambda b: b, batch, sampler, n_samples=2) == 0.0
    assert invariance_loss(tiny_classifier, batch, sampler) > 0.0
    with pytest.raises(UsageError):
        equivariance_loss(tiny_classifier, batch, sampler)


def test_consistency_loss_gradients(tiny_classifier, batch, sampler):
    rng = np.random.default_rng(8)
    warps = [sampler.sample(i) for i in range(len(batch))]
    for fn in (invariance_loss_and_grads, equivariance_loss_and_grads):
        _, grads = fn(tiny_classifier, batch, warps)
        param = tiny_classifier.parameters()["block0.0.weight"]
        original = param.copy()

        def loss(value, fn=fn, param=param):
            param[...] = value
            return fn(tiny_classifier, batch, warps)[0]

        assert directional_error(loss, original, grads["block0.0.weight"], rng) < 1e-3, fn.__name__
        param[...] = original
