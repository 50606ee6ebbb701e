"""Tests for the fixed-point canonicalizer, its solver and the energy-based canonicalizers."""

import logging

import numpy as np
import pytest

from monocanon.dec import (
    AndersonConfig,
    DecNet,
    anderson_solve,
    constrain,
    constrain_backward,
    dec_backward,
    h_apply,
    mixing_weights,
    picard_config,
    record_tape,
    solve_fixed_point,
    unroll,
)
from monocanon.dec.claim import check_claim1
from monocanon.dec.energy import (
    ConstantEnergy,
    EnergyNet,
    FeatureDistanceEnergy,
    ParameterEnergy,
    TemplateEnergy,
    gd_canonicalize,
    unrolled_gd_backward,
    unrolled_gd_canonicalize,
    vanilla_canonicalize,
)
from monocanon.enum import BackwardMode
from monocanon.exceptions import SolverError, StructuralError, UsageError
from monocanon.image_warp import apply_warp_inverse
from monocanon.nn import dec_raw_size
from monocanon.warp import Warp2D

from .gradcheck import directional_error


def _affine_contraction(dim=16, seed=0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigen = np.resize([0.95, 0.5, -0.3, 0.1], dim)
    matrix = q @ np.diag(eigen) @ q.T
    offset = rng.standard_normal(dim)
    return (lambda z: matrix @ z + offset), np.linalg.solve(np.eye(dim) - matrix, offset)


def _random_dec(seed=0, grid=2):
    return DecNet.build(1, grid, channels=(4,), seed=seed, zero_head=False)


def test_constrain_zero_is_identity():
    assert constrain(np.zeros(dec_raw_size(4, 4)), 4).is_identity
    assert constrain(np.full(dec_raw_size(3, 2), 7.5), 3, 2).is_identity


def test_constrain_any_raw_is_valid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        warp = constrain(rng.normal(0.0, 10.0, dec_raw_size(4, 4)), 4)
        for func in warp.funcs:
            assert np.diff(func.values).min() >= 0.02 - 1e-12


def test_constrain_rejects_wrong_size():
    with pytest.raises(StructuralError):
        constrain(np.zeros(5), 4)


def test_constrain_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    raw = rng.standard_normal(dec_raw_size(3, 2))
    d_values = rng.standard_normal(constrain(raw, 3, 2).parameter_vector().size)
    grad = constrain_backward(raw, d_values, 3, 2)

    def loss(r):
        return float(d_values @ constrain(r, 3, 2).parameter_vector())

    assert directional_error(loss, raw, grad, rng) < 1e-6


def test_anderson_beats_picard_on_affine_contraction():
    fn, exact = _affine_contraction()
    z0 = np.zeros(16)
    fast = anderson_solve(fn, z0, AndersonConfig(window=5, max_iters=30, tol=1e-8))
    slow = anderson_solve(fn, z0, picard_config(max_iters=1000, tol=1e-8))
    assert fast.converged and fast.residual < 1e-8
    assert slow.converged
    assert 2 * fast.iteration <= slow.iteration
    np.testing.assert_allclose(fast.solution, exact, atol=1e-6)


def test_window_one_is_bitwise_picard():
    fn, _ = _affine_contraction(seed=1)
    z0 = np.linspace(-1.0, 1.0, 16)
    state = anderson_solve(fn, z0, picard_config(max_iters=7, tol=1e-300))
    z = z0
    for _ in range(8):
        z = fn(z)
    assert state.iteration == 7
    np.testing.assert_array_equal(state.solution, z)


def test_anderson_reports_non_finite_map():
    with pytest.raises(SolverError) as info:
        anderson_solve(lambda z: z * np.nan, np.ones(3), AndersonConfig())
    assert info.value.iteration == 0


def test_anderson_stops_at_budget(caplog):
    with caplog.at_level(logging.WARNING, logger="monocanon.dec.anderson"):
        state = anderson_solve(lambda z: z + 1.0, np.zeros(2), AndersonConfig(max_iters=3))
    assert not state.converged
    assert state.iteration == 3
    assert len(state.residuals) == 4
    assert any(record.levelno == logging.WARNING and "not reached" in record.getMessage()
               for record in caplog.records)


def test_mixing_weights_sum_to_one():
    weights = mixing_weights(np.random.default_rng(2).standard_normal((6, 3)))
    assert weights.sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(mixing_weights(np.ones((4, 1))), [1.0])


@pytest.mark.parametrize("kwargs", [{"window": 0}, {"beta": 0.0}, {"beta": 1.5}, {"tol": 0.0}])
def test_anderson_config_validation(kwargs):
    with pytest.raises(ValueError):
        AndersonConfig(**kwargs)


def test_zero_head_dec_returns_identity(image):
    net = DecNet.build(1, 4, channels=(4,))
    result = solve_fixed_point(net, image)
    assert result.warp.is_identity
    assert result.converged and result.iterations == 0


def test_solve_fixed_point_checks_start(image):
    with pytest.raises(StructuralError):
        solve_fixed_point(DecNet.build(1, 4, channels=(4,)), image, phi0=np.zeros(3))


def test_phantom_tape_reproduces_solution(image):
    net = _random_dec()
    result = solve_fixed_point(net, image, cfg=AndersonConfig(max_iters=4))
    tape = record_tape(net, image, result)
    np.testing.assert_array_equal(tape.output, result.raw)
    np.testing.assert_array_equal(h_apply(net, result.state.last_input, image), result.raw)


def test_unroll_backward_matches_finite_differences(image):
    rng = np.random.default_rng(3)
    net = _random_dec(seed=4)
    start = rng.normal(0.0, 0.3, net.raw_size)
    upstream = rng.standard_normal(net.constrain(start).parameter_vector().size)
    tape = unroll(net, image, start, steps=2)
    grads = dec_backward(net, image, tape, upstream)

    def loss(img=image, z=start):
        return float(upstream @ net.constrain(unroll(net, img, z, steps=2).output).parameter_vector())

    assert directional_error(lambda z: loss(z=z), start, grads.d_start, rng) < 1e-4
    assert directional_error(lambda img: loss(img=img), image, grads.d_img, rng) < 1e-4
    weight = net.parameters()["dec.head.weight"]
    original = weight.copy()

    def loss_weight(value):
        weight[...] = value
        return loss()

    assert directional_error(loss_weight, original, grads.params["dec.head.weight"], rng) < 1e-4
    weight[...] = original


def test_phantom_gradient_is_a_descent_direction(image):
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        net = DecNet.build(1, 2, channels=(4,), seed=seed, zero_head=False)
        result = solve_fixed_point(net, image)
        upstream = rng.standard_normal(result.warp.parameter_vector().size)
        phantom = dec_backward(net, image, record_tape(net, image, result), upstream)
        unrolled = dec_backward(net, image, record_tape(net, image, result, BackwardMode.UNROLL, steps=5), upstream)
        inner = sum(float(np.sum(phantom.params[name] * unrolled.params[name])) for name in phantom.params)
        hits += inner > 0.0
    assert hits >= 95


def test_stale_tape_rejected(image):
    net = _random_dec()
    tape = unroll(net, image, net.identity_raw(), steps=1)
    with pytest.raises(StructuralError):
        dec_backward(net, image, tape, np.zeros(18), mode=BackwardMode.PHANTOM)
    net.mark_updated()
    with pytest.raises(StructuralError):
        dec_backward(net, image, tape, np.zeros(18))


def test_unroll_needs_a_step(image):
    with pytest.raises(ValueError):
        unroll(_random_dec(), image, np.zeros(12), steps=0)


@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_descent_minimizer_is_a_fixed_point(seed):
    report = check_claim1(seed)
    assert report.passed, report.to_dict()
    assert report.max_abs_diff < 1e-4


def test_gd_energy_never_increases(rng):
    img = np.stack([np.linspace(0, 1, 16)[None].repeat(16, 0)] * 2) * rng.uniform(0.5, 2.0, (2, 1, 1))
    template = apply_warp_inverse(img, constrain(rng.normal(0.0, 0.3, 12), 2))
    result = gd_canonicalize(TemplateEnergy(template, grid_n=2), img, lr=1.0, steps=200)
    assert np.all(np.diff(result.energies) <= 0.0)
    assert result.energies[-1] < result.energies[0]


def test_gd_recovers_parameter_target(image):
    target = np.linspace(-1.0, 1.0, 12)
    result = gd_canonicalize(ParameterEnergy(target, grid_n=2), image, lr=0.5, steps=200)
    np.testing.assert_allclose(result.raw, target, atol=1e-8)


def test_gd_stops_on_flat_energy(image):
    result = gd_canonicalize(ConstantEnergy(3.0, grid_n=2), image)
    assert result.iterations == 0
    assert result.warp.is_identity


def test_vanilla_picks_lowest_energy(image, sampler):
    warp = sampler.sample(5)
    energy = FeatureDistanceEnergy(apply_warp_inverse(image, warp), grid_n=4)
    index, chosen = vanilla_canonicalize(energy, image, [Warp2D.identity(4), warp])
    assert index == 1 and chosen is warp
    with pytest.raises(UsageError):
        vanilla_canonicalize(energy, image, [])
    with pytest.raises(UsageError):
        vanilla_canonicalize(energy, image, [warp])


def test_energy_net_gradients(image):
    rng = np.random.default_rng(6)
    energy = EnergyNet.build(1, grid_n=2, seed=1)
    raw = rng.normal(0.0, 0.3, 12)
    result = energy.evaluate(image, raw)
    assert directional_error(lambda r: energy.value_and_grad(image, r)[0], raw, result.d_raw, rng) < 1e-4
    assert set(result.params) == set(energy.parameters())


def test_unrolled_gd_backward_matches_finite_differences(rng):
    img = np.stack([np.linspace(0, 1, 16)[None].repeat(16, 0), np.linspace(0, 1, 16)[:, None].repeat(16, 1)])
    template = apply_warp_inverse(img, constrain(rng.normal(0.0, 0.3, 12), 2))
    energy = TemplateEnergy(template, grid_n=2)
    start = rng.normal(0.0, 0.1, 12)
    upstream = rng.standard_normal(12)
    tape = unrolled_gd_canonicalize(energy, img, start, lr=0.1, steps=3)
    grads = unrolled_gd_backward(energy, tape, upstream)

    def loss(z):
        return float(upstream @ unrolled_gd_canonicalize(energy, img, z, lr=0.1, steps=3).output)

    assert directional_error(loss, start, grads.d_raw, rng) < 1e-3
    with pytest.raises(StructuralError):
        unrolled_gd_backward(energy, tape, np.zeros(3))
