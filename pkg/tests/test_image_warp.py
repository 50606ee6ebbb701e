"""Tests for warping images and feature maps."""

import numpy as np
import pytest

from monocanon.exceptions import ParseError, StructuralError
from monocanon.image_warp import (
    _sample_sites,
    apply_warp,
    apply_warp_inverse,
    bilinear_sample,
    coordinate_image,
    draw_warp_grid,
    pixel_grid,
    read_pnm,
    resize_bilinear,
    round_trip_error,
    warp_backward,
    write_pnm,
)
from monocanon.warp import PiecewiseMonotone1D, Warp2D

from .conftest import smooth_image
from .gradcheck import directional_error


def _interior_mask(grid: int = 4) -> np.ndarray:
    mask = np.ones(2 * (grid + 1) * (grid + 1))
    mask[0::grid + 1] = 0.0
    mask[grid::grid + 1] = 0.0
    return mask


def test_identity_warp_copies(image):
    out = apply_warp(image, Warp2D.identity(4))
    np.testing.assert_array_equal(out, image)
    assert out is not image
    np.testing.assert_array_equal(apply_warp_inverse(image, Warp2D.identity(4)), image)


def test_bilinear_sample_at_pixel_centres_is_exact(image):
    px, py = pixel_grid(16, 16)
    np.testing.assert_allclose(bilinear_sample(image, px, py), image, atol=1e-12)


def test_warp_moves_coordinates(separable_sampler):
    warp = separable_sampler.sample(3)
    coords = coordinate_image(32, 32)
    warped = apply_warp_inverse(coords, warp)
    px, py = pixel_grid(32, 32)
    u, v = warp(px, py)
    # coordinates are linear in the pixel grid, so unclamped samples are exact
    inner = (np.minimum(u, v) > 1 / 64) & (np.maximum(u, v) < 63 / 64)
    assert inner.mean() > 0.5
    np.testing.assert_allclose(warped[0][inner], u[inner], atol=1e-12)
    np.testing.assert_allclose(warped[1][inner], v[inner], atol=1e-12)


def test_round_trip_error_small(image, near_separable_sampler):
    for seed in range(5):
        assert round_trip_error(image, near_separable_sampler.sample(seed)) < 2e-2
    assert round_trip_error(image, Warp2D.identity(4)) == 0.0


def test_leading_axes_share_the_warp(image, sampler):
    warp = sampler.sample(1)
    batch = np.stack([image, 2.0 * image])
    out = apply_warp(batch, warp)
    assert out.shape == batch.shape
    np.testing.assert_allclose(out[1], 2.0 * out[0], atol=1e-12)


def test_flat_input_rejected():
    with pytest.raises(StructuralError):
        apply_warp(np.zeros(5), Warp2D.identity(2))


def test_resize_keeps_constant():
    np.testing.assert_allclose(resize_bilinear(np.full((1, 5, 7), 0.3), 9, 4), 0.3)


@pytest.mark.parametrize("inverse", [False, True])
def test_warp_backward_matches_finite_differences(image, sampler, inverse):
    rng = np.random.default_rng(2)
    warp = sampler.sample(4)
    upstream = rng.standard_normal(image.shape)
    apply = apply_warp_inverse if inverse else apply_warp
    grads = warp_backward(image, warp, upstream, inverse=inverse)

    def loss_values(vec):
        return float(np.sum(upstream * apply(image, Warp2D.from_parameters(vec, 4, 4, min_segment=0.0))))

    def loss_pixels(pixels):
        return float(np.sum(upstream * apply(pixels, warp)))

    assert directional_error(loss_values, warp.parameter_vector(), grads.d_warp_values, rng,
                             h=1e-7, mask=_interior_mask()) < 1e-4
    assert directional_error(loss_pixels, image, grads.d_pixels, rng) < 1e-6


def test_sites_on_warp_knots_are_nudged(rng):
    # on a 6-pixel grid the centers 0.25 and 0.75 coincide with knots of the inverse
    row = PiecewiseMonotone1D.from_increments([0.25, 0.15, 0.35, 0.25], min_segment=0.0)
    warp = Warp2D.separable(row, PiecewiseMonotone1D.identity(4, 0.0))
    image = smooth_image(rng, size=6)
    upstream = rng.standard_normal(image.shape)
    grads = warp_backward(image, warp, upstream)

    def loss_values(vec):
        return float(np.sum(upstream * apply_warp(image, Warp2D.from_parameters(vec, 4, 4, min_segment=0.0))))

    assert directional_error(loss_values, warp.parameter_vector(), grads.d_warp_values, rng,
                             h=1e-8, mask=_interior_mask()) < 1e-4
    px, py, _, _, _ = _sample_sites(warp, 6, 6, inverse=False)
    centers_x, centers_y = pixel_grid(6, 6)
    on_knot = np.isin(np.round(centers_x, 12), [0.25, 0.5, 0.75])
    np.testing.assert_allclose(px - centers_x, np.where(on_knot, 2e-6, 0.0), atol=1e-15)
    assert np.count_nonzero(py != centers_y) == 12


def test_warp_backward_of_identity(image):
    upstream = np.ones_like(image)
    grads = warp_backward(image, Warp2D.identity(4), upstream)
    np.testing.assert_array_equal(grads.d_pixels, upstream)


def test_warp_backward_checks_shape(image):
    with pytest.raises(StructuralError):
        warp_backward(image, Warp2D.identity(4), np.ones((1, 8, 8)))


def test_draw_warp_grid_marks_lines(image):
    drawn = draw_warp_grid(image, Warp2D.identity(4), value=5.0)
    assert drawn.shape == image.shape
    assert np.any(drawn == 5.0)
    assert not np.any(image == 5.0)


def test_pnm_round_trip(tmp_path, image):
    path = tmp_path / "img.pgm"
    write_pnm(path, image[0])
    np.testing.assert_allclose(read_pnm(path), image[0], atol=0.5 / 255 + 1e-12)
    colour = np.stack([image[0], 1.0 - image[0], image[0] * 0.5])
    write_pnm(tmp_path / "img.ppm", colour)
    assert read_pnm(tmp_path / "img.ppm").shape == (3, 16, 16)


def test_pnm_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(ParseError):
        read_pnm(bad)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ParseError):
        read_pnm(short)
    with pytest.raises(StructuralError):
        write_pnm(tmp_path / "x.pgm", np.zeros((2, 4, 4)))
