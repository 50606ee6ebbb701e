"""Shared fixtures."""

import numpy as np
import pytest

from monocanon.datagen import DatasetManifest, generate_dataset
from monocanon.nn import build_toy_classifier
from monocanon.warp import WarpSampler


def smooth_image(rng: np.random.Generator, size: int = 16, channels: int = 1, blobs: int = 4) -> np.ndarray:
    """Sum of wide Gaussian blobs, so resampling errors stay small."""
    ys, xs = np.mgrid[0:size, 0:size] / size
    out = np.zeros((channels, size, size))
    for c in range(channels):
        for _ in range(blobs):
            cx, cy = rng.uniform(0.2, 0.8, 2)
            width = rng.uniform(0.15, 0.3)
            out[c] += np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * width ** 2))
    return out / out.max()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def image(rng):
    return smooth_image(rng)


@pytest.fixture
def sampler():
    return WarpSampler(grid_size=4)


@pytest.fixture
def separable_sampler():
    return WarpSampler(grid_size=4, spread=0.0)


@pytest.fixture
def near_separable_sampler():
    return WarpSampler.near_separable(grid_size=4)


@pytest.fixture
def tiny_classifier():
    return build_toy_classifier(1, 10, 16, channels=(4, 4), seed=0)


@pytest.fixture(scope="session")
def tiny_manifest():
    return DatasetManifest(n_train=12, n_test=6, canvas=32, digits=1, scale_range=(0.4, 1.0), seed=3, variants=2)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_manifest):
    return generate_dataset(tiny_manifest)
