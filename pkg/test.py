import logging

import numpy as np

from monocanon import AndersonConfig, DecCanonicalizer, DecNet, WarpSampler, apply_warp, apply_warp_inverse
from monocanon.datagen import SegmentGlyphs, compose_sample
from monocanon.exceptions import SolverError

_LOGGER = logging.getLogger(__name__)


def main():
    """Running function"""
    rng = np.random.default_rng(0)
    source = SegmentGlyphs("test")
    digits = rng.integers(0, 10, size=2)
    glyphs = [source.pick(int(d), rng)[1] for d in digits]
    image = compose_sample(glyphs, digits, np.ones(2), 64, rng).image
    _LOGGER.info("Composed digits %s into a %s canvas", digits, image.shape)

    sampler = WarpSampler(grid_size=4)
    canonicalizer = DecCanonicalizer(DecNet.build(1, 4, seed=0, zero_head=False), AndersonConfig(verbose=True))
    for seed in range(4):
        warp = sampler.sample(seed)
        warped = apply_warp(image, warp)
        restored = apply_warp_inverse(warped, warp)
        _LOGGER.debug("Warp %s round trip mse %.2e", seed, float(np.mean((restored - image) ** 2)))
        try:
            canonical, _ = canonicalizer.canonicalize(warped)
        except SolverError as err:
            _LOGGER.error("Canonicalization failed: %s", err)
            continue
        _LOGGER.info("Warp %s canonical parameters %s", seed, np.round(canonical.parameter_vector(), 3))


if __name__ == "__main__":
    logging.basicConfig(
        level=logging.DEBUG,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    main()
