"""Digit glyph sources: MNIST files or procedural seven-segment digits."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Union

import numpy as np

from monocanon.exceptions import GenerationError, UsageError
from monocanon.image_warp import resize_bilinear
from monocanon.warp import derive_seed

from .const import (
    DIGIT_SEGMENTS,
    GLYPH_SIZE,
    INK_THRESHOLD,
    MNIST_FILES,
    SEGMENT_INDEX_SPAN,
    SEGMENT_SPLIT_OFFSET,
    SEGMENTS,
)
from .idx import read_idx

_LOGGER = logging.getLogger(__name__)


class GlyphSource(ABC):
    """Index-addressed 28x28 digit glyphs with intensities in [0, 1]."""

    name: str

    def __init__(self, split: str) -> None:
        if split not in SEGMENT_SPLIT_OFFSET:
            raise UsageError(f"unknown split {split}")
        self.split = split

    @abstractmethod
    def pick(self, digit: int, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        """A random glyph of ``digit``: its source index and pixels."""


class MnistGlyphs(GlyphSource):
    """Glyphs taken from one MNIST split."""

    name = "mnist"

    def __init__(self, images: np.ndarray, labels: np.ndarray, split: str) -> None:
        super().__init__(split)
        self.images = images
        self.labels = labels
        self.by_digit = {d: np.flatnonzero(labels == d) for d in range(10)}
        missing = [d for d, idx in self.by_digit.items() if idx.size == 0]
        if missing:
            raise GenerationError(f"MNIST {split} split has no samples of digits {missing}")

    @classmethod
    def load(cls, directory: Union[str, Path], split: str) -> 'MnistGlyphs':
        """Reads the IDX pair of ``split`` from ``directory`` (plain or .gz)."""
        directory = Path(directory)
        paths = []
        for stem in MNIST_FILES[split]:
            candidates = [directory / stem, directory / f"{stem}.gz"]
            found = next((p for p in candidates if p.exists()), None)
            if found is None:
                raise UsageError(f"missing MNIST file {stem} in {directory}")
            paths.append(found)
        images = read_idx(paths[0])
        labels = read_idx(paths[1])
        if images.shape[0] != labels.shape[0]:
            raise GenerationError(f"{images.shape[0]} images but {labels.shape[0]} labels in MNIST {split}")
        _LOGGER.info("Loaded %s MNIST %s glyphs from %s", images.shape[0], split, directory)
        return cls(images, labels, split)

    def pick(self, digit: int, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        index = int(rng.choice(self.by_digit[digit]))
        return index, self.images[index].astype(np.float64) / 255.0


class SegmentGlyphs(GlyphSource):
    """Seven-segment digits with random size, slant, stroke width and endpoint jitter."""

    name = "segments"

    def pick(self, digit: int, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        index = SEGMENT_SPLIT_OFFSET[self.split] + int(rng.integers(0, SEGMENT_INDEX_SPAN))
        return index, self.glyph(digit, index)

    @staticmethod
    def glyph(digit: int, index: int) -> np.ndarray:
        """Renders variation ``index`` of ``digit``."""
        rng = np.random.default_rng(derive_seed(index, digit))
        width = rng.uniform(8.0, 12.0)
        half = rng.uniform(8.0, 10.0)
        slant = rng.uniform(-0.15, 0.15)
        thickness = rng.uniform(1.2, 2.2)
        left = (GLYPH_SIZE - width) / 2.0
        top = (GLYPH_SIZE - 2.0 * half) / 2.0
        ys, xs = np.mgrid[0:GLYPH_SIZE, 0:GLYPH_SIZE] + 0.5
        dist = np.full((GLYPH_SIZE, GLYPH_SIZE), np.inf)
        for key in DIGIT_SEGMENTS[digit]:
            ends = np.array(SEGMENTS[key]) + rng.uniform(-0.04, 0.04, size=(2, 2))
            py = top + ends[:, 1] * half
            px = left + ends[:, 0] * width + slant * (top + 2.0 * half - py)
            dist = np.minimum(dist, _segment_distance(xs, ys, px, py))
        return np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0)


def _segment_distance(xs: np.ndarray, ys: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    dx, dy = px[1] - px[0], py[1] - py[0]
    length_sq = dx * dx + dy * dy
    t = np.clip(((xs - px[0]) * dx + (ys - py[0]) * dy) / length_sq, 0.0, 1.0)
    return np.hypot(xs - (px[0] + t * dx), ys - (py[0] + t * dy))


def ink_box(glyph: np.ndarray, threshold: float = INK_THRESHOLD) -> tuple[int, int, int, int]:
    """(top, left, height, width) of the pixels above ``threshold``."""
    rows = np.flatnonzero(glyph.max(axis=1) > threshold)
    cols = np.flatnonzero(glyph.max(axis=0) > threshold)
    if rows.size == 0:
        raise GenerationError("glyph has no ink")
    return int(rows[0]), int(cols[0]), int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1)


def fit_glyph(glyph: np.ndarray, scale: float) -> np.ndarray:
    """Crops a glyph to its ink box and resizes it to a height of round(28 * scale)."""
    top, left, height, width = ink_box(glyph)
    crop = glyph[top:top + height, left:left + width]
    new_h = max(1, int(round(GLYPH_SIZE * scale)))
    new_w = max(1, int(round(width * new_h / height)))
    return np.clip(resize_bilinear(crop, new_h, new_w), 0.0, 1.0)
