"""Locally scaled multi-digit datasets with ground-truth scales and warps."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from monocanon.const import DEFAULT_CONCENTRATION, DEFAULT_GRID_SIZE, DEFAULT_MIN_SEGMENT, DEFAULT_SPREAD
from monocanon.exceptions import GenerationError, IntegrityError, ParseError, UsageError
from monocanon.image_warp import apply_warp
from monocanon.parallel import run_parallel
from monocanon.warp import Warp2D, WarpSampler, derive_seed

from .const import (
    DATASET_HEADER,
    DATASET_MAGIC,
    DATASET_VERSION,
    DEFAULT_CANVAS,
    DEFAULT_DIGITS,
    DEFAULT_SCALE_RANGE,
    DEFAULT_TEST,
    DEFAULT_TRAIN,
    MANIFEST_NAME,
    MAX_PLACEMENT_RETRIES,
    PLACEMENT_POLICY,
    SPLIT_CODES,
)
from .glyphs import GlyphSource, MnistGlyphs, SegmentGlyphs, fit_glyph, ink_box
from .idx import read_idx, write_idx

_LOGGER = logging.getLogger(__name__)

__all__ = [
    "ComposedSample",
    "Dataset",
    "DatasetManifest",
    "MnistGlyphs",
    "SegmentGlyphs",
    "compose_sample",
    "fit_glyph",
    "generate_dataset",
    "ink_box",
    "make_variants",
    "read_dataset",
    "read_idx",
    "write_dataset",
    "write_idx",
]


@dataclass
class ComposedSample:
    """One canvas of digits, with the ground truth used to build it."""

    image: np.ndarray
    label: int
    digits: list
    digit_scales: list
    placements: list
    sample_id: int = 0
    source_indices: list = field(default_factory=list)
    variant_of: Optional[int] = None
    gt_warp: Optional[Warp2D] = None

    @property
    def dominant_scale(self) -> float:
        """Geometric mean of the digit scales."""
        return float(np.exp(np.mean(np.log(self.digit_scales))))


@dataclass(frozen=True)
class DatasetManifest:
    """Parameters that fully determine a generated dataset."""

    n_train: int = DEFAULT_TRAIN
    n_test: int = DEFAULT_TEST
    canvas: int = DEFAULT_CANVAS
    digits: int = DEFAULT_DIGITS
    scale_range: tuple = DEFAULT_SCALE_RANGE
    seed: int = 0
    source: str = "segments"
    mnist_dir: Optional[str] = None
    variants: int = 0
    grid_size: int = DEFAULT_GRID_SIZE
    concentration: float = DEFAULT_CONCENTRATION
    min_segment: float = DEFAULT_MIN_SEGMENT
    spread: float = DEFAULT_SPREAD
    placement: str = PLACEMENT_POLICY

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale_range", tuple(self.scale_range))
        if self.n_train < 1 or self.n_test < 1 or self.digits < 1 or self.canvas < 1:
            raise ValueError("counts, digits and canvas must be positive")
        low, high = self.scale_range
        if not 0 < low <= high:
            raise ValueError("scale_range must satisfy 0 < low <= high")
        if self.source not in ("segments", "mnist"):
            raise ValueError(f"unknown glyph source {self.source}")
        if self.variants < 0:
            raise ValueError("variants must be non-negative")

    @property
    def n_classes(self) -> int:
        """10 ** digits."""
        return 10 ** self.digits

    def sampler(self) -> WarpSampler:
        """Sampler used for variant warps."""
        return WarpSampler(self.grid_size, self.concentration, self.min_segment, self.spread)

    def to_dict(self) -> dict:
        """JSON form."""
        raw = asdict(self)
        raw["scale_range"] = list(self.scale_range)
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> 'DatasetManifest':
        """Parses ``to_dict`` output, ignoring bookkeeping keys added on write."""
        known = {key: value for key, value in raw.items() if key in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class Dataset:
    """Array view of one split."""

    images: np.ndarray
    labels: np.ndarray
    scales: np.ndarray
    variant_of: np.ndarray
    warps: list

    def __post_init__(self) -> None:
        count = self.images.shape[0]
        if not (self.labels.shape[0] == self.scales.shape[0] == self.variant_of.shape[0] == len(self.warps) == count):
            raise UsageError("dataset arrays disagree on the sample count")

    def __len__(self) -> int:
        return self.images.shape[0]

    @classmethod
    def from_samples(cls, samples: Sequence[ComposedSample]) -> 'Dataset':
        """Stacks composed samples; images are stored as float32."""
        if not samples:
            raise UsageError("no samples")
        return cls(
            images=np.stack([s.image for s in samples]).astype(np.float32),
            labels=np.array([s.label for s in samples], dtype=np.uint32),
            scales=np.array([s.digit_scales for s in samples], dtype=np.float64),
            variant_of=np.array([-1 if s.variant_of is None else s.variant_of for s in samples], dtype=np.int64),
            warps=[s.gt_warp for s in samples],
        )

    @property
    def dominant_scales(self) -> np.ndarray:
        """Geometric mean of the digit scales of every sample."""
        return np.exp(np.mean(np.log(self.scales), axis=1))

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        """Samples at ``indices``."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.images[idx], self.labels[idx], self.scales[idx], self.variant_of[idx],
                       [self.warps[i] for i in idx])

    def groups(self, variants: 'Dataset') -> list[np.ndarray]:
        """Stacks every base image with its variants, for invariance measurements."""
        out = []
        for index in range(len(self)):
            members = np.flatnonzero(variants.variant_of == index)
            if members.size:
                out.append(np.concatenate([self.images[index:index + 1], variants.images[members]]))
        return out


def compose_sample(glyphs: Sequence[np.ndarray], digits: Sequence[int], scales: Sequence[float],
                   canvas: Union[int, tuple], rng: np.random.Generator, sample_id: int = 0) -> ComposedSample:
    """Places resized glyphs left to right with random gaps and vertical jitter.

    Raises GenerationError when the glyphs cannot fit on the canvas; the
    caller is expected to resample scales.
    """
    height, width = (canvas, canvas) if isinstance(canvas, int) else canvas
    if not len(glyphs) == len(digits) == len(scales):
        raise UsageError("glyphs, digits and scales must have equal length")
    fitted = [fit_glyph(g, s) for g, s in zip(glyphs, scales)]
    total = sum(g.shape[1] for g in fitted)
    tallest = max(g.shape[0] for g in fitted)
    if total > width or tallest > height:
        raise GenerationError(f"glyphs need {total}x{tallest} px on a {width}x{height} canvas")
    gaps = np.floor(rng.dirichlet(np.ones(len(fitted) + 1)) * (width - total)).astype(int)
    image = np.zeros((height, width))
    placements = []
    x = int(gaps[0])
    for glyph, gap in zip(fitted, gaps[1:]):
        h, w = glyph.shape
        y = int(rng.integers(0, height - h + 1))
        image[y:y + h, x:x + w] = glyph
        placements.append((x, y, w, h))
        x += w + int(gap)
    label = int("".join(str(int(d)) for d in digits))
    return ComposedSample(image[None], label, [int(d) for d in digits], [float(s) for s in scales], placements,
                          sample_id)


def make_variants(sample: ComposedSample, sampler: WarpSampler, k: int, seed: int = 0) -> list[ComposedSample]:
    """``k`` warped copies of a sample, each storing its warp."""
    if k < 1:
        raise UsageError("k must be >= 1")
    variants = []
    for i in range(k):
        warp = sampler.sample(derive_seed(seed, sample.sample_id, i))
        variants.append(replace(sample, image=apply_warp(sample.image, warp), variant_of=sample.sample_id,
                                gt_warp=warp))
    return variants


def _glyph_source(manifest: DatasetManifest, split: str) -> GlyphSource:
    if manifest.source == "mnist":
        if manifest.mnist_dir is None:
            raise UsageError("mnist source needs mnist_dir")
        return MnistGlyphs.load(manifest.mnist_dir, split)
    return SegmentGlyphs(split)


def _make_sample(manifest: DatasetManifest, source: GlyphSource, split: str, index: int) -> ComposedSample:
    rng = np.random.default_rng(derive_seed(manifest.seed, SPLIT_CODES[split], index))
    digits = rng.integers(0, 10, size=manifest.digits)
    picked = [source.pick(int(d), rng) for d in digits]
    low, high = manifest.scale_range
    for _ in range(MAX_PLACEMENT_RETRIES):
        scales = rng.uniform(low, high, size=manifest.digits)
        try:
            sample = compose_sample([g for _, g in picked], digits, scales, manifest.canvas, rng, index)
        except GenerationError:
            continue
        sample.source_indices = [i for i, _ in picked]
        return sample
    raise GenerationError(f"{split} sample {index}: no feasible placement after {MAX_PLACEMENT_RETRIES} retries")


def generate_split(manifest: DatasetManifest, split: str, source: GlyphSource = None) -> list[ComposedSample]:
    """Composed samples of one split, generated in parallel and returned in index order."""
    source = source or _glyph_source(manifest, split)
    count = manifest.n_train if split == "train" else manifest.n_test
    _LOGGER.info("Generating %s %s samples from %s glyphs", count, split, source.name)
    return run_parallel(lambda index: _make_sample(manifest, source, split, index), range(count))


def generate_dataset(manifest: DatasetManifest) -> dict[str, Dataset]:
    """Train and test splits, plus warped test variants when ``manifest.variants`` > 0."""
    _LOGGER.debug(">> generate_dataset(seed=%s, source=%s)", manifest.seed, manifest.source)
    train = generate_split(manifest, "train")
    test = generate_split(manifest, "test")
    splits = {"train": Dataset.from_samples(train), "test": Dataset.from_samples(test)}
    if manifest.variants:
        sampler = manifest.sampler()
        seed = derive_seed(manifest.seed, SPLIT_CODES["variants"])
        nested = run_parallel(lambda s: make_variants(s, sampler, manifest.variants, seed), test)
        splits["variants"] = Dataset.from_samples([v for group in nested for v in group])
    return splits


def _encode_split(data: Dataset) -> bytes:
    count, channels, height, width = data.images.shape
    digits = data.scales.shape[1]
    parts = [
        struct.pack(DATASET_HEADER, DATASET_MAGIC, DATASET_VERSION, count, channels, height, width, digits),
        np.ascontiguousarray(data.images, dtype="<f4").tobytes(),
        np.ascontiguousarray(data.labels, dtype="<u4").tobytes(),
        np.ascontiguousarray(data.scales, dtype="<f8").tobytes(),
        np.ascontiguousarray(data.variant_of, dtype="<i8").tobytes(),
    ]
    for warp in data.warps:
        encoded = b"" if warp is None else json.dumps(warp.to_dict(), separators=(",", ":")).encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
    return b"".join(parts)


def _decode_split(raw: bytes, name: str) -> Dataset:
    header_size = struct.calcsize(DATASET_HEADER)
    if len(raw) < header_size:
        raise ParseError(len(raw), f"{name}: truncated header")
    magic, version, count, channels, height, width, digits = struct.unpack_from(DATASET_HEADER, raw, 0)
    if magic != DATASET_MAGIC:
        raise ParseError(0, f"{name}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise ParseError(4, f"{name}: unsupported version {version}")
    offset = header_size

    def take(dtype: str, shape: tuple) -> np.ndarray:
        nonlocal offset
        size = int(np.prod(shape))
        nbytes = size * np.dtype(dtype).itemsize
        if offset + nbytes > len(raw):
            raise ParseError(offset, f"{name}: truncated payload")
        out = np.frombuffer(raw, dtype=dtype, count=size, offset=offset).reshape(shape)
        offset += nbytes
        return out

    images = take("<f4", (count, channels, height, width)).astype(np.float32)
    labels = take("<u4", (count,)).astype(np.uint32)
    scales = take("<f8", (count, digits)).astype(np.float64)
    variant_of = take("<i8", (count,)).astype(np.int64)
    warps = []
    for _ in range(count):
        (length,) = take("<u4", (1,))
        blob = take("u1", (int(length),)).tobytes()
        warps.append(Warp2D.from_dict(json.loads(blob)) if blob else None)
    if offset != len(raw):
        raise ParseError(offset, f"{name}: trailing bytes")
    return Dataset(images, labels, scales, variant_of, warps)


def write_dataset(manifest: DatasetManifest, splits: dict[str, Dataset], path: Union[str, Path]) -> Path:
    """Writes ``manifest.json`` and one MCDS records file per split, with sha256 checksums."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    record = manifest.to_dict()
    record["counts"] = {}
    record["checksums"] = {}
    record["files"] = {}
    for name, data in splits.items():
        payload = _encode_split(data)
        filename = f"{name}.mcds"
        (root / filename).write_bytes(payload)
        record["counts"][name] = len(data)
        record["checksums"][name] = hashlib.sha256(payload).hexdigest()
        record["files"][name] = filename
    (root / MANIFEST_NAME).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    _LOGGER.info("Wrote dataset %s (%s)", root, ", ".join(f"{k}={v}" for k, v in record["counts"].items()))
    return root


def read_dataset(path: Union[str, Path]) -> tuple[DatasetManifest, dict[str, Dataset]]:
    """Reads a dataset directory, verifying every checksum and count."""
    root = Path(path)
    try:
        record = json.loads((root / MANIFEST_NAME).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"no {MANIFEST_NAME} in {root}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.pos, f"{root / MANIFEST_NAME} is not valid JSON") from exc
    manifest = DatasetManifest.from_dict(record)
    splits = {}
    for name, filename in record.get("files", {}).items():
        payload = (root / filename).read_bytes()
        if hashlib.sha256(payload).hexdigest() != record["checksums"][name]:
            raise IntegrityError(f"checksum mismatch for split {name} ({filename})")
        data = _decode_split(payload, filename)
        if len(data) != record["counts"][name]:
            raise IntegrityError(f"split {name} holds {len(data)} records, manifest says {record['counts'][name]}")
        splits[name] = data
    return manifest, splits
