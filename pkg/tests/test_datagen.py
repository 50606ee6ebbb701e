"""Tests for dataset generation, IDX parsing and dataset files."""

import json

import numpy as np
import pytest

from monocanon.datagen import (
    ComposedSample,
    Dataset,
    DatasetManifest,
    compose_sample,
    generate_dataset,
    generate_split,
    make_variants,
    read_dataset,
    write_dataset,
)
from monocanon.datagen.const import SEGMENT_SPLIT_OFFSET
from monocanon.datagen.glyphs import MnistGlyphs, SegmentGlyphs, fit_glyph, ink_box
from monocanon.datagen.idx import read_idx, write_idx
from monocanon.exceptions import GenerationError, IntegrityError, ParseError, UsageError
from monocanon.warp import WarpSampler


def _glyphs(digits):
    return [SegmentGlyphs.glyph(d, 1000 + i) for i, d in enumerate(digits)]


def test_label_reads_digits_left_to_right(rng):
    sample = compose_sample(_glyphs([5, 4, 9]), [5, 4, 9], [0.5, 0.5, 0.5], 64, rng)
    assert sample.label == 549
    assert sample.image.shape == (1, 64, 64)
    xs = [x for x, _, _, _ in sample.placements]
    assert xs == sorted(xs)
    for (x, _, w, _), (nxt, _, _, _) in zip(sample.placements, sample.placements[1:]):
        assert x + w <= nxt


def test_leading_zero_label(rng):
    assert compose_sample(_glyphs([0, 7]), [0, 7], [0.5, 0.5], 64, rng).label == 7


def test_glyph_height_follows_scale():
    glyph = SegmentGlyphs.glyph(8, 3)
    small, large = fit_glyph(glyph, 0.5), fit_glyph(glyph, 1.0)
    assert small.shape[0] == 14 and large.shape[0] == 28
    assert large.shape[1] / small.shape[1] == pytest.approx(2.0, rel=0.15)


def test_ink_box():
    glyph = np.zeros((28, 28))
    glyph[3:10, 5:8] = 1.0
    assert ink_box(glyph) == (3, 5, 7, 3)
    with pytest.raises(GenerationError):
        ink_box(np.zeros((28, 28)))


def test_infeasible_composition(rng):
    with pytest.raises(GenerationError):
        compose_sample(_glyphs([8, 8, 8]), [8, 8, 8], [2.0, 2.0, 2.0], 32, rng)
    with pytest.raises(UsageError):
        compose_sample(_glyphs([1]), [1, 2], [1.0], 32, rng)


def test_dominant_scale_is_geometric_mean():
    sample = ComposedSample(np.zeros((1, 4, 4)), 12, [1, 2], [0.5, 2.0], [])
    assert sample.dominant_scale == pytest.approx(1.0)


def test_variants_store_their_warps(rng):
    sample = compose_sample(_glyphs([3]), [3], [0.8], 32, rng, sample_id=4)
    sampler = WarpSampler(grid_size=4)
    variants = make_variants(sample, sampler, 2, seed=1)
    assert [v.variant_of for v in variants] == [4, 4]
    assert all(v.gt_warp is not None for v in variants)
    assert not np.array_equal(variants[0].image, variants[1].image)
    with pytest.raises(UsageError):
        make_variants(sample, sampler, 0)


def test_manifest_validation():
    with pytest.raises(ValueError):
        DatasetManifest(scale_range=(1.0, 0.5))
    with pytest.raises(ValueError):
        DatasetManifest(source="fonts")
    manifest = DatasetManifest(digits=3, scale_range=[0.5, 1.0])
    assert manifest.n_classes == 1000
    assert DatasetManifest.from_dict({**manifest.to_dict(), "counts": {}}) == manifest


def test_generated_splits(tiny_manifest, tiny_dataset):
    train, test, variants = tiny_dataset["train"], tiny_dataset["test"], tiny_dataset["variants"]
    assert (len(train), len(test), len(variants)) == (12, 6, 12)
    assert train.images.dtype == np.float32 and train.images.shape == (12, 1, 32, 32)
    assert np.all(train.labels < tiny_manifest.n_classes)
    assert np.all((train.scales >= 0.4) & (train.scales <= 1.0))
    np.testing.assert_array_equal(np.sort(variants.variant_of), np.repeat(np.arange(6), 2))
    groups = test.groups(variants)
    assert len(groups) == 6 and groups[0].shape == (3, 1, 32, 32)


def test_generation_is_deterministic(tiny_manifest):
    first = generate_split(tiny_manifest, "test")
    second = generate_split(tiny_manifest, "test")
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.image, b.image)
        assert a.label == b.label
    other = generate_split(DatasetManifest(**{**tiny_manifest.to_dict(), "seed": 4}), "test")
    assert any(not np.array_equal(a.image, b.image) for a, b in zip(first, other))


def test_train_and_test_glyphs_are_disjoint(tiny_manifest):
    train = {i for s in generate_split(tiny_manifest, "train") for i in s.source_indices}
    test = {i for s in generate_split(tiny_manifest, "test") for i in s.source_indices}
    assert max(train) < SEGMENT_SPLIT_OFFSET["test"] <= min(test)


def test_dataset_round_trip(tmp_path, tiny_manifest, tiny_dataset):
    write_dataset(tiny_manifest, tiny_dataset, tmp_path)
    manifest, splits = read_dataset(tmp_path)
    assert manifest == tiny_manifest
    assert set(splits) == {"train", "test", "variants"}
    for name, data in tiny_dataset.items():
        np.testing.assert_array_equal(splits[name].images, data.images)
        np.testing.assert_array_equal(splits[name].labels, data.labels)
        np.testing.assert_array_equal(splits[name].scales, data.scales)
        np.testing.assert_array_equal(splits[name].variant_of, data.variant_of)
    for stored, original in zip(splits["variants"].warps, tiny_dataset["variants"].warps):
        assert stored.max_deviation(original) == 0.0
    assert splits["train"].warps[0] is None


def test_tampered_dataset_is_rejected(tmp_path, tiny_manifest, tiny_dataset):
    write_dataset(tiny_manifest, tiny_dataset, tmp_path)
    path = tmp_path / "test.mcds"
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        read_dataset(tmp_path)


def test_count_mismatch_is_rejected(tmp_path, tiny_manifest, tiny_dataset):
    write_dataset(tiny_manifest, tiny_dataset, tmp_path)
    record = json.loads((tmp_path / "manifest.json").read_text())
    record["counts"]["train"] = 13
    (tmp_path / "manifest.json").write_text(json.dumps(record))
    with pytest.raises(IntegrityError):
        read_dataset(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(UsageError):
        read_dataset(tmp_path)


def test_dataset_arrays_must_agree():
    with pytest.raises(UsageError):
        Dataset(np.zeros((2, 1, 4, 4)), np.zeros(1), np.ones((2, 1)), np.full(2, -1), [None, None])


@pytest.mark.parametrize("compress", [False, True])
def test_idx_round_trip(tmp_path, compress):
    images = np.random.default_rng(0).integers(0, 256, (3, 28, 28)).astype(np.uint8)
    labels = np.array([1, 9, 0], dtype=np.uint8)
    write_idx(tmp_path / "images", images, compress)
    write_idx(tmp_path / "labels", labels, compress)
    np.testing.assert_array_equal(read_idx(tmp_path / "images"), images)
    np.testing.assert_array_equal(read_idx(tmp_path / "labels"), labels)


def test_idx_errors(tmp_path):
    path = tmp_path / "images"
    write_idx(path, np.zeros((2, 28, 28), dtype=np.uint8))
    raw = path.read_bytes()
    path.write_bytes(raw[:-1])
    with pytest.raises(ParseError) as info:
        read_idx(path)
    assert info.value.offset == len(raw) - 1
    path.write_bytes(b"\x00\x00\x09\x99" + raw[4:])
    with pytest.raises(ParseError):
        read_idx(path)
    path.write_bytes(raw[:6])
    with pytest.raises(ParseError):
        read_idx(path)
    labels = tmp_path / "labels"
    write_idx(labels, np.array([3, 12], dtype=np.uint8))
    with pytest.raises(ParseError):
        read_idx(labels)


def _fake_mnist(directory):
    directory.mkdir()
    images = np.zeros((10, 28, 28), dtype=np.uint8)
    images[:, 6:22, 10:18] = 255
    labels = np.arange(10, dtype=np.uint8)
    for stems in (("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                  ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")):
        write_idx(directory / stems[0], images)
        write_idx(directory / f"{stems[1]}.gz", labels, compress=True)
    return directory


def test_mnist_glyph_source(tmp_path):
    directory = _fake_mnist(tmp_path / "mnist")
    source = MnistGlyphs.load(directory, "train")
    index, glyph = source.pick(7, np.random.default_rng(0))
    assert index == 7 and glyph.max() == 1.0
    manifest = DatasetManifest(n_train=2, n_test=2, canvas=32, digits=1, scale_range=(0.5, 0.8), source="mnist",
                               mnist_dir=str(directory))
    splits = generate_dataset(manifest)
    assert len(splits["train"]) == 2 and "variants" not in splits
    with pytest.raises(UsageError):
        MnistGlyphs.load(tmp_path, "test")
    with pytest.raises(GenerationError):
        MnistGlyphs(np.zeros((2, 28, 28)), np.array([0, 1]), "train")
