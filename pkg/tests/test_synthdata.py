"""Dataset generator tests: determinism, value ranges, void rings, and
persistence."""

import numpy as np
import pytest

from segrobust import synthdata
from segrobust.synthdata import VOID


def test_deterministic_generation():
    a = synthdata.generate(11, 6, 16, 16, 4, 0.05)
    b = synthdata.generate(11, 6, 16, 16, 4, 0.05)
    for ea, eb in zip(a.examples, b.examples):
        np.testing.assert_array_equal(ea.image, eb.image)
        np.testing.assert_array_equal(ea.mask, eb.mask)
    c = synthdata.generate(12, 6, 16, 16, 4, 0.05)
    assert any(not np.array_equal(ea.image, ec.image)
               for ea, ec in zip(a.examples, c.examples))


def test_value_ranges_and_labels():
    ds = synthdata.generate(0, 8, 16, 16, 4, 0.1)
    for ex in ds.examples:
        assert ex.image.shape == (16, 16, 3)
        assert ex.image.dtype == np.float64
        assert ex.image.min() >= 0.0 and ex.image.max() <= 1.0
        labels = set(np.unique(ex.mask).tolist())
        assert labels <= {0, 1, 2, 3, VOID}
        assert 0 in labels  # background always present


def test_every_example_has_a_shape():
    ds = synthdata.generate(5, 16, 16, 16, 4, 0.0)
    for ex in ds.examples:
        assert np.any((ex.mask > 0) & (ex.mask != VOID))


def test_void_ring_present_and_absent():
    with_void = synthdata.generate(2, 8, 16, 16, 4, 0.1)
    without = synthdata.generate(2, 8, 16, 16, 4, 0.0)
    assert any(np.any(ex.mask == VOID) for ex in with_void.examples)
    assert all(not np.any(ex.mask == VOID) for ex in without.examples)


def test_void_ring_surrounds_shapes():
    ds = synthdata.generate(4, 8, 32, 32, 4, 0.1)
    for ex in ds.examples:
        shape_px = (ex.mask > 0) & (ex.mask != VOID)
        ring = synthdata._dilate(shape_px, 1) & ~shape_px
        # every pixel adjacent to a shape is void
        assert np.all(ex.mask[ring] == VOID)


def test_class_colors_distinct():
    colors = [synthdata.class_color(c, 4) for c in range(4)]
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.max(np.abs(colors[i] - colors[j])) > 0.01


def test_validation():
    with pytest.raises(ValueError):
        synthdata.generate(0, 0)
    with pytest.raises(ValueError):
        synthdata.generate(0, 1, classes=1)
    with pytest.raises(ValueError):
        synthdata.generate(0, 1, void_fraction=0.5)
    with pytest.raises(ValueError):
        synthdata.generate(0, 1, height=4)


def test_pick_target_differs():
    ds = synthdata.generate(1, 5, 16, 16, 4)
    for i in range(5):
        j, ex = synthdata.pick_target(ds, i, seed=9)
        assert j != i
        assert ex is ds[j]


def test_pick_target_needs_two():
    ds = synthdata.generate(1, 1, 16, 16, 4)
    with pytest.raises(ValueError):
        synthdata.pick_target(ds, 0, seed=0)


def test_make_splits_disjoint_seeds():
    splits = synthdata.make_splits(7, {"train": 3, "val": 2, "test": 2}, 16, 16)
    assert splits["train"].seed == 7
    assert splits["val"].seed == 8
    assert splits["test"].seed == 9
    assert not np.array_equal(splits["train"][0].image, splits["val"][0].image)


def test_save_load_roundtrip(tmp_path):
    ds = synthdata.generate(3, 4, 16, 16, 4, 0.05, split="val")
    path = tmp_path / "ds.bin"
    synthdata.save(ds, path)
    back = synthdata.load(path)
    assert back.split == "val" and back.seed == 3 and len(back) == 4
    for a, b in zip(ds.examples, back.examples):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.mask, b.mask)
