"""Deterministic synthetic segmentation data: colored shapes on a textured
background, per-pixel class labels, optional void ring around each shape."""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np

from . import recordio

VOID = 255  # sentinel label excluded from every error/score computation

NOISE_AMPLITUDE = 0.05


@dataclass
class LabeledExample:
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    mask: np.ndarray   # (H, W) uint8 in {0..C-1} | VOID


@dataclass
class Dataset:
    split: str
    seed: int
    height: int
    width: int
    classes: int
    void_fraction: float
    examples: list[LabeledExample] = field(default_factory=list)

    def __len__(self):
        return len(self.examples)

    def __getitem__(self, i) -> LabeledExample:
        return self.examples[i]


def class_color(c: int, classes: int) -> np.ndarray:
    """Distinct base RGB color per class; class 0 is a mid-gray background.

    The palette is deliberately low-contrast (colors a few times the noise
    amplitude apart) so class margins are tight enough for small-budget
    attacks to matter while staying cleanly learnable under bounded noise.
    """
    if c == 0:
        return np.array([0.48, 0.48, 0.48])
    hue = (c - 1) / max(classes - 1, 1) * 0.8
    rgb = np.array(colorsys.hsv_to_rgb(hue, 1.0, 1.0))
    return 0.48 + 0.09 * (rgb - rgb.mean())


def generate(seed: int, count: int, height: int = 32, width: int = 32,
             classes: int = 4, void_fraction: float = 0.0,
             split: str = "train") -> Dataset:
    """Generate ``count`` examples deterministically from the seed.

    Each example is a textured class-0 background with 1-3 non-overlapping
    rectangles/discs of classes 1..C-1. ``void_fraction`` controls a VOID
    border ring dilated around each shape (0 disables it).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if not (0.0 <= void_fraction <= 0.2):
        raise ValueError("void_fraction must be in [0, 0.2]")
    if height < 8 or width < 8:
        raise ValueError("image too small")
    rng = np.random.default_rng(seed)
    ring = math.ceil(void_fraction * 10)  # ring thickness in pixels
    examples = []
    for _ in range(count):
        examples.append(_one_example(rng, height, width, classes, ring))
    return Dataset(split, seed, height, width, classes, void_fraction, examples)


def _one_example(rng, h, w, classes, ring) -> LabeledExample:
    image = np.tile(class_color(0, classes), (h, w, 1))
    image += rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(h, w, 3))
    mask = np.zeros((h, w), dtype=np.uint8)
    occupied = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    n_shapes = int(rng.integers(1, 4))
    placed = 0
    attempts = 0
    while placed < n_shapes and attempts < 50:
        attempts += 1
        cls = int(rng.integers(1, classes))
        if rng.uniform() < 0.5:
            sh = int(rng.integers(h // 5, h // 2))
            sw = int(rng.integers(w // 5, w // 2))
            top = int(rng.integers(0, h - sh))
            left = int(rng.integers(0, w - sw))
            footprint = np.zeros((h, w), dtype=bool)
            footprint[top:top + sh, left:left + sw] = True
        else:
            r_lo = max(2, h // 8)
            r = int(rng.integers(r_lo, max(r_lo + 1, h // 4)))
            cy = int(rng.integers(r, h - r))
            cx = int(rng.integers(r, w - r))
            footprint = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        halo = _dilate(footprint, max(ring, 1))
        if (halo & occupied).any():
            continue
        color = class_color(cls, classes)
        noise = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(h, w, 3))
        image = np.where(footprint[:, :, None], color[None, None, :] + noise, image)
        mask[footprint] = cls
        if ring > 0:
            void_ring = _dilate(footprint, ring) & ~footprint
            mask[void_ring] = VOID
        occupied |= halo
        placed += 1
    return LabeledExample(np.clip(image, 0.0, 1.0), mask)


def _dilate(m: np.ndarray, k: int) -> np.ndarray:
    out = m.copy()
    for _ in range(k):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def pick_target(dataset: Dataset, index: int, seed: int) -> tuple[int, LabeledExample]:
    """Seeded choice of a different example to serve as a targeted-attack goal."""
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 examples to pick a target")
    rng = np.random.default_rng(seed)
    j = int(rng.integers(0, n - 1))
    if j >= index:
        j += 1
    return j, dataset[j]


def make_splits(seed: int, counts: dict[str, int], height: int = 32, width: int = 32,
                classes: int = 4, void_fraction: float = 0.0) -> dict[str, Dataset]:
    """train/val/test with disjoint derived seeds (seed, seed+1, seed+2)."""
    out = {}
    for i, split in enumerate(("train", "val", "test")):
        if split in counts:
            out[split] = generate(seed + i, counts[split], height, width,
                                  classes, void_fraction, split=split)
    return out


def save(dataset: Dataset, path) -> None:
    records = {}
    for i, ex in enumerate(dataset.examples):
        records[f"image/{i:05d}"] = ex.image
        records[f"mask/{i:05d}"] = ex.mask
    recordio.write_records(path, records, {
        "kind": "dataset",
        "split": dataset.split,
        "seed": dataset.seed,
        "height": dataset.height,
        "width": dataset.width,
        "classes": dataset.classes,
        "void_fraction": dataset.void_fraction,
        "count": len(dataset),
    })


def load(path) -> Dataset:
    records, meta = recordio.read_records(path)
    if meta.get("kind") != "dataset":
        raise recordio.RecordFormatError(f"{path}: not a dataset file")
    examples = [LabeledExample(records[f"image/{i:05d}"], records[f"mask/{i:05d}"])
                for i in range(meta["count"])]
    return Dataset(meta["split"], meta["seed"], meta["height"], meta["width"],
                   meta["classes"], meta["void_fraction"], examples)
