"""Scalar objectives and scores: cross-entropy, cosine similarity, pixel
error, and per-example mIoU.

Cross-entropy and cosine similarity also come in graph form (operating on
autodiff tensors) because the attacks differentiate through them; the scoring
functions take plain arrays.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .numcore import Tensor
from .synthdata import VOID

DEFAULT_LEVELS = (0.90, 0.98, 0.99)


def one_hot(mask: np.ndarray, classes: int) -> np.ndarray:
    """(H, W, C) one-hot of the mask; VOID pixels are all-zero rows."""
    h, w = mask.shape
    out = np.zeros((h, w, classes))
    valid = mask != VOID
    out[np.nonzero(valid) + (mask[valid].astype(int),)] = 1.0
    return out


def cross_entropy_graph(probs: Tensor, mask: np.ndarray) -> Tensor:
    """Differentiable mean cross-entropy; VOID pixels contribute exactly 0
    but the divisor stays H*W."""
    h, w, c = probs.data.shape
    if mask.shape != (h, w):
        raise nc.ShapeError(f"mask {mask.shape} vs probs {probs.data.shape}")
    hot = one_hot(mask, c)
    return nc.tsum(nc.mul(nc.neg(nc.log(probs)), Tensor(hot))) / float(h * w)


def cross_entropy(probs, mask: np.ndarray) -> float:
    if isinstance(probs, Tensor):
        return cross_entropy_graph(probs, mask).item()
    return cross_entropy_graph(Tensor(probs), mask).item()


def cos_sim_graph(u: Tensor, v: Tensor) -> Tensor:
    """Differentiable cosine similarity of the flattened operands, with a
    small denominator guard so zero vectors map to 0."""
    denom = nc.l2_norm(u) * nc.l2_norm(v) + 1e-12
    return nc.dot(u, v) / denom


def cos_sim(u, v) -> float:
    return cos_sim_graph(nc.as_tensor(u), nc.as_tensor(v)).item()


def predicted_mask(probs: np.ndarray) -> np.ndarray:
    """Argmax class per pixel; ties break toward the lowest class index."""
    return np.argmax(probs, axis=-1)


def pixel_error(probs: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of non-VOID pixels whose argmax class differs from the mask."""
    probs = probs.data if isinstance(probs, Tensor) else probs
    valid = mask != VOID
    if not valid.any():
        raise ValueError("pixel_error undefined on an all-void mask")
    pred = predicted_mask(probs)
    return float(np.mean(pred[valid] != mask[valid]))


def pixel_agreement(probs: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of non-VOID pixels matching the mask (targeted-attack metric)."""
    return 1.0 - pixel_error(probs, mask)


def miou(probs: np.ndarray, mask: np.ndarray) -> float:
    """Per-example mIoU over non-VOID pixels.

    Classes present in neither truth nor prediction are excluded from the
    class mean (their IoU is 0/0).
    """
    probs = probs.data if isinstance(probs, Tensor) else probs
    valid = mask != VOID
    if not valid.any():
        raise ValueError("miou undefined on an all-void mask")
    pred = predicted_mask(probs)[valid]
    truth = mask[valid].astype(int)
    classes = np.union1d(np.unique(pred), np.unique(truth))
    ious = []
    for c in classes:
        inter = np.sum((pred == c) & (truth == c))
        union = np.sum((pred == c) | (truth == c))
        ious.append(inter / union)
    return float(np.mean(ious))


def dataset_miou(scores) -> float:
    """Mean of per-example scores."""
    scores = list(scores)
    if not scores:
        raise ValueError("no scores to average")
    return float(np.mean(scores))
