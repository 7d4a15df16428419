"""Shared fixtures and oracles for the test suite."""

import numpy as np
import pytest

from segrobust import synthdata
from segrobust.numcore import Tensor, grad_of
from segrobust.segmodel import ModelShape, SegModel


def finite_diff(fn, x: np.ndarray, h: float = 1e-6,
                coords=None) -> np.ndarray:
    """Central finite differences of a scalar function of an array.

    ``fn`` maps a plain array to a float and must not mutate its input.
    ``coords`` optionally restricts the check to a list of flat indices.
    """
    flat = x.ravel().copy()
    idxs = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size)
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(flat.reshape(x.shape))
        flat[i] = orig - h
        lo = fn(flat.reshape(x.shape))
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * h)
    return out.reshape(x.shape)


def autodiff_grad(fn_graph, x: np.ndarray) -> np.ndarray:
    """Gradient of a graph-building scalar function at ``x``."""
    xt = Tensor(x, requires_grad=True)
    (g,) = grad_of(fn_graph(xt), [xt])
    return g


@pytest.fixture(scope="session")
def tiny_shape():
    return ModelShape(height=8, width=8, classes=3, feat_channels=4)


@pytest.fixture(scope="session")
def tiny_model(tiny_shape):
    return SegModel.init(7, tiny_shape)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_shape):
    return synthdata.generate(3, 4, tiny_shape.height, tiny_shape.width,
                              tiny_shape.classes, void_fraction=0.05)
