"""Tiny segmentation network split into a backbone and a head.

The full forward pass is head(image, backbone(image)): the backbone produces a
feature map at half resolution, the head upsamples it, concatenates the raw
image back in, and maps to per-pixel class probabilities with a 1x1 conv and a
channel softmax. The backbone/head split is what the internal-representation
attacks rely on; the cut sits at the last activation before the head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from . import recordio
from .numcore import Tensor


INPUT_MEAN = 0.5
INPUT_SCALE = 0.05


@dataclass
class ModelShape:
    height: int = 32
    width: int = 32
    classes: int = 4
    feat_channels: int = 16

    def __post_init__(self):
        if self.height % 2 or self.width % 2:
            raise nc.ShapeError("height and width must be even (backbone downsamples x2)")


# parameter name -> (shape builder, fan_in builder); conv weights are (kh,kw,Cin,Cout)
def _param_specs(s: ModelShape):
    d = s.feat_channels
    return {
        "backbone.conv1.w": ((3, 3, 3, d), 3 * 3 * 3),
        "backbone.conv1.b": ((d,), None),
        "backbone.conv2.w": ((3, 3, d, d), 3 * 3 * d),
        "backbone.conv2.b": ((d,), None),
        "backbone.conv3.w": ((3, 3, d, d), 3 * 3 * d),
        "backbone.conv3.b": ((d,), None),
        "head.conv.w": ((1, 1, d + 3, s.classes), d + 3),
        "head.conv.b": ((s.classes,), None),
    }


class SegModel:
    """Backbone + head with named float64 parameters and evaluation counters."""

    def __init__(self, shape: ModelShape, params: dict[str, np.ndarray],
                 meta: dict | None = None):
        self.shape = shape
        self.params = params
        self.meta = dict(meta or {})
        self.backbone_evals = 0
        self.head_evals = 0
        for name, (pshape, _) in _param_specs(shape).items():
            if name not in params or params[name].shape != pshape:
                raise nc.ShapeError(f"parameter '{name}' missing or misshaped")

    # -- construction -------------------------------------------------------
    @classmethod
    def init(cls, seed: int, shape: ModelShape | None = None) -> "SegModel":
        """He-style fan-in scaled random init from a seeded RNG."""
        shape = shape or ModelShape()
        rng = np.random.default_rng(seed)
        params = {}
        for name, (pshape, fan_in) in _param_specs(shape).items():
            if fan_in is None:
                params[name] = np.zeros(pshape)
            else:
                params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=pshape)
        return cls(shape, params, meta={"seed": seed})

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    # -- forward passes ------------------------------------------------------
    def _check_image(self, image: Tensor):
        s = self.shape
        if image.data.shape != (s.height, s.width, 3):
            raise nc.ShapeError(
                f"image shape {image.data.shape}, expected {(s.height, s.width, 3)}")

    def _normalize(self, x: Tensor) -> Tensor:
        # fixed affine input scaling: images concentrate around mid-gray with
        # small contrast, so rescale to roughly unit variance for conditioning
        return (x - INPUT_MEAN) * (1.0 / INPUT_SCALE)

    def backbone_forward(self, image, params: dict[str, Tensor] | None = None) -> Tensor:
        """Feature map (H/2, W/2, D) of the input image."""
        x = nc.as_tensor(image)
        self._check_image(x)
        p = params or {k: Tensor(v) for k, v in self.params.items()
                       if k.startswith("backbone.")}
        xn = self._normalize(x)
        h = nc.relu(nc.conv2d(xn, p["backbone.conv1.w"], p["backbone.conv1.b"], padding=1))
        h = nc.relu(nc.conv2d(h, p["backbone.conv2.w"], p["backbone.conv2.b"],
                              stride=2, padding=1))
        h = nc.relu(nc.conv2d(h, p["backbone.conv3.w"], p["backbone.conv3.b"], padding=1))
        self.backbone_evals += 1
        return h

    def head_forward(self, image, features: Tensor,
                     params: dict[str, Tensor] | None = None) -> Tensor:
        """Softmax probabilities (H, W, C) from the image and backbone features."""
        x = nc.as_tensor(image)
        self._check_image(x)
        p = params or {k: Tensor(v) for k, v in self.params.items()
                       if k.startswith("head.")}
        up = nc.upsample_nearest(features, 2)
        cat = nc.concat_channels(up, self._normalize(x))
        logits = nc.conv2d(cat, p["head.conv.w"], p["head.conv.b"])
        self.head_evals += 1
        return nc.channel_softmax(logits)

    def full_forward(self, image, params: dict[str, Tensor] | None = None) -> Tensor:
        x = nc.as_tensor(image)
        bp = hp = None
        if params is not None:
            bp = {k: v for k, v in params.items() if k.startswith("backbone.")}
            hp = {k: v for k, v in params.items() if k.startswith("head.")}
        feats = self.backbone_forward(x, bp)
        return self.head_forward(x, feats, hp)

    def predict(self, image) -> np.ndarray:
        """Argmax class mask (H, W) for an image; ties go to the lowest class."""
        probs = self.full_forward(image)
        return np.argmax(probs.data, axis=-1)

    def param_tensors(self) -> dict[str, Tensor]:
        """Leaf tensors over the current parameters, for training steps."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}

    # -- persistence ---------------------------------------------------------
    def save(self, path) -> None:
        meta = dict(self.meta)
        meta.update({
            "kind": "checkpoint",
            "height": self.shape.height,
            "width": self.shape.width,
            "classes": self.shape.classes,
            "feat_channels": self.shape.feat_channels,
        })
        recordio.write_records(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "SegModel":
        records, meta = recordio.read_records(path)
        if meta.get("kind") != "checkpoint":
            raise recordio.RecordFormatError(f"{path}: not a checkpoint file")
        shape = ModelShape(meta["height"], meta["width"], meta["classes"],
                           meta["feat_channels"])
        extra = {k: v for k, v in meta.items()
                 if k not in ("kind", "height", "width", "classes", "feat_channels")}
        return cls(shape, records, meta=extra)
