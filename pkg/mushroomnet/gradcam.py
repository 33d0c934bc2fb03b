"""
Grad-CAM heatmaps from the last spatial convolution
"""

import logging
from dataclasses import dataclass

import numpy as np

from mushroomnet import imaging
from mushroomnet.errors import ConfigError, ShapeError
from mushroomnet.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Heatmap:
    values: np.ndarray      # h x w at the tap resolution
    upsampled: np.ndarray   # H x W aligned with the input image
    target_class: int

    def overlay(self, image, alpha=0.5):
        return imaging.overlay(image, self.upsampled, alpha)


def _normalize(cam):
    cam = np.maximum(cam, 0.0)
    peak = cam.max()
    return cam / peak if peak > 0 else cam


def _run(model, x):
    if hasattr(model, 'spec'):
        out = model(x, mode='eval_grad')
    else:
        out = model(x)
    if not isinstance(out, tuple) or len(out) != 2 or out[1] is None:
        raise ConfigError("model has no feature tap; Grad-CAM needs (logits, activation) from the forward pass")
    return out


def grad_cam(model, image, target_class):
    """Class activation map for one image.

    Args:
        model: MushroomModel, or a callable mapping Tensor[1,C,H,W] to (logits [1,k], tap [1,K,h,w])
        image: Tensor or array [C,H,W] (or [1,C,H,W]) with values in [0, 1]
        target_class: logit index to explain
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4 or data.shape[0] != 1:
        raise ShapeError(f"grad_cam explains a single image [C,H,W], got {data.shape}")
    dtype = getattr(model, 'dtype', None)
    x = Tensor(data, dtype=dtype)

    logits, tap = _run(model, x)
    if tap.ndim != 4:
        raise ShapeError(f"feature tap must be [1,K,h,w], got {tap.shape}")
    if not 0 <= target_class < logits.shape[-1]:
        raise ConfigError(f"class {target_class} out of range for {logits.shape[-1]} outputs")
    tap.retain_grad()
    score = (logits * Tensor(np.eye(logits.shape[-1], dtype=logits.dtype)[target_class])).sum()
    score.backward()
    if tap.grad is None:
        raise ConfigError("target logit does not depend on the feature tap")

    weights = tap.grad[0].mean(axis=(1, 2))
    cam = _normalize(np.tensordot(weights, tap.data[0], axes=(0, 0)).astype(np.float64))
    upsampled = _normalize(imaging.upsample(cam, data.shape[2], data.shape[3]))
    if hasattr(model, 'params'):
        model.params.zero_grad()
    logger.debug("grad-cam class %d: tap %s, peak weight %.4g", target_class, tap.shape, np.abs(weights).max())
    return Heatmap(cam, upsampled, int(target_class))


def grad_cam_batch(model, images, classes):
    """Heatmaps for several images; each image gets its own graph"""
    return [grad_cam(model, image, c) for image, c in zip(images, classes)]
