"""GradCAM saliency for the one-conv classifier.

With a single dense layer on top of the conv features, the gradient of a
class logit with respect to a post-ReLU feature map entry is simply the
corresponding dense weight, so the channel weights are exact per-filter
means of the target class's weight row (no numeric backward pass needed).
Maps are computed in deterministic mode (no dropout).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import ParameterSet, conv_activations_batch
from .tensor import as_f64, relu

MINMAX_TOL = 1e-12


def channel_weights(params: ParameterSet, class_index: int) -> np.ndarray:
    """Spatial mean of d(logit_class)/d(feature map) per filter: shape (F,)."""
    if not 0 <= class_index < params.classes:
        raise ValueError(f"class index {class_index} out of range 0..{params.classes - 1}")
    h, w = params.image_shape
    return params.fc_weights[class_index].reshape(params.filters, h * w).mean(axis=1)


def gradcam(params: ParameterSet, image: np.ndarray, class_index: int) -> np.ndarray:
    """Unnormalized GradCAM map ReLU(sum_k alpha_k * A_k), shape (H, W).

    Same resolution as the input thanks to the same-padding conv; values are
    non-negative and not yet normalized.
    """
    alpha = channel_weights(params, class_index)
    _, post = conv_activations_batch(params, as_f64(image)[None])
    cam = np.tensordot(alpha, post[0], axes=([0], [0]))
    return relu(cam)


def norm_minmax(values: np.ndarray, tol: float = MINMAX_TOL) -> np.ndarray:
    """Min-max normalize to [0, 1]; a (near-)constant map normalizes to all zeros."""
    v = as_f64(values)
    lo = v.min()
    rng = v.max() - lo
    if rng < tol:
        return np.zeros_like(v)
    return (v - lo) / rng


def save_pgm(values: np.ndarray, path) -> None:
    """Write a [0,1] map as an 8-bit binary PGM (P5) for visual inspection."""
    v = np.clip(as_f64(values), 0.0, 1.0)
    q = np.rint(v * 255).astype(np.uint8)
    h, w = q.shape
    with open(Path(path), "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes())
