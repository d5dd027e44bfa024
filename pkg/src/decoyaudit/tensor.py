"""Dense float64 numerics for the fixed one-conv architecture.

Everything here is pure: inputs are never mutated, outputs are freshly
allocated float64 arrays in row-major order. Shapes are checked explicitly;
there is no implicit broadcasting across mismatched operands.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "ShapeError",
    "EvaluationError",
    "as_f64",
    "relu",
    "conv2d_same",
    "conv2d_same_batch",
    "dense_affine",
    "softmax",
    "softmax_rows",
    "finite_difference_grad",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class EvaluationError(ValueError):
    """A scalar function produced a non-finite value during differentiation."""


def as_f64(a) -> np.ndarray:
    """Return `a` as a C-contiguous float64 array (copy only if needed)."""
    return np.ascontiguousarray(a, dtype=np.float64)


def relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0)


def conv2d_same_batch(inputs: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Batched stride-1 cross-correlation with zero 'same' padding.

    inputs:  (B, C, H, W)
    kernels: (F, C, kh, kw), kh and kw odd
    bias:    (F,), added to every position of output channel f
    returns: (B, F, H, W)
    """
    x = as_f64(inputs)
    k = as_f64(kernels)
    b = as_f64(bias)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"expected 4-d input and kernels, got {x.shape} and {k.shape}")
    nb, c_in, h, w = x.shape
    nf, c_k, kh, kw = k.shape
    if c_in != c_k:
        raise ShapeError(
            f"input channels {x.shape} do not match kernel channels {k.shape}"
        )
    if b.shape != (nf,):
        raise ShapeError(f"bias shape {b.shape} does not match filter count {nf}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel dims must be odd, got {kh}x{kw}")
    if h < kh or w < kw:
        raise ShapeError(f"input spatial dims {h}x{w} smaller than kernel {kh}x{kw}")

    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xpad = np.zeros((nb, c_in, h + 2 * ph, w + 2 * pw))
    xpad[:, :, ph:ph + h, pw:pw + w] = x

    out = np.zeros((nb, nf, h, w))
    for u in range(kh):
        for v in range(kw):
            # (B, H, W, F) <- (B, C, H, W) x (F, C) at offset (u, v)
            t = np.tensordot(xpad[:, :, u:u + h, v:v + w], k[:, :, u, v], axes=([1], [1]))
            out += np.moveaxis(t, 3, 1)
    out += b[None, :, None, None]
    return out


def conv2d_same(input: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Single-image form of :func:`conv2d_same_batch`: (C,H,W) -> (F,H,W)."""
    x = as_f64(input)
    if x.ndim != 3:
        raise ShapeError(f"expected (C, H, W) input, got {x.shape}")
    return conv2d_same_batch(x[None], kernels, bias)[0]


def dense_affine(input: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """output[k] = sum_d weights[k, d] * input[d] + bias[k]."""
    x = as_f64(input)
    w = as_f64(weights)
    b = as_f64(bias)
    if x.ndim != 1 or w.ndim != 2:
        raise ShapeError(f"expected vector input and matrix weights, got {x.shape} and {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"weights row length {w.shape} does not match input length {x.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match output length {w.shape[0]}")
    return w @ x + b


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically-stable softmax of a single logit vector."""
    z = as_f64(logits)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a (N, K) logit matrix."""
    z = as_f64(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def finite_difference_grad(
    f: Callable[[np.ndarray], float], theta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient (f(t+eps*e_i) - f(t-eps*e_i)) / (2*eps).

    `theta` is a flat parameter vector; an independent copy is perturbed one
    coordinate at a time, so `f` may safely capture shared state.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    t0 = as_f64(theta).ravel().copy()
    grad = np.empty_like(t0)
    work = t0.copy()
    for i in range(t0.size):
        work[i] = t0[i] + eps
        f_plus = float(f(work))
        work[i] = t0[i] - eps
        f_minus = float(f(work))
        work[i] = t0[i]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError(
                f"non-finite function value while differentiating coordinate {i}"
            )
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad
