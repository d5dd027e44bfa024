"""The fixed classifier: one conv layer, ReLU, dropout, one dense layer.

Parameters are plain float64 arrays held in a :class:`ParameterSet`. The
forward pass comes in a deterministic flavor (no dropout, used for
evaluation, saliency and certainty baselines) and a stochastic flavor
(seeded inverted dropout, used for training and MC certainty).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ShapeError, as_f64, conv2d_same_batch, relu, softmax_rows

CHECKPOINT_MAGIC = b"DCYAUD01"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is malformed or inconsistent."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture constants. The paper-facing defaults are F=8, p=0.5, K=10."""

    filters: int = 8
    dropout_rate: float = 0.5
    classes: int = 10

    def __post_init__(self):
        if self.filters < 1:
            raise ValueError(f"filters must be >= 1, got {self.filters}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")


@dataclass
class ParameterSet:
    """All trainable weights, with the spatial shape needed to unflatten them.

    conv_kernels: (F, 1, kh, kw)
    conv_bias:    (F,)
    fc_weights:   (K, F*H*W)
    fc_bias:      (K,)
    """

    conv_kernels: np.ndarray
    conv_bias: np.ndarray
    fc_weights: np.ndarray
    fc_bias: np.ndarray
    image_shape: tuple[int, int] = (28, 28)

    def __post_init__(self):
        self.conv_kernels = as_f64(self.conv_kernels)
        self.conv_bias = as_f64(self.conv_bias)
        self.fc_weights = as_f64(self.fc_weights)
        self.fc_bias = as_f64(self.fc_bias)
        f = self.conv_kernels.shape[0]
        h, w = self.image_shape
        if self.conv_kernels.ndim != 4 or self.conv_kernels.shape[1] != 1:
            raise ShapeError(f"conv_kernels must be (F, 1, kh, kw), got {self.conv_kernels.shape}")
        if self.conv_bias.shape != (f,):
            raise ShapeError(f"conv_bias shape {self.conv_bias.shape} does not match F={f}")
        k = self.fc_weights.shape[0]
        if self.fc_weights.shape != (k, f * h * w):
            raise ShapeError(
                f"fc_weights shape {self.fc_weights.shape} does not match "
                f"(classes, F*H*W)=({k}, {f * h * w})"
            )
        if self.fc_bias.shape != (k,):
            raise ShapeError(f"fc_bias shape {self.fc_bias.shape} does not match K={k}")

    @property
    def filters(self) -> int:
        return self.conv_kernels.shape[0]

    @property
    def classes(self) -> int:
        return self.fc_bias.shape[0]

    @property
    def n_params(self) -> int:
        return (self.conv_kernels.size + self.conv_bias.size
                + self.fc_weights.size + self.fc_bias.size)

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.conv_kernels.copy(), self.conv_bias.copy(),
                            self.fc_weights.copy(), self.fc_bias.copy(), self.image_shape)

    def to_vector(self) -> np.ndarray:
        """Flatten all blocks into one vector (declared field order)."""
        return np.concatenate([self.conv_kernels.ravel(), self.conv_bias.ravel(),
                               self.fc_weights.ravel(), self.fc_bias.ravel()])

    def with_vector(self, vec: np.ndarray) -> "ParameterSet":
        """New ParameterSet with this one's shapes and `vec`'s values."""
        vec = as_f64(vec).ravel()
        if vec.size != self.n_params:
            raise ShapeError(f"vector length {vec.size} does not match {self.n_params} parameters")
        out = []
        off = 0
        for block in (self.conv_kernels, self.conv_bias, self.fc_weights, self.fc_bias):
            out.append(vec[off:off + block.size].reshape(block.shape).copy())
            off += block.size
        return ParameterSet(*out, image_shape=self.image_shape)

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(np.zeros_like(self.conv_kernels), np.zeros_like(self.conv_bias),
                            np.zeros_like(self.fc_weights), np.zeros_like(self.fc_bias),
                            self.image_shape)


@dataclass
class ForwardTrace:
    """Intermediate activations of one forward pass.

    dropout_mask is None in deterministic mode, else a {0,1} array over the
    post-ReLU activations.
    """

    conv_pre: np.ndarray
    conv_post: np.ndarray
    dropout_mask: np.ndarray | None
    logits: np.ndarray
    probs: np.ndarray


def init_params(mcfg: ModelConfig, image_shape: tuple[int, int] = (28, 28),
                kernel_size: int = 3, seed: int = 0,
                rng: np.random.Generator | None = None) -> ParameterSet:
    """Seeded uniform init in +/- sqrt(6 / (fan_in + fan_out)) per layer, zero biases."""
    if rng is None:
        rng = np.random.default_rng(seed)
    f, k = mcfg.filters, mcfg.classes
    h, w = image_shape
    d = f * h * w
    lim_conv = np.sqrt(6.0 / (1 * kernel_size * kernel_size + f * kernel_size * kernel_size))
    lim_fc = np.sqrt(6.0 / (d + k))
    conv_kernels = rng.uniform(-lim_conv, lim_conv, size=(f, 1, kernel_size, kernel_size))
    fc_weights = rng.uniform(-lim_fc, lim_fc, size=(k, d))
    return ParameterSet(conv_kernels, np.zeros(f), fc_weights, np.zeros(k), (h, w))


def conv_activations_batch(params: ParameterSet, images: np.ndarray):
    """Conv pre-activations and post-ReLU maps for a (B, H, W) image batch."""
    x = as_f64(images)
    if x.ndim != 3 or x.shape[1:] != params.image_shape:
        raise ShapeError(f"images shape {x.shape} does not match model input {params.image_shape}")
    pre = conv2d_same_batch(x[:, None], params.conv_kernels, params.conv_bias)
    return pre, relu(pre)


def logits_from_hidden(params: ParameterSet, hidden_flat: np.ndarray) -> np.ndarray:
    """Dense layer over flattened (B, F*H*W) activations."""
    return hidden_flat @ params.fc_weights.T + params.fc_bias


def sample_dropout_masks(rng: np.random.Generator, n: int, dim: int, rate: float) -> np.ndarray:
    """n independent keep-masks of length dim; each unit kept with prob 1-rate.

    float32 uniforms keep the draw cheap; the comparison is still exact and
    fully determined by the generator state.
    """
    return rng.random((n, dim), dtype=np.float32) < (1.0 - rate)


def forward(params: ParameterSet, image: np.ndarray, mode: str = "deterministic",
            dropout_rate: float = 0.5, seed: int = 0) -> ForwardTrace:
    """One forward pass: conv -> ReLU -> dropout -> flatten -> dense -> softmax.

    mode "stochastic" samples a seeded inverted-dropout mask (kept units are
    scaled by 1/(1-rate)); "deterministic" applies no mask and no scaling.
    """
    if mode not in ("deterministic", "stochastic"):
        raise ValueError(f"mode must be 'deterministic' or 'stochastic', got {mode!r}")
    pre, post = conv_activations_batch(params, as_f64(image)[None])
    pre, post = pre[0], post[0]
    flat = post.reshape(-1)
    mask = None
    if mode == "stochastic":
        rng = np.random.default_rng(seed)
        mask = sample_dropout_masks(rng, 1, flat.size, dropout_rate)[0]
        flat = flat * (mask / (1.0 - dropout_rate))
        mask = mask.reshape(post.shape).astype(np.float64)
    logits = logits_from_hidden(params, flat[None])[0]
    probs = softmax_rows(logits[None])[0]
    return ForwardTrace(pre, post, mask, logits, probs)


def deterministic_probs_batch(params: ParameterSet, images: np.ndarray,
                              chunk: int = 512) -> np.ndarray:
    """Deterministic-mode class probabilities for a (B, H, W) batch."""
    x = as_f64(images)
    out = np.empty((x.shape[0], params.classes))
    for lo in range(0, x.shape[0], chunk):
        part = x[lo:lo + chunk]
        _, post = conv_activations_batch(params, part)
        logits = logits_from_hidden(params, post.reshape(part.shape[0], -1))
        out[lo:lo + chunk] = softmax_rows(logits)
    return out


def accuracy(params: ParameterSet, images: np.ndarray, labels: np.ndarray) -> float:
    """Deterministic-mode argmax-match rate over a split."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy needs a non-empty split")
    probs = deterministic_probs_batch(params, images)
    return float(np.mean(probs.argmax(axis=1) == labels))


# ---------------------------------------------------------------------------
# Checkpoint files: fixed binary header + little-endian float64 payload,
# plus a plain-text sidecar ("<path>.meta") with run metadata.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<8sIIIIIII")  # magic, version, F, K, H, W, kh, kw


def save_checkpoint(params: ParameterSet, path, meta: dict | None = None) -> None:
    path = Path(path)
    f = params.filters
    k = params.classes
    h, w = params.image_shape
    kh, kw = params.conv_kernels.shape[2:]
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, f, k, h, w, kh, kw)
    blocks = [params.conv_kernels, params.conv_bias, params.fc_weights, params.fc_bias]
    with open(path, "wb") as fh:
        fh.write(header)
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    lines = [f"{key} = {value}" for key, value in sorted((meta or {}).items())]
    sidecar = "\n".join(["format_version = %d" % CHECKPOINT_VERSION] + lines) + "\n"
    Path(str(path) + ".meta").write_text(sidecar)


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    """Read a checkpoint and its sidecar metadata (empty dict if absent)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, f, k, h, w, kh, kw = _HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    counts = [f * 1 * kh * kw, f, k * f * h * w, k]
    expected = _HEADER.size + 8 * sum(counts)
    if len(raw) != expected:
        raise CheckpointError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    off = _HEADER.size
    blocks = []
    for count, shape in zip(counts, [(f, 1, kh, kw), (f,), (k, f * h * w), (k,)]):
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        blocks.append(arr.astype(np.float64))
        off += 8 * count
    params = ParameterSet(*blocks, image_shape=(h, w))
    meta = {}
    sidecar = Path(str(path) + ".meta")
    if sidecar.exists():
        for line in sidecar.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return params, meta
