"""Losses, exact analytic gradients, Adam training and saliency-penalized fine-tuning.

Three loss terms:
  * classification: summed cross-entropy -log p(true class), probabilities
    clamped below at 1e-12;
  * explanation: per example, the squared mask-weighted min-max-normalized
    GradCAM map of the true class, summed over pixels and examples (computed
    in deterministic mode, no dropout);
  * L2: l2 * sum of squares of every parameter.

Gradients are hand-derived and exact up to the zero-subgradient convention
at ReLU kinks and min/max argument ties. The explanation term's dependence
on the dense weights enters twice: through the logit gradient that defines
the channel weights and nowhere else, since the dense layer is linear in the
conv features. All of it is validated against central finite differences in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradcam import MINMAX_TOL
from .model import (
    ModelConfig,
    ParameterSet,
    conv_activations_batch,
    init_params,
    logits_from_hidden,
    sample_dropout_masks,
)
from .tensor import as_f64, softmax_rows

PROB_CLAMP = 1e-12


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr0: float = 1e-3
    lr_decay: float = 0.95
    l2: float = 1e-4
    explanation_weight: float = 1.0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.l2 < 0 or self.explanation_weight < 0:
            raise ValueError("l2 and explanation_weight must be >= 0")


def classification_loss(probs_batch, labels) -> float:
    """Summed -log(prob of true class), clamped below at 1e-12."""
    total = 0.0
    for probs, label in zip(probs_batch, labels):
        total -= np.log(max(float(probs[label]), PROB_CLAMP))
    return float(total)


def _cam_pipeline(params: ParameterSet, post: np.ndarray, labels: np.ndarray):
    """Batched GradCAM maps and their min-max normalization for the true classes.

    post: (B, F, H, W) deterministic post-ReLU maps. Returns the pieces the
    gradient needs: (a3, alpha_sel, cam_pre, cam, u, safe_range, degenerate).
    """
    b, f = post.shape[:2]
    hw = post.shape[2] * post.shape[3]
    a3 = post.reshape(b, f, hw)
    alpha_all = params.fc_weights.reshape(params.classes, f, hw).mean(axis=2)
    alpha_sel = alpha_all[labels]
    cam_pre = np.einsum("bf,bfp->bp", alpha_sel, a3)
    cam = np.maximum(cam_pre, 0.0)
    lo = cam.min(axis=1)
    rng = cam.max(axis=1) - lo
    degenerate = rng < MINMAX_TOL
    safe = np.where(degenerate, 1.0, rng)
    u = (cam - lo[:, None]) / safe[:, None]
    u[degenerate] = 0.0
    return a3, alpha_sel, cam_pre, cam, u, safe, degenerate


def explanation_loss(params: ParameterSet, images, labels, masks) -> float:
    """Sum over examples and pixels of (mask * normalized GradCAM)^2."""
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size == 0:
        return 0.0
    _, post = conv_activations_batch(params, as_f64(images))
    m = as_f64(masks).reshape(labels.size, -1)
    *_, u, _, _ = _cam_pipeline(params, post, labels)
    return float(((m * u) ** 2).sum())


def _l2_term(params: ParameterSet, l2: float) -> float:
    if l2 == 0.0:
        return 0.0
    return l2 * float(
        (params.conv_kernels ** 2).sum() + (params.conv_bias ** 2).sum()
        + (params.fc_weights ** 2).sum() + (params.fc_bias ** 2).sum()
    )


def combined_loss(params: ParameterSet, images, labels, masks=None, l2: float = 0.0,
                  explanation_weight: float = 0.0, dropout_masks: np.ndarray | None = None,
                  dropout_rate: float = 0.5) -> float:
    """classification + explanation_weight * explanation + l2 * sum(theta^2).

    `dropout_masks` (B, F*H*W boolean), when given, applies fixed inverted
    dropout to the classification path only; the explanation term always uses
    deterministic activations.
    """
    loss, _ = _loss_core(params, images, labels, masks, l2, explanation_weight,
                         dropout_masks, dropout_rate, want_grad=False)
    return loss


def loss_gradient(params: ParameterSet, images, labels, masks=None, l2: float = 0.0,
                  explanation_weight: float = 0.0, dropout_masks: np.ndarray | None = None,
                  dropout_rate: float = 0.5) -> ParameterSet:
    """Analytic gradient of :func:`combined_loss` w.r.t. every parameter."""
    _, grad = _loss_core(params, images, labels, masks, l2, explanation_weight,
                         dropout_masks, dropout_rate, want_grad=True)
    return grad


def loss_and_gradient(params: ParameterSet, images, labels, masks=None, l2: float = 0.0,
                      explanation_weight: float = 0.0,
                      dropout_masks: np.ndarray | None = None,
                      dropout_rate: float = 0.5) -> tuple[float, ParameterSet]:
    return _loss_core(params, images, labels, masks, l2, explanation_weight,
                      dropout_masks, dropout_rate, want_grad=True)


def _loss_core(params, images, labels, masks, l2, explanation_weight,
               dropout_masks, dropout_rate, want_grad):
    labels = np.asarray(labels, dtype=np.intp)
    b = labels.size
    h, w = params.image_shape
    hw = h * w
    f = params.filters
    d = f * hw
    want_expl = explanation_weight != 0.0

    loss = _l2_term(params, l2)
    grad = params.zeros_like() if want_grad else None
    if want_grad and l2 != 0.0:
        grad.conv_kernels += 2.0 * l2 * params.conv_kernels
        grad.conv_bias += 2.0 * l2 * params.conv_bias
        grad.fc_weights += 2.0 * l2 * params.fc_weights
        grad.fc_bias += 2.0 * l2 * params.fc_bias
    if b == 0:
        return loss, grad

    x = as_f64(images)
    pre, post = conv_activations_batch(params, x)
    flat = post.reshape(b, d)
    if dropout_masks is not None:
        hidden = flat * (dropout_masks / (1.0 - dropout_rate))
    else:
        hidden = flat
    logits = logits_from_hidden(params, hidden)
    probs = softmax_rows(logits)
    rows = np.arange(b)
    p_true = probs[rows, labels]
    loss += float(-np.log(np.maximum(p_true, PROB_CLAMP)).sum())

    if want_expl:
        if masks is None:
            raise ValueError("explanation_weight != 0 requires annotation masks")
        m_flat = as_f64(masks).reshape(b, hw)
        a3, alpha_sel, cam_pre, cam, u, safe, degenerate = _cam_pipeline(params, post, labels)
        loss += explanation_weight * float(((m_flat * u) ** 2).sum())

    if not want_grad:
        return loss, None

    g_a_flat = np.zeros((b, d))

    # classification path (examples at the probability clamp are locally flat)
    g_logits = probs.copy()
    g_logits[rows, labels] -= 1.0
    g_logits[p_true <= PROB_CLAMP] = 0.0
    grad.fc_weights += g_logits.T @ hidden
    grad.fc_bias += g_logits.sum(axis=0)
    g_hidden = g_logits @ params.fc_weights
    if dropout_masks is not None:
        g_a_flat += g_hidden * (dropout_masks / (1.0 - dropout_rate))
    else:
        g_a_flat += g_hidden

    # explanation path: through the map, its normalization, and the channel
    # weights (the dense-weight means that define alpha)
    if want_expl:
        g_u = 2.0 * (m_flat * m_flat) * u
        s1 = g_u.sum(axis=1)
        s2 = (g_u * u).sum(axis=1)
        g_cam = g_u / safe[:, None]
        hi_idx = cam.argmax(axis=1)
        lo_idx = cam.argmin(axis=1)
        g_cam[rows, hi_idx] -= s2 / safe
        g_cam[rows, lo_idx] -= (s1 - s2) / safe
        g_cam[degenerate] = 0.0
        g_cam_pre = g_cam * (cam_pre > 0.0)
        g_alpha_sel = np.einsum("bp,bfp->bf", g_cam_pre, a3)
        g_a_flat += explanation_weight * (
            alpha_sel[:, :, None] * g_cam_pre[:, None, :]
        ).reshape(b, d)
        alpha_acc = np.zeros((params.classes, f))
        np.add.at(alpha_acc, labels, g_alpha_sel)
        g_fc3 = grad.fc_weights.reshape(params.classes, f, hw)
        g_fc3 += (explanation_weight / hw) * alpha_acc[:, :, None]

    # shared ReLU and conv backward
    g_z = g_a_flat.reshape(b, f, h, w) * (pre > 0.0)
    grad.conv_bias += g_z.sum(axis=(0, 2, 3))
    kh, kw = params.conv_kernels.shape[2:]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xpad = np.zeros((b, 1, h + 2 * ph, w + 2 * pw))
    xpad[:, :, ph:ph + h, pw:pw + w] = x[:, None]
    for ku in range(kh):
        for kv in range(kw):
            grad.conv_kernels[:, :, ku, kv] += np.tensordot(
                g_z, xpad[:, :, ku:ku + h, kv:kv + w], axes=([0, 2, 3], [0, 2, 3])
            )
    return loss, grad


# ---------------------------------------------------------------------------
# Adam with per-epoch exponential learning-rate decay
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One Adam update; mutates `state`, returns the new parameter vector."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps)


def _run_training(params: ParameterSet, images, labels, ann_masks, mcfg: ModelConfig,
                  tcfg: TrainConfig, explanation_weight: float) -> ParameterSet:
    images = as_f64(images)
    labels = np.asarray(labels, dtype=np.intp)
    n = labels.size
    if n == 0:
        raise ValueError("training split is empty")
    if ann_masks is not None:
        ann_masks = as_f64(ann_masks).reshape(n, -1)
    d = params.filters * params.image_shape[0] * params.image_shape[1]

    shuffle_ss, dropout_ss = np.random.SeedSequence(tcfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    theta = params.to_vector()
    state = AdamState.zeros(theta.size)
    current = params
    for epoch in range(tcfg.epochs):
        lr = tcfg.lr0 * tcfg.lr_decay ** epoch
        perm = shuffle_rng.permutation(n)
        for bi, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = perm[start:start + tcfg.batch_size]
            dmask = sample_dropout_masks(dropout_rng, idx.size, d, mcfg.dropout_rate)
            loss, grad = loss_and_gradient(
                current, images[idx], labels[idx],
                masks=None if ann_masks is None else ann_masks[idx],
                l2=tcfg.l2, explanation_weight=explanation_weight,
                dropout_masks=dmask, dropout_rate=mcfg.dropout_rate,
            )
            gvec = grad.to_vector()
            if not np.isfinite(loss) or not np.all(np.isfinite(gvec)):
                raise DivergenceError(f"non-finite loss/gradient at epoch {epoch}, batch {bi}")
            theta = adam_step(theta, gvec, state, lr,
                              tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps)
            current = current.with_vector(theta)
    return current


def train(split, mcfg: ModelConfig, tcfg: TrainConfig) -> ParameterSet:
    """Classification-only training (cross-entropy + L2) from a seeded init.

    `split` needs .images (N, H, W) and .labels (N,). The explanation term is
    disabled here regardless of tcfg.explanation_weight; use :func:`finetune`
    to apply it.
    """
    image_shape = tuple(np.asarray(split.images).shape[1:])
    params = init_params(mcfg, image_shape, seed=tcfg.seed)
    return _run_training(params, split.images, split.labels, None, mcfg, tcfg,
                         explanation_weight=0.0)


def finetune(params0: ParameterSet, split, mcfg: ModelConfig, tcfg: TrainConfig) -> ParameterSet:
    """Resume training from `params0` with the explanation term enabled.

    `split` must carry annotation masks aligned with its examples.
    """
    if split.masks is None:
        raise ValueError("finetune requires a split with annotation masks")
    return _run_training(params0.copy(), split.images, split.labels, split.masks,
                         mcfg, tcfg, explanation_weight=tcfg.explanation_weight)
