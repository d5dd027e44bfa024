"""Patch-exchange perturbation and MC-dropout certainty curves.

A probe swaps the 4x4 pixel square at one grid cell between a source image
and a target image; only the perturbed source is scored. Certainty is the
mean, over T stochastic dropout passes, of the softmax probability of the
source's true class. Each (cell, target) pair derives its own RNG seed from
the master seed, so curves are reproducible and independent of evaluation
order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import DEFAULT_GRID, GridSpec, cell_bounds
from .model import (
    ParameterSet,
    conv_activations_batch,
    logits_from_hidden,
    sample_dropout_masks,
)
from .tensor import as_f64, softmax_rows

CURVE_HEADER = "source_index,cell,mean_certainty,baseline,n_targets,passes"


@dataclass(frozen=True)
class CertaintyEstimate:
    mean_prob: float
    passes: int
    seed: int


@dataclass
class PerturbationCurve:
    """Mean certainty after perturbing one source image at each of the 49 cells."""

    source_index: int
    baseline: CertaintyEstimate
    per_cell: np.ndarray          # (cells,) means over targets
    n_targets: int
    passes: int
    per_target: np.ndarray | None = None   # (cells, n_targets), id-sorted


def patch_exchange(x_s: np.ndarray, x_t: np.ndarray, cell: int,
                   grid: GridSpec = DEFAULT_GRID) -> tuple[np.ndarray, np.ndarray]:
    """Swap the patch at `cell` between two images; inputs are not mutated."""
    a = as_f64(x_s).copy()
    b = as_f64(x_t).copy()
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    r0, c0 = cell_bounds(cell, grid)
    p = grid.patch_side
    a[r0:r0 + p, c0:c0 + p], b[r0:r0 + p, c0:c0 + p] = (
        b[r0:r0 + p, c0:c0 + p].copy(), a[r0:r0 + p, c0:c0 + p].copy())
    return a, b


def derive_mc_seed(master_seed: int, cell: int, target_index: int) -> int:
    """Stable per-(cell, target) seed; cell 0 is reserved for the baseline."""
    ss = np.random.SeedSequence([int(master_seed), int(cell), int(target_index)])
    return int(ss.generate_state(1, np.uint64)[0])


def _mc_mean_prob(params: ParameterSet, flat: np.ndarray, label: int, passes: int,
                  seed: int, dropout_rate: float) -> float:
    """Mean true-class probability over `passes` dropout draws on fixed activations."""
    if dropout_rate == 0.0:
        # degenerate estimator: every pass equals the deterministic probability
        logits = logits_from_hidden(params, flat[None])
        return float(softmax_rows(logits)[0, label])
    rng = np.random.default_rng(seed)
    masks = sample_dropout_masks(rng, passes, flat.size, dropout_rate)
    hidden = flat * (masks / (1.0 - dropout_rate))
    probs = softmax_rows(logits_from_hidden(params, hidden))
    return float(probs[:, label].mean())


def mc_certainty(params: ParameterSet, image: np.ndarray, label: int,
                 passes: int = 100, seed: int = 0,
                 dropout_rate: float = 0.5) -> CertaintyEstimate:
    """MC-dropout certainty of `label` for one image."""
    if passes < 1:
        raise ValueError(f"passes must be >= 1, got {passes}")
    _, post = conv_activations_batch(params, as_f64(image)[None])
    mean = _mc_mean_prob(params, post.reshape(-1), label, passes, seed, dropout_rate)
    return CertaintyEstimate(mean, passes, seed)


def sweep(params: ParameterSet, x_s: np.ndarray, label_s: int, targets: np.ndarray,
          grid: GridSpec = DEFAULT_GRID, passes: int = 100, seed: int = 0,
          dropout_rate: float = 0.5, source_index: int = 0,
          target_ids=None, keep_per_target: bool = False) -> PerturbationCurve:
    """Full certainty curve of one source image over all grid cells.

    For every cell and every target image, the perturbed source is scored
    with its own derived seed; per-cell values average over targets in
    target-id order, so reordering `targets` (with their ids) cannot change
    the result. `target_ids` defaults to positions 0..N-1.
    """
    x_s = as_f64(x_s)
    targets = as_f64(targets)
    if targets.ndim != 3 or targets.shape[0] == 0:
        raise ValueError(f"targets must be a non-empty (N, H, W) stack, got {targets.shape}")
    n = targets.shape[0]
    if target_ids is None:
        target_ids = np.arange(n)
    target_ids = np.asarray(target_ids)
    if target_ids.shape != (n,):
        raise ValueError(f"need {n} target ids, got shape {target_ids.shape}")
    order = np.argsort(target_ids, kind="stable")

    baseline = mc_certainty(params, x_s, label_s, passes,
                            derive_mc_seed(seed, 0, 0), dropout_rate)

    p = grid.patch_side
    per_cell = np.empty(grid.cells)
    per_target = np.empty((grid.cells, n)) if keep_per_target else None
    for cell in range(1, grid.cells + 1):
        r0, c0 = cell_bounds(cell, grid)
        # all perturbed sources for this cell in one conv batch
        perturbed = np.broadcast_to(x_s, targets.shape).copy()
        perturbed[:, r0:r0 + p, c0:c0 + p] = targets[:, r0:r0 + p, c0:c0 + p]
        _, post = conv_activations_batch(params, perturbed)
        flats = post.reshape(n, -1)
        vals = np.empty(n)
        for rank, t in enumerate(order):
            mc_seed = derive_mc_seed(seed, cell, int(target_ids[t]))
            vals[rank] = _mc_mean_prob(params, flats[t], label_s, passes,
                                       mc_seed, dropout_rate)
        per_cell[cell - 1] = vals.mean()
        if keep_per_target:
            per_target[cell - 1] = vals
    return PerturbationCurve(source_index, baseline, per_cell, n, passes, per_target)


# ---------------------------------------------------------------------------
# Delimited curve records: one row per (source_index, cell)
# ---------------------------------------------------------------------------

def write_curves(curves, path) -> None:
    lines = [CURVE_HEADER]
    for curve in curves:
        base = format(curve.baseline.mean_prob, ".10g")
        for cell in range(1, curve.per_cell.size + 1):
            lines.append(
                f"{curve.source_index},{cell},{format(curve.per_cell[cell - 1], '.10g')},"
                f"{base},{curve.n_targets},{curve.passes}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def read_curves(path) -> list[PerturbationCurve]:
    """Rebuild curves from a delimited record file (seeds are not recoverable)."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != CURVE_HEADER:
        raise ValueError(f"{path}: missing curve header {CURVE_HEADER!r}")
    rows = {}
    for line in text[1:]:
        src, cell, mean, base, n_targets, passes = line.split(",")
        entry = rows.setdefault(int(src), {"base": float(base), "n": int(n_targets),
                                           "passes": int(passes), "cells": {}})
        entry["cells"][int(cell)] = float(mean)
    curves = []
    for src in sorted(rows):
        entry = rows[src]
        cells = entry["cells"]
        per_cell = np.array([cells[c] for c in sorted(cells)])
        curves.append(PerturbationCurve(
            src, CertaintyEstimate(entry["base"], entry["passes"], -1),
            per_cell, entry["n"], entry["passes"]))
    return curves
