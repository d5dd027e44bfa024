"""End-to-end audit: locate spurious cells, score before/after change metrics.

An audit sweeps perturbation curves for test images of a source class that
the model classifies correctly, identifies each curve's lowest-certainty
cell, and summarizes how far certainties move from their baselines. Two
summary metrics are reported because "average change" admits two natural
readings: the mean absolute per-cell change, and the mean per-image maximal
drop.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetSplit, class_subset
from .model import ParameterSet, accuracy, deterministic_probs_batch
from .perturb import PerturbationCurve, sweep, write_curves
from .plots import plot_curve

SUMMARY_FILE = "summary.txt"
CURVES_FILE = "curves.csv"
APPENDIX_FILE = "appendix.csv"


@dataclass(frozen=True)
class MetricSummary:
    mean_abs_change: float   # mean over (image, cell) of |baseline - per_cell|
    mean_max_drop: float     # mean over images of (baseline - min per_cell)
    accuracy: float          # test accuracy of the audited model


@dataclass
class AuditReport:
    model_id: str
    checkpoint: str
    source_class: int
    target_class: int
    curves: list
    identified_cell_per_image: list
    consensus_cell: int
    metrics: MetricSummary
    config: dict = field(default_factory=dict)
    plot_sources: list = field(default_factory=list)


def identify_spurious(curve: PerturbationCurve) -> int:
    """Cell with the lowest mean certainty; ties resolve to the lowest index."""
    if curve.per_cell.size == 0:
        raise ValueError("curve has no per-cell values")
    return int(curve.per_cell.argmin()) + 1


def consensus_cell(cells) -> int:
    """Modal identified cell; ties resolve to the lowest cell index."""
    counts = np.bincount(np.asarray(cells, dtype=np.intp))
    return int(counts.argmax())


def change_metrics(curves, model_accuracy: float = math.nan) -> MetricSummary:
    """Both before/after comparison metrics over a set of curves."""
    if not curves:
        raise ValueError("change_metrics needs at least one curve")
    abs_changes = []
    max_drops = []
    for curve in curves:
        base = curve.baseline.mean_prob
        abs_changes.append(np.abs(base - curve.per_cell))
        max_drops.append(base - curve.per_cell.min())
    return MetricSummary(
        mean_abs_change=float(np.concatenate(abs_changes).mean()),
        mean_max_drop=float(np.mean(max_drops)),
        accuracy=float(model_accuracy),
    )


def select_correct_sources(params: ParameterSet, split: DatasetSplit, cls: int,
                           count: int) -> np.ndarray:
    """First `count` indices (dataset order) of class `cls` examples the model
    classifies correctly in deterministic mode."""
    idx = np.flatnonzero(split.labels == cls)
    if idx.size == 0:
        raise ValueError(f"split has no examples of class {cls}")
    probs = deterministic_probs_batch(params, split.images[idx])
    correct = idx[probs.argmax(axis=1) == cls]
    if correct.size < count:
        raise ValueError(
            f"only {correct.size} correctly-classified class-{cls} examples, need {count}"
        )
    return correct[:count]


def run_audit(params: ParameterSet, split: DatasetSplit, source_class: int = 7,
              target_class: int = 6, n_targets: int = 50, passes: int = 100,
              seed: int = 0, dropout_rate: float = 0.5, n_sources: int = 20,
              n_plots: int = 4, model_id: str = "", checkpoint: str = "",
              keep_per_target: bool = False) -> AuditReport:
    """Sweep curves for `n_sources` audited images and summarize them.

    The first `n_plots` audited images are flagged for figure output. The
    target pool is a seeded class subset; inputs are never mutated.
    """
    source_idx = select_correct_sources(params, split, source_class, n_sources)
    targets = class_subset(split, target_class, n_targets, seed=seed)
    curves = []
    for i in source_idx:
        curves.append(sweep(
            params, split.images[i], source_class, targets.images,
            passes=passes, seed=seed, dropout_rate=dropout_rate,
            source_index=int(i), keep_per_target=keep_per_target,
        ))
    cells = [identify_spurious(c) for c in curves]
    metrics = change_metrics(curves, model_accuracy=accuracy(params, split.images, split.labels))
    return AuditReport(
        model_id=model_id,
        checkpoint=checkpoint,
        source_class=source_class,
        target_class=target_class,
        curves=curves,
        identified_cell_per_image=cells,
        consensus_cell=consensus_cell(cells),
        metrics=metrics,
        config={
            "n_sources": n_sources, "n_targets": n_targets, "mc_passes": passes,
            "master_seed": seed, "dropout_rate": dropout_rate,
        },
        plot_sources=[int(i) for i in source_idx[:n_plots]],
    )


def emit_report(report: AuditReport, out_dir, appendix: bool = False) -> list:
    """Write curves.csv, one SVG figure per plotted source, and summary.txt.

    Output is byte-stable for identical inputs. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    curves_path = out / CURVES_FILE
    write_curves(report.curves, curves_path)
    written.append(curves_path)

    by_source = {c.source_index: c for c in report.curves}
    for src in report.plot_sources:
        path = out / f"curve_src{src:05d}.svg"
        plot_curve(by_source[src], path, source_class=report.source_class)
        written.append(path)

    lines = [
        "report_kind = decoy-audit",
        f"model_id = {report.model_id}",
        f"checkpoint = {report.checkpoint}",
        f"source_class = {report.source_class}",
        f"target_class = {report.target_class}",
    ]
    for key in ("n_sources", "n_targets", "mc_passes", "master_seed", "dropout_rate"):
        lines.append(f"{key} = {report.config.get(key, '')}")
    lines += [
        f"consensus_cell = {report.consensus_cell}",
        "identified_cells = " + ",".join(str(c) for c in report.identified_cell_per_image),
        "source_indices = " + ",".join(str(c.source_index) for c in report.curves),
        f"mean_abs_change = {report.metrics.mean_abs_change:.4f}",
        f"mean_max_drop = {report.metrics.mean_max_drop:.4f}",
        f"accuracy = {report.metrics.accuracy:.4f}",
    ]
    summary_path = out / SUMMARY_FILE
    summary_path.write_text("\n".join(lines) + "\n")
    written.append(summary_path)

    if appendix:
        app_lines = ["source_index,cell,target_rank,certainty"]
        for curve, cell in zip(report.curves, report.identified_cell_per_image):
            if curve.per_target is None:
                continue
            for rank, val in enumerate(curve.per_target[cell - 1]):
                app_lines.append(f"{curve.source_index},{cell},{rank},{format(val, '.10g')}")
        app_path = out / APPENDIX_FILE
        app_path.write_text("\n".join(app_lines) + "\n")
        written.append(app_path)
    return written


def read_summary(path) -> dict:
    """Parse a summary.txt back into a flat string dict."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def compare_summaries(summary_a: dict, summary_b: dict) -> list:
    """Before/after deltas and ratios for the two change metrics and accuracy."""
    lines = []
    for key in ("mean_abs_change", "mean_max_drop", "accuracy"):
        va, vb = float(summary_a[key]), float(summary_b[key])
        lines.append(f"{key}_a = {va:.4f}")
        lines.append(f"{key}_b = {vb:.4f}")
        lines.append(f"{key}_delta = {vb - va:+.4f}")
        ratio = vb / va if va != 0 else math.inf
        lines.append(f"{key}_ratio = {ratio:.4f}")
    lines.append(f"consensus_cell_a = {summary_a.get('consensus_cell', '')}")
    lines.append(f"consensus_cell_b = {summary_b.get('consensus_cell', '')}")
    return lines


def checkpoint_model_id(path) -> str:
    """Stable model identifier: SHA-256 of the checkpoint bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
