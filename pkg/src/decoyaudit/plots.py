"""Certainty-curve figures, rendered to SVG next to the delimited output.

Figures are byte-stable across runs: the SVG hash salt is pinned and the
date metadata is stripped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

matplotlib.rcParams["svg.hashsalt"] = "decoyaudit"

CELL_TICKS = [1, 10, 20, 30, 40, 49]


def plot_curve(curve, path, source_class: int | None = None) -> None:
    """One line plot per source image: x = grid cell 1..49, y = mean certainty."""
    import numpy as np

    cells = np.arange(1, curve.per_cell.size + 1)
    fig, ax = plt.subplots(figsize=(6.4, 3.2))
    ax.plot(cells, curve.per_cell, color="tab:blue", lw=1.2, marker="o", ms=2.5)
    ax.axhline(curve.baseline.mean_prob, color="tab:gray", lw=0.8, ls="--",
               label=f"baseline {curve.baseline.mean_prob:.3f}")
    worst = int(curve.per_cell.argmin()) + 1
    ax.plot([worst], [curve.per_cell[worst - 1]], "v", color="tab:red", ms=6,
            label=f"min at cell {worst}")
    ax.set_xticks(CELL_TICKS)
    ax.set_xlim(0.0, curve.per_cell.size + 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("perturbation cell")
    ax.set_ylabel("mean MC-dropout certainty")
    title = f"source image {curve.source_index}"
    if source_class is not None:
        title += f" (class {source_class})"
    ax.set_title(title, fontsize=10)
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    plt.close(fig)
