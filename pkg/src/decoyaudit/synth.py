"""Synthetic 28x28 10-class corpus in canonical IDX files.

Stand-in for environments without the real garment image files: each class
is a fixed smooth template (dark 4-pixel border, like centered garments on
black background) plus per-image brightness jitter and pixel noise. The
files it writes are byte-compatible with the canonical IDX pair layout, so
the rest of the pipeline treats them exactly like the real dataset.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .dataset import (
    TEST_IMAGES,
    TEST_LABELS,
    TRAIN_IMAGES,
    TRAIN_LABELS,
    DatasetSplit,
    save_idx,
)

SIDE = 28
MARGIN = 4
N_CLASSES = 10


def class_templates(seed: int = 1234) -> np.ndarray:
    """Ten fixed smooth interior patterns, zero in the 4-pixel border: (10, 28, 28)."""
    rng = np.random.default_rng(seed)
    inner = SIDE - 2 * MARGIN
    templates = np.zeros((N_CLASSES, SIDE, SIDE))
    for c in range(N_CLASSES):
        coarse = rng.random((5, 5))
        block = np.kron(coarse, np.ones((4, 4)))[:inner, :inner]
        # one box-blur pass to soften block edges
        padded = np.pad(block, 1, mode="edge")
        smooth = sum(
            padded[dr:dr + inner, dc:dc + inner] for dr in range(3) for dc in range(3)
        ) / 9.0
        smooth -= smooth.min()
        smooth /= smooth.max()
        templates[c, MARGIN:MARGIN + inner, MARGIN:MARGIN + inner] = 0.85 * smooth
    return templates


def make_split(n: int, seed: int, template_seed: int = 1234,
               noise_sigma: float = 0.10) -> DatasetSplit:
    """Sample n labeled images: template * brightness + pixel noise, clipped to [0,1].

    Pixels are quantized to the uint8 grid so in-memory data matches what an
    IDX round-trip produces.
    """
    templates = class_templates(template_seed)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, N_CLASSES, size=n)
    brightness = rng.uniform(0.75, 1.0, size=n)
    images = templates[labels] * brightness[:, None, None]
    images += rng.normal(0.0, noise_sigma, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    images = np.rint(images * 255.0) / 255.0
    return DatasetSplit(images, labels)


def generate_corpus(out_dir, n_train: int = 60000, n_test: int = 10000,
                    seed: int = 7) -> dict:
    """Write train/test IDX pairs under out_dir; returns the four file paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = make_split(n_train, seed=seed)
    test = make_split(n_test, seed=seed + 1)
    paths = {
        "train_images": out / TRAIN_IMAGES,
        "train_labels": out / TRAIN_LABELS,
        "test_images": out / TEST_IMAGES,
        "test_labels": out / TEST_LABELS,
    }
    save_idx(train, paths["train_images"], paths["train_labels"])
    save_idx(test, paths["test_images"], paths["test_labels"])
    return paths


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: python -m decoyaudit.synth OUT_DIR [N_TRAIN] [N_TEST] [SEED]")
        return 0 if argv else 2
    out_dir = argv[0]
    n_train = int(argv[1]) if len(argv) > 1 else 60000
    n_test = int(argv[2]) if len(argv) > 2 else 10000
    seed = int(argv[3]) if len(argv) > 3 else 7
    paths = generate_corpus(out_dir, n_train, n_test, seed)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
