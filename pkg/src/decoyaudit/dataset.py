"""IDX ingestion, class-wise decoy injection, and split handling.

Images are stored normalized (uint8 / 255) in float64; writing back to IDX
re-quantizes with round-to-nearest, so integer payloads round-trip exactly.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridSpec, cell_bounds
from .tensor import as_f64

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
IMAGE_SIDE = 28
NUM_CLASSES = 10

# Canonical file names used by the decoy CLI output directory.
TRAIN_IMAGES = "train-images-idx3-ubyte.gz"
TRAIN_LABELS = "train-labels-idx1-ubyte.gz"
TRAIN_MASKS = "train-masks-idx3-ubyte.gz"
TEST_IMAGES = "t10k-images-idx3-ubyte.gz"
TEST_LABELS = "t10k-labels-idx1-ubyte.gz"
TEST_MASKS = "t10k-masks-idx3-ubyte.gz"
DECOY_SPEC_FILE = "decoy-spec.cfg"


class IdxFormatError(ValueError):
    """An IDX file is corrupted or not of the expected kind."""


@dataclass
class DatasetSplit:
    """Images (N, 28, 28) in [0, 1], labels (N,), optional {0,1} masks (N, 28, 28)."""

    images: np.ndarray
    labels: np.ndarray
    masks: np.ndarray | None = None

    def __post_init__(self):
        self.images = as_f64(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.masks is not None:
            self.masks = as_f64(self.masks)
            if self.masks.shape != self.images.shape:
                raise ValueError(
                    f"masks shape {self.masks.shape} does not match images {self.images.shape}"
                )
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, indices) -> "DatasetSplit":
        idx = np.asarray(indices)
        return DatasetSplit(
            self.images[idx].copy(), self.labels[idx].copy(),
            None if self.masks is None else self.masks[idx].copy(),
        )


@dataclass(frozen=True)
class DecoySpec:
    """Per-class decoy placement: one grid cell and one intensity for each class.

    The default table places distinct patches on corners and edge midpoints,
    with the Sneaker class (7) pinned to the bottom-left corner cell 43.
    """

    patch_size: int = 4
    intensity: float = 1.0
    cell_of_class: dict = field(default_factory=lambda: dict(DEFAULT_CELL_OF_CLASS))

    def __post_init__(self):
        grid = self.grid()
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must be in [0, 1], got {self.intensity}")
        missing = [c for c in range(NUM_CLASSES) if c not in self.cell_of_class]
        if missing:
            raise ValueError(f"cell_of_class missing classes {missing}")
        for cls, cell in self.cell_of_class.items():
            if not 1 <= cell <= grid.cells:
                raise ValueError(f"class {cls}: cell {cell} out of range 1..{grid.cells}")
        if self.cell_of_class[7] != 43:
            raise ValueError(
                f"class 7 (Sneaker) must map to cell 43, got {self.cell_of_class[7]}"
            )

    def grid(self) -> GridSpec:
        return GridSpec(IMAGE_SIDE, self.patch_size)


DEFAULT_CELL_OF_CLASS = {0: 1, 1: 7, 2: 49, 3: 4, 4: 46, 5: 25, 6: 22, 7: 43, 8: 28, 9: 13}


# ---------------------------------------------------------------------------
# IDX files (big-endian; optionally gzipped, detected by the 1f 8b magic)
# ---------------------------------------------------------------------------

def _read_maybe_gzip(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _parse_idx_images(raw: bytes, path) -> np.ndarray:
    if len(raw) < 16:
        raise IdxFormatError(f"{path}: truncated header at byte {len(raw)} (need 16)")
    magic, count, rows, cols = struct.unpack_from(">IIII", raw, 0)
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(
            f"{path}: magic 0x{magic:08x} at byte 0, expected image magic 0x{IMAGE_MAGIC:08x}"
        )
    if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
        raise IdxFormatError(f"{path}: image dims {rows}x{cols}, expected 28x28")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise IdxFormatError(
            f"{path}: payload ends at byte {len(raw)}, expected {expected} for {count} images"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def _parse_idx_labels(raw: bytes, path) -> np.ndarray:
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header at byte {len(raw)} (need 8)")
    magic, count = struct.unpack_from(">II", raw, 0)
    if magic != LABEL_MAGIC:
        raise IdxFormatError(
            f"{path}: magic 0x{magic:08x} at byte 0, expected label magic 0x{LABEL_MAGIC:08x}"
        )
    expected = 8 + count
    if len(raw) != expected:
        raise IdxFormatError(
            f"{path}: payload ends at byte {len(raw)}, expected {expected} for {count} labels"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def load_idx(images_path, labels_path) -> DatasetSplit:
    """Read an image/label IDX pair into a normalized split (no masks)."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    pixels = _parse_idx_images(_read_maybe_gzip(images_path), images_path)
    labels = _parse_idx_labels(_read_maybe_gzip(labels_path), labels_path)
    if pixels.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images_path} has {pixels.shape[0]} images but "
            f"{labels_path} has {labels.shape[0]} labels"
        )
    return DatasetSplit(pixels.astype(np.float64) / 255.0, labels.astype(np.int64))


def quantize_images(images01: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8 by round-to-nearest (exact inverse of /255 loading)."""
    return np.rint(np.clip(as_f64(images01), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_idx(split: DatasetSplit, images_path, labels_path, compress: bool | None = None) -> None:
    """Write a split back to canonical IDX files (gzipped iff name ends in .gz).

    Gzip members are written with mtime=0 so outputs are byte-stable.
    """
    pixels = quantize_images(split.images)
    n = len(split)
    img_raw = struct.pack(">IIII", IMAGE_MAGIC, n, IMAGE_SIDE, IMAGE_SIDE) + pixels.tobytes()
    lab_raw = struct.pack(">II", LABEL_MAGIC, n) + split.labels.astype(np.uint8).tobytes()
    for path, raw in ((Path(images_path), img_raw), (Path(labels_path), lab_raw)):
        use_gzip = path.suffix == ".gz" if compress is None else compress
        path.write_bytes(gzip.compress(raw, mtime=0) if use_gzip else raw)


def save_masks_idx(masks: np.ndarray, path) -> None:
    """Persist {0,1} annotation masks using the IDX image layout."""
    raw = struct.pack(">IIII", IMAGE_MAGIC, masks.shape[0], IMAGE_SIDE, IMAGE_SIDE)
    raw += np.asarray(masks, dtype=np.uint8).tobytes()
    path = Path(path)
    path.write_bytes(gzip.compress(raw, mtime=0) if path.suffix == ".gz" else raw)


def load_masks_idx(path) -> np.ndarray:
    path = Path(path)
    bits = _parse_idx_images(_read_maybe_gzip(path), path)
    return bits.astype(np.float64)


# ---------------------------------------------------------------------------
# Decoy injection and subset selection
# ---------------------------------------------------------------------------

def decoy_mask(cls: int, spec: DecoySpec) -> np.ndarray:
    """The (28, 28) {0,1} annotation mask of one class's decoy patch."""
    grid = spec.grid()
    r0, c0 = cell_bounds(spec.cell_of_class[int(cls)], grid)
    mask = np.zeros((IMAGE_SIDE, IMAGE_SIDE))
    mask[r0:r0 + spec.patch_size, c0:c0 + spec.patch_size] = 1.0
    return mask


def inject_decoys(split: DatasetSplit, spec: DecoySpec) -> DatasetSplit:
    """Overwrite each example's class cell with the decoy intensity; attach masks.

    Pure: the input split is left untouched. Existing masks, if any, are
    replaced, which makes the operation idempotent.
    """
    images = split.images.copy()
    masks = np.zeros_like(images)
    per_class_masks = {c: decoy_mask(c, spec) for c in range(NUM_CLASSES)}
    grid = spec.grid()
    for cls in range(NUM_CLASSES):
        sel = split.labels == cls
        if not sel.any():
            continue
        r0, c0 = cell_bounds(spec.cell_of_class[cls], grid)
        images[sel, r0:r0 + spec.patch_size, c0:c0 + spec.patch_size] = spec.intensity
        masks[sel] = per_class_masks[cls]
    return DatasetSplit(images, split.labels.copy(), masks)


def class_subset(split: DatasetSplit, cls: int, n: int, seed: int) -> DatasetSplit:
    """Seeded uniform sample without replacement of n examples of one class."""
    idx = np.flatnonzero(split.labels == cls)
    if idx.size < n:
        raise ValueError(
            f"class {cls} has only {idx.size} examples, cannot sample {n}"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(idx, size=n, replace=False)
    return split.subset(chosen)


# ---------------------------------------------------------------------------
# Decoy spec config file (plain key-value text)
# ---------------------------------------------------------------------------

def write_decoy_spec(spec: DecoySpec, path) -> None:
    lines = [f"patch_size = {spec.patch_size}", f"intensity = {spec.intensity}"]
    for cls in range(NUM_CLASSES):
        lines.append(f"cell_of_class_{cls} = {spec.cell_of_class[cls]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_decoy_spec(path) -> DecoySpec:
    kv = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    cells = {}
    for cls in range(NUM_CLASSES):
        key = f"cell_of_class_{cls}"
        if key in kv:
            cells[cls] = int(kv[key])
    if not cells:
        cells = dict(DEFAULT_CELL_OF_CLASS)
    return DecoySpec(
        patch_size=int(kv.get("patch_size", 4)),
        intensity=float(kv.get("intensity", 1.0)),
        cell_of_class=cells,
    )
