"""The 7x7 perturbation grid over 28x28 images.

Cells are numbered 1..49 row-major: cell 1 covers rows 0-3 x cols 0-3,
cell 7 the top-right corner, cell 43 the bottom-left corner.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class GridSpec:
    image_side: int = 28
    patch_side: int = 4

    def __post_init__(self):
        if self.patch_side < 1 or self.image_side < 1:
            raise ValueError("grid dimensions must be positive")
        if self.image_side % self.patch_side != 0:
            raise ValueError(
                f"image side {self.image_side} not divisible by patch side {self.patch_side}"
            )

    @property
    def per_row(self) -> int:
        return self.image_side // self.patch_side

    @property
    def cells(self) -> int:
        return self.per_row ** 2


DEFAULT_GRID = GridSpec()


def cell_bounds(cell: int, grid: GridSpec = DEFAULT_GRID) -> tuple[int, int]:
    """Top-left (row0, col0) of a 1-based grid cell."""
    if not 1 <= cell <= grid.cells:
        raise ValueError(f"cell {cell} out of range 1..{grid.cells}")
    idx = cell - 1
    return (grid.patch_side * (idx // grid.per_row),
            grid.patch_side * (idx % grid.per_row))
