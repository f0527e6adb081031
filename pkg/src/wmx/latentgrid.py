"""Latent grid: decode a latent vector after shifting one region at a time.

Rows of the grid are increments, columns are latent regions.  The source
vector is copied for every cell, so regions are always perturbed from the
original values.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model_store import join_images, render_frame
from .parallel import pmap

SEPARATOR = 2
DEFAULT_INCREMENTS = (1.0, 2.0, 3.0)
DEFAULT_REGION = 10


@dataclass
class LatentGrid:
    source: np.ndarray
    region_size: int
    increments: tuple[float, ...]
    latents: np.ndarray  # (rows, cols, latent_dim)
    cells: list[list[np.ndarray]]  # decoded outputs, rows x cols

    @property
    def rows(self) -> int:
        return len(self.increments)

    @property
    def cols(self) -> int:
        return self.latents.shape[1]


def perturb_region(z, region: int, delta: float, region_size: int = DEFAULT_REGION) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    n_regions = z.size // region_size
    if not 0 <= region < n_regions:
        raise ValueError(f"region must be in [0, {n_regions}), got {region}")
    out = z.copy()
    out[region * region_size:(region + 1) * region_size] += delta
    return out


def build_grid(decode: Callable[[np.ndarray], np.ndarray], z, region_size: int = DEFAULT_REGION,
               increments: Sequence[float] = DEFAULT_INCREMENTS) -> LatentGrid:
    """Decode ``z`` with each region shifted by each increment.

    ``decode`` maps a latent vector to whatever should be stored per cell
    (class-index frame, probability map, reconstruction vector).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.size % region_size:
        raise ValueError(f"latent size {z.size} is not divisible by region size {region_size}")
    cols = z.size // region_size
    increments = tuple(float(d) for d in increments)
    latents = np.stack([np.stack([perturb_region(z, c, d, region_size) for c in range(cols)])
                        for d in increments])
    flat = pmap(decode, list(latents.reshape(-1, z.size)))
    cells = [flat[r * cols:(r + 1) * cols] for r in range(len(increments))]
    return LatentGrid(z.copy(), region_size, increments, latents, cells)


def grid_montage(grid: LatentGrid, palette) -> np.ndarray:
    """Tile class-index cells row-major with white 2-px separators."""
    rows = []
    for r in range(grid.rows):
        tiles = [render_frame(np.asarray(cell, dtype=np.uint8), palette) for cell in grid.cells[r]]
        rows.append(join_images(tiles, axis=1, gap=SEPARATOR))
    return join_images(rows, axis=0, gap=SEPARATOR)

