"""
Contains small, reusable helpers that don't belong to a single pipeline stage.

This module provides the deterministic random number generator used by every
randomized operation, half-up rounding, and polygon/mask raster helpers shared
by the COCO and augmentation modules.
"""

from typing import Iterable, Sequence

import numpy as np
from skimage.draw import polygon as draw_polygon


MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """
    Advances a splitmix64 state by one step.

    Args:
        state (int): The current 64-bit state.

    Returns:
        tuple[int, int]: The next state and the 64-bit output derived from it.
    """
    state = (state + _GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def mix_seed(seed: int, *keys: int) -> int:
    """Folds any number of integer keys into a seed, one splitmix64 step per key."""
    state, out = splitmix64(seed & MASK64)
    for key in keys:
        state, out = splitmix64(out ^ (int(key) & MASK64))
    return out


class Rng:
    """
    Seeded random stream backed by numpy's counter-based Philox bit generator.

    Streams are keyed, not shared: `derive(image_id, variant)` returns an
    independent stream whose draws depend only on the parent seed and the keys,
    so results do not depend on which worker runs which unit of work.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed:#018x})"

    def derive(self, *keys: int) -> "Rng":
        return Rng(mix_seed(self.seed, *keys))

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in the closed range [low, high]."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def random(self, size=None):
        return self._gen.random(size=size)


def round_half_up(values):
    """Rounds halves away from zero for nonnegative input (0.5 → 1, 2.5 → 3)."""
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


def rasterize_polygons(
    polygons: Iterable[Sequence[float]],
    height: int,
    width: int,
    origin: tuple[int, int] = (0, 0),
) -> np.ndarray:
    """
    Rasterizes flat COCO polygons into a boolean mask by pixel-center sampling.

    A pixel (u, v) is set when its center (u + 0.5, v + 0.5) lies inside one of
    the polygons, so an axis-aligned integer rectangle covers exactly its area
    in pixels.

    Args:
        polygons: Flat [x0, y0, x1, y1, ...] coordinate lists (union of all).
        height (int): Mask height in pixels.
        width (int): Mask width in pixels.
        origin (tuple[int, int]): Frame offset (x, y) subtracted from every vertex.

    Returns:
        np.ndarray: Boolean mask of shape (height, width).
    """
    mask = np.zeros((height, width), dtype=bool)
    ox, oy = origin
    for poly in polygons:
        coords = np.asarray(poly, dtype=np.float64)
        xs = coords[0::2] - ox - 0.5
        ys = coords[1::2] - oy - 0.5
        rr, cc = draw_polygon(ys, xs, shape=(height, width))
        mask[rr, cc] = True
    return mask


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    """Returns the tight (x, y, w, h) box of the set pixels, or None for an empty mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return (
        int(cols[0]),
        int(rows[0]),
        int(cols[-1] - cols[0] + 1),
        int(rows[-1] - rows[0] + 1),
    )
