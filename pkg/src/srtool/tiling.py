"""Tile splitting/merging and the per-epoch batch plan.

Tiles sit on a regular ``t``-grid; when an extent is not a multiple of ``t``
the last row/column of tiles is anchored to the image edge and overlaps its
neighbour. Merging averages overlapping pixels.

Random learning: the ``n`` tiles of an epoch are shuffled into ``ceil(n/b)``
batches, then ``k ~ Uniform{1..k_max}`` batches with
``k_max = max(1, floor(n / (8b)))`` are drawn without replacement and only
those are trained on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


@dataclass(frozen=True)
class TileGrid:
    height: int
    width: int
    tile: int
    origins: tuple[tuple[int, int], ...]

    @property
    def n_tiles(self) -> int:
        return len(self.origins)

    def coverage(self) -> np.ndarray:
        """Per-pixel count of tiles covering it."""
        cover = np.zeros((self.height, self.width), dtype=np.int32)
        t = self.tile
        for r, c in self.origins:
            cover[r:r + t, c:c + t] += 1
        return cover

    def exclusive_mask(self, index: int) -> np.ndarray:
        """Pixels covered only by tile ``index``."""
        r, c = self.origins[index]
        t = self.tile
        mask = np.zeros((self.height, self.width), dtype=bool)
        mask[r:r + t, c:c + t] = True
        return mask & (self.coverage() == 1)


def grid_starts(extent: int, t: int) -> list[int]:
    starts = list(range(0, extent - t + 1, t))
    if extent % t:
        starts.append(extent - t)
    return starts


def make_grid(height: int, width: int, t: int) -> TileGrid:
    if t < 1:
        raise ValueError(f"tile size must be >= 1, got {t}")
    if height < t or width < t:
        raise ShapeError(f"image {height}x{width} is smaller than tile size {t}")
    origins = tuple((r, c) for r in grid_starts(height, t) for c in grid_starts(width, t))
    return TileGrid(height, width, t, origins)


def split_tiles(image, t: int):
    """Cut a ``(C, H, W)`` image into ``t x t`` tiles in row-major order.

    Returns ``(tiles, grid)`` where ``tiles`` is an array ``(n, C, t, t)``.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"expected a (C,H,W) image, got shape {image.shape}")
    grid = make_grid(image.shape[1], image.shape[2], t)
    tiles = np.stack([image[:, r:r + t, c:c + t] for r, c in grid.origins])
    return tiles, grid


def merge_tiles(tiles, grid: TileGrid) -> np.ndarray:
    """Inverse of :func:`split_tiles`; overlapping pixels are averaged.

    The average is accumulated as a running mean so that overlaps of equal
    values reproduce those values exactly.
    """
    tiles = np.asarray(tiles)
    t = grid.tile
    if tiles.ndim != 4 or len(tiles) != grid.n_tiles or tiles.shape[2:] != (t, t):
        raise ShapeError(
            f"tiles of shape {tiles.shape} do not match a grid of {grid.n_tiles} tiles of size {t}")
    out = np.zeros((tiles.shape[1], grid.height, grid.width), dtype=tiles.dtype)
    count = np.zeros((grid.height, grid.width), dtype=np.int32)
    for tile, (r, c) in zip(tiles, grid.origins):
        region = out[:, r:r + t, c:c + t]
        n = count[r:r + t, c:c + t]
        n += 1
        region += (tile - region) / n
    return out


def batch_indices(n: int, b: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle ``range(n)`` and chunk it into ``ceil(n/b)`` index batches."""
    if n < 1:
        raise ValueError("cannot batch an empty tile list")
    if b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    perm = rng.permutation(n)
    return [perm[i:i + b] for i in range(0, n, b)]


def make_batches(tiles, b: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled batches of tiles; each batch is an array ``(b_i, C, t, t)``."""
    tiles = np.asarray(tiles)
    return [tiles[idx] for idx in batch_indices(len(tiles), b, rng)]


def k_max(n: int, b: int) -> int:
    return max(1, n // (8 * b))


def expected_fraction(n: int, b: int) -> float:
    """Expected fraction of the ``n`` tiles a random-learning epoch trains on.

    A uniformly chosen batch holds ``n / ceil(n/b)`` tiles on average and
    ``E[k] = (k_max + 1) / 2``.
    """
    m = -(-n // b)
    k = min(k_max(n, b), m)
    return (k + 1) / 2 / m


@dataclass
class BatchPlan:
    batch_size: int
    n_tiles: int
    n_batches: int
    k: int
    k_max: int
    selected: tuple[int, ...] = field(default_factory=tuple)

    def samples(self, batch_sizes) -> int:
        return int(sum(batch_sizes[i] for i in self.selected))


def random_select(batches, rng: np.random.Generator, batch_size: int | None = None) -> BatchPlan:
    """Draw ``k`` of the batches uniformly without replacement."""
    sizes = [len(x) for x in batches]
    if not sizes:
        raise ValueError("random_select needs at least one batch")
    n = sum(sizes)
    b = batch_size or max(sizes)
    top = min(k_max(n, b), len(sizes))
    k = int(rng.integers(1, top + 1))
    chosen = rng.choice(len(sizes), size=k, replace=False)
    return BatchPlan(b, n, len(sizes), k, top, tuple(int(i) for i in chosen))


def sequential_plan(batches, batch_size: int | None = None) -> BatchPlan:
    """Plan that visits every batch once, in order."""
    sizes = [len(x) for x in batches]
    n = sum(sizes)
    b = batch_size or max(sizes)
    return BatchPlan(b, n, len(sizes), len(sizes), len(sizes), tuple(range(len(sizes))))
