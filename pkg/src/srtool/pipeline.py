"""Tiled inference: bicubic pre-upscale, split, refine each tile, merge."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .metrics import bicubic_resize, quantize
from .model import Model, forward
from .tiling import merge_tiles, split_tiles


def refine_tiles(model: Model, tiles, threads: int | None = None, batch: int = 8) -> np.ndarray:
    """Run the network over ``(n, 3, t, t)`` tiles.

    Tiles are independent; with ``threads > 1`` chunks run on a thread pool
    (BLAS releases the GIL). Results land at fixed indices, so the output
    does not depend on the thread count.
    """
    tiles = np.asarray(tiles, dtype=np.float32)
    chunks = [slice(i, i + batch) for i in range(0, len(tiles), batch)]
    out = np.empty(tiles.shape, dtype=np.float32)

    def run(sl):
        out[sl] = forward(model, tiles[sl])

    threads = threads or os.cpu_count() or 1
    if threads == 1 or len(chunks) == 1:
        for sl in chunks:
            run(sl)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, chunks))
    return out


def upscale(model: Model | None, image, scale, tile: int = 33, threads: int | None = None) -> np.ndarray:
    """Super-resolve a unit-range ``(3, H, W)`` image; returns float ``(3, sH, sW)``.

    ``model=None`` gives the plain bicubic result.
    """
    up = np.clip(bicubic_resize(image, scale), 0.0, 1.0) if scale != 1 else np.asarray(image, dtype=np.float64)
    if model is None:
        return up
    tiles, grid = split_tiles(up.astype(np.float32), tile)
    return merge_tiles(refine_tiles(model, tiles, threads), grid).astype(np.float64)


def upscale_u8(model, image, scale, tile=33, threads=None) -> np.ndarray:
    return quantize(upscale(model, image, scale, tile, threads))
