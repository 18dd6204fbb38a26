"""8-bit RGB image files <-> unit-range ``(3, H, W)`` float arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .metrics import quantize

IMAGE_SUFFIXES = {".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff", ".ppm"}


def read_image_u8(path) -> np.ndarray:
    """Read any Pillow-readable image as ``(3, H, W)`` uint8 RGB."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def read_image(path) -> np.ndarray:
    return read_image_u8(path).astype(np.float64) / 255.0


def write_png(path, image) -> None:
    """Write a ``(3, H, W)`` image; floats are clamped to [0, 1] and rounded half up."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = quantize(image)
    if image.ndim == 2:
        Image.fromarray(image, mode="L").save(path, format="PNG")
        return
    Image.fromarray(np.ascontiguousarray(image.transpose(1, 2, 0)), mode="RGB").save(path, format="PNG")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{directory}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
