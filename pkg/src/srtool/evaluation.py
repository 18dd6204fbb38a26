"""Dataset scoring: degrade, super-resolve, compare on the luma channel."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .imageio import list_images, read_image_u8
from .metrics import QualityReport, bicubic_resize, psnr, quantize, ssim, to_luma
from .pipeline import upscale

log = logging.getLogger(__name__)

COLOR_SPACE = "Y (BT.601, 16-235)"


def modcrop(image, scale: int) -> np.ndarray:
    """Trim the bottom/right so both extents are multiples of ``scale``."""
    h, w = image.shape[-2:]
    return image[..., : h - h % scale, : w - w % scale]


def luma_u8(rgb_u8) -> np.ndarray:
    """Video-range luma rounded to 8-bit levels, as float."""
    return np.floor(to_luma(rgb_u8, studio=True) + 0.5)


def score_image(model, hr_u8, scale: int, tile: int = 33, threads: int | None = 1):
    """PSNR/SSIM of one HR image after a bicubic down/up (or model) round trip.

    Each resize is followed by 8-bit quantization; ``scale`` pixels are
    shaved from every border before scoring.
    """
    hr = modcrop(np.asarray(hr_u8), scale)
    lr = quantize(bicubic_resize(hr / 255.0, 1.0 / scale))
    sr = quantize(upscale(model, lr / 255.0, scale, tile, threads))
    crop = (slice(scale, -scale), slice(scale, -scale)) if scale else (slice(None),) * 2
    y = luma_u8(hr)[crop]
    y_sr = luma_u8(sr)[crop]
    return psnr(y, y_sr, data_range=255.0), ssim(y, y_sr)


def evaluate_dir(model, directory, scale: int, tile: int = 33, threads: int | None = None) -> QualityReport:
    """Score every image in ``directory``; unreadable or too-small images become failures."""
    paths = list_images(directory)
    if not paths:
        raise ValueError(f"{directory}: no images found")

    def one(path):
        try:
            return score_image(model, read_image_u8(path), scale, tile), None
        except Exception as exc:  # recorded, run continues
            return None, f"{type(exc).__name__}: {exc}"

    workers = threads or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(one, paths))
    report = QualityReport(color_space=COLOR_SPACE, shave=scale)
    for path, (scores, err) in zip(paths, results):
        if err is None:
            report.add(path.name, *scores)
        else:
            log.warning("%s: %s", path.name, err)
            report.failures.append((path.name, err))
    return report
