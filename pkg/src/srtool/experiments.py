"""Schedule comparison and the padding seam experiment."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .metrics import seam_index
from .model import ModelConfig
from .pipeline import upscale
from .training import TrainConfig, train


def summarize(records) -> dict:
    """Final loss/PSNR, epoch count and mean epoch seconds of one run."""
    if not records:
        return {"epochs": 0, "final_loss": None, "final_psnr": None, "mean_epoch_seconds": None,
                "mean_samples": None, "first_loss": None}
    return {
        "epochs": len(records),
        "first_loss": records[0].loss,
        "final_loss": records[-1].loss,
        "final_psnr": records[-1].psnr,
        "mean_epoch_seconds": float(np.mean([r.seconds for r in records])),
        "mean_samples": float(np.mean([r.samples for r in records])),
    }


def compare_schedules(dataset, cfg: TrainConfig, model_config: ModelConfig | None = None,
                      eval_pairs=None) -> dict:
    """Train once per schedule with the same seed and budget.

    Returns ``{schedule: {"records": [...], "summary": {...}}}``.
    """
    out = {}
    for schedule in ("sequential", "random_learning"):
        _, records = train(dataset, replace(cfg, schedule=schedule), model_config=model_config,
                           eval_pairs=eval_pairs)
        out[schedule] = {"records": records, "summary": summarize(records)}
    return out


def seam_experiment(dataset, test_image, cfg: TrainConfig, model_config: ModelConfig,
                    modes=("zero", "mirror")) -> dict:
    """Seam index of a tiled upscale of ``test_image`` per padding mode.

    Every mode trains from the same seed under the same budget; the test
    image is upscaled by ``cfg.scale`` with ``cfg.tile_size`` tiles.
    """
    result = {}
    for mode in modes:
        model, _ = train(dataset, replace(cfg, pad_mode=mode),
                         model_config=replace(model_config, pad_mode=mode, seed=cfg.seed))
        merged = upscale(model, test_image, cfg.scale, cfg.tile_size, threads=1)
        result[mode] = seam_index(merged, cfg.tile_size)
    return result
