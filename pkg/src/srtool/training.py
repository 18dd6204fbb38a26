"""Training loop with sequential or random-learning epochs.

Loss for a batch of ``N`` pairs is ``1/(2N) * sum_i ||y_i - f(x_i)||^2``.
Training pairs come from HR tiles by a bicubic down/up round trip, so input
and target have the same extent.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .metrics import bicubic_resize, psnr
from .model import (Model, ModelConfig, backward, build_model, forward, forward_with_tape,
                    load_weights, save_weights)
from .tensor import ShapeError
from .tiling import batch_indices, random_select, sequential_plan, split_tiles

log = logging.getLogger(__name__)

SCHEDULES = ("sequential", "random_learning")


class NonFiniteError(FloatingPointError):
    """A loss or gradient went NaN/Inf."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int | None = 100
    max_steps: int | None = None
    max_seconds: float | None = None
    schedule: str = "random_learning"
    pad_mode: str = "mirror"
    scale: int = 3
    tile_size: int = 33
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    # stop as soon as the epoch's evaluation PSNR exceeds this (dB)
    target_psnr: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be one of 2, 3, 4, got {self.scale}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.max_epochs is None and self.max_steps is None and self.max_seconds is None:
            raise ValueError("set at least one of max_epochs, max_steps, max_seconds")
        if self.target_psnr is not None and self.target_psnr <= 0:
            raise ValueError("target_psnr must be positive")


@dataclass
class EpochRecord:
    epoch: int
    batches: int
    samples: int
    seconds: float
    loss: float
    psnr: float | None = None
    complete: bool = True

    def to_json(self) -> dict:
        d = asdict(self)
        if d["psnr"] is not None and math.isinf(d["psnr"]):
            d["psnr"] = "inf"
        return d

    @classmethod
    def from_json(cls, d) -> "EpochRecord":
        d = dict(d)
        if d.get("psnr") == "inf":
            d["psnr"] = math.inf
        return cls(**d)


# -- data -------------------------------------------------------------------------

def degrade(hr, scale: int) -> np.ndarray:
    """Bicubic down by ``scale`` then back up to the original extent."""
    if scale == 1:
        return np.array(hr, dtype=np.float64)
    h, w = hr.shape[-2:]
    lr = bicubic_resize(hr, 1.0 / scale)
    return np.clip(bicubic_resize(lr, scale, out_shape=(h, w)), 0.0, 1.0)


def make_pairs(images, tile: int = 33, scale: int = 3, dtype=np.float32):
    """Tile every HR image and build ``(inputs, targets)``, each ``(n, 3, t, t)``."""
    inputs, targets = [], []
    for img in images:
        img = np.asarray(img)
        if img.shape[-2] < tile or img.shape[-1] < tile:
            log.warning("skipping %dx%d image smaller than tile %d", img.shape[-2], img.shape[-1], tile)
            continue
        tiles, _ = split_tiles(img, tile)
        targets.append(tiles)
        inputs.append(np.stack([degrade(t, scale) for t in tiles]))
    if not targets:
        raise ValueError("dataset yields no tiles")
    return np.concatenate(inputs).astype(dtype), np.concatenate(targets).astype(dtype)


# -- loss ---------------------------------------------------------------------------

def batch_loss(model: Model, inputs, targets) -> float:
    """``1/(2N) * sum_i ||targets_i - forward(inputs_i)||^2``."""
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if inputs.shape != targets.shape:
        raise ShapeError(f"input batch {inputs.shape} and target batch {targets.shape} differ")
    if inputs.ndim == 3:
        inputs, targets = inputs[None], targets[None]
    d = forward(model, inputs).astype(np.float64) - targets
    return float(np.sum(d * d) / (2 * len(inputs)))


def loss_and_grads(model: Model, inputs, targets):
    out, tape = forward_with_tape(model, inputs)
    d = out - targets.astype(out.dtype, copy=False)
    n = len(inputs)
    loss = float(np.sum(d.astype(np.float64) ** 2) / (2 * n))
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}")
    grads = backward(model, inputs, d / n, tape=tape)
    return loss, grads, out


# -- optimizers --------------------------------------------------------------------

def _check_grads(grads):
    for name, (gw, gb) in grads.items():
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NonFiniteError(f"non-finite gradient in layer {name}")


def _check_params(model):
    for name, w, b in model.parameters():
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NonFiniteError(f"update made layer {name} non-finite")


class GradientDescent:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, model: Model, grads) -> None:
        _check_grads(grads)
        for name, w, b in model.parameters():
            gw, gb = grads[name]
            w -= (self.lr * gw).astype(w.dtype, copy=False)
            b -= (self.lr * gb).astype(b.dtype, copy=False)
        _check_params(model)


class Adam:
    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, model: Model, grads) -> None:
        _check_grads(grads)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, w, b in model.parameters():
            for key, p, g in ((name + ".w", w, grads[name][0]), (name + ".b", b, grads[name][1])):
                if key not in self.m:
                    self.m[key] = np.zeros_like(p)
                    self.v[key] = np.zeros_like(p)
                m, v = self.m[key], self.v[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
        _check_params(model)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return GradientDescent(cfg.learning_rate)
    return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


# -- loop --------------------------------------------------------------------------

def evaluate_psnr(model: Model, inputs, targets, batch: int = 16) -> float:
    outs = [forward(model, inputs[i:i + batch]) for i in range(0, len(inputs), batch)]
    out = np.clip(np.concatenate(outs).astype(np.float64), 0.0, 1.0)
    return psnr(targets.astype(np.float64), out)


def train(dataset, cfg: TrainConfig, model: Model | None = None,
          model_config: ModelConfig | None = None, eval_pairs=None, on_epoch=None):
    """Optimize a model on ``dataset``.

    ``dataset`` is either a list of HR images ``(3, H, W)`` or a ready
    ``(inputs, targets)`` pair of tile arrays. Returns ``(model, records)``
    where the model carries the weights of the lowest-loss complete epoch.
    """
    if isinstance(dataset, tuple):
        inputs, targets = (np.asarray(a, dtype=np.float32) for a in dataset)
    else:
        inputs, targets = make_pairs(dataset, cfg.tile_size, cfg.scale)
    if len(inputs) == 0:
        raise ValueError("empty dataset")
    if model is None:
        mc = model_config or ModelConfig(seed=cfg.seed)
        if mc.pad_mode != cfg.pad_mode:
            mc = ModelConfig(**{**mc.to_dict(), "pad_mode": cfg.pad_mode})
        model = build_model(mc)

    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    records: list[EpochRecord] = []
    best_loss, best = math.inf, model.copy()
    steps = 0
    start = time.perf_counter()

    def out_of_budget():
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            return True
        return cfg.max_seconds is not None and time.perf_counter() - start >= cfg.max_seconds

    epoch = 0
    while (cfg.max_epochs is None or epoch < cfg.max_epochs) and not out_of_budget():
        t0 = time.perf_counter()
        batches = batch_indices(len(inputs), cfg.batch_size, rng)
        if cfg.schedule == "random_learning":
            plan = random_select(batches, rng, cfg.batch_size)
        else:
            plan = sequential_plan(batches, cfg.batch_size)
        losses, sq_err, samples, done, aborted = [], 0.0, 0, 0, False
        for bi in plan.selected:
            if out_of_budget():
                break
            idx = batches[bi]
            try:
                loss, grads, out = loss_and_grads(model, inputs[idx], targets[idx])
                opt.step(model, grads)
                d = np.clip(out, 0.0, 1.0).astype(np.float64) - targets[idx]
                sq_err += float(np.sum(d * d))
            except NonFiniteError as exc:
                log.error("epoch %d aborted: %s", epoch, exc)
                aborted = True
                break
            steps += 1
            done += 1
            samples += len(idx)
            losses.append(loss * len(idx))
        if done == 0:
            if aborted:
                epoch += 1
                continue
            break
        mean_loss = float(sum(losses) / samples)
        rec = EpochRecord(epoch, done, samples, max(time.perf_counter() - t0, 1e-9), mean_loss,
                          complete=(done == len(plan.selected) and not aborted))
        if eval_pairs is not None:
            rec.psnr = evaluate_psnr(model, *eval_pairs)
        else:
            # outputs seen during the epoch, i.e. before each batch's update
            mse_255 = sq_err / (samples * inputs[0].size) * 255.0 ** 2
            rec.psnr = math.inf if mse_255 == 0 else 10 * math.log10(255.0 ** 2 / mse_255)
        records.append(rec)
        log.info("epoch %d batches %d samples %d loss %.6g psnr %s %.2fs", rec.epoch, rec.batches,
                 rec.samples, rec.loss, "-" if rec.psnr is None else f"{rec.psnr:.2f}", rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
        if rec.complete and mean_loss < best_loss:
            best_loss, best = mean_loss, model.copy()
        if cfg.checkpoint_every and cfg.checkpoint_path and (epoch + 1) % cfg.checkpoint_every == 0:
            checkpoint(model, records, cfg.checkpoint_path)
        epoch += 1
        if cfg.target_psnr is not None and rec.psnr is not None and rec.psnr > cfg.target_psnr:
            best = model.copy()
            break
    return best, records


# -- checkpoints ---------------------------------------------------------------------

def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def checkpoint(model: Model, records, path) -> None:
    """Weight file at ``path`` plus ``<path>.json`` with the epoch telemetry."""
    save_weights(model, path)
    payload = {"epochs": [r.to_json() for r in records], "model_config": model.config.to_dict()}
    sidecar_path(path).write_text(json.dumps(payload, indent=2))


def resume(path):
    """Load a checkpoint; returns ``(model, records)``.

    A missing sidecar is not fatal: the weights load with an inferred config
    and the telemetry comes back empty.
    """
    side = sidecar_path(path)
    if not side.exists():
        log.warning("telemetry missing, weights loaded: no sidecar at %s", side)
        return load_weights(path), []
    payload = json.loads(side.read_text())
    cfg = ModelConfig(**payload["model_config"]) if "model_config" in payload else None
    records = [EpochRecord.from_json(r) for r in payload.get("epochs", [])]
    return load_weights(path, cfg), records
