"""``srtool`` command line: train, upscale, evaluate, seam, experiment-random, baseline."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import evaluation
from .experiments import compare_schedules
from .imageio import list_images, read_image, write_png
from .metrics import quantize, seam_heatmap, seam_index
from .model import ModelConfig, load_weights
from .pipeline import upscale
from .training import TrainConfig, checkpoint, sidecar_path, train

log = logging.getLogger("srtool")

SCHEDULE_NAMES = {"random": "random_learning", "random_learning": "random_learning",
                  "sequential": "sequential"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    model: str | None = None
    out: str | None = None
    image: str | None = None
    heatmap: str | None = None
    scale: int = 3
    tile: int = 33
    padding: str | None = None
    schedule: str = "random"
    seed: int = 0
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    batch_size: int = 8
    max_epochs: int | None = None
    max_steps: int | None = None
    max_seconds: float | None = None
    checkpoint_every: int = 0
    threads: int | None = None
    feature_width: int = 64
    expansion_width: int = 256
    n_residual_blocks: int = 5
    kernel_size: int = 7

    @classmethod
    def from_sources(cls, path=None, overrides=None) -> "RunConfig":
        """JSON file values, then non-None ``overrides`` on top."""
        known = {f.name for f in fields(cls)}
        values = {}
        if path:
            try:
                data = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {path}: {exc}") from None
            if not isinstance(data, dict):
                raise UsageError(f"config {path} must hold a JSON object")
            for key, value in data.items():
                name = key.replace("-", "_")
                if name not in known:
                    raise UsageError(f"unknown config key {key!r}")
                values[name] = value
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        return cls(**values)

    def train_config(self) -> TrainConfig:
        budget_given = any(v is not None for v in (self.max_epochs, self.max_steps, self.max_seconds))
        return TrainConfig(
            learning_rate=self.learning_rate, optimizer=self.optimizer, batch_size=self.batch_size,
            max_epochs=self.max_epochs if budget_given else 100, max_steps=self.max_steps,
            max_seconds=self.max_seconds, schedule=SCHEDULE_NAMES[self.schedule],
            pad_mode=self.padding or "mirror", scale=self.scale, tile_size=self.tile, seed=self.seed,
            checkpoint_every=self.checkpoint_every,
            checkpoint_path=self.out if self.checkpoint_every else None)

    def model_config(self) -> ModelConfig:
        return ModelConfig(tile_size=self.tile, feature_width=self.feature_width,
                           expansion_width=self.expansion_width,
                           n_residual_blocks=self.n_residual_blocks, kernel_size=self.kernel_size,
                           pad_mode=self.padding or "mirror", seed=self.seed)


# -- helpers ------------------------------------------------------------------------

def _require(cfg, *names):
    for name in names:
        if getattr(cfg, name) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _load_model(cfg):
    """Weights plus, when a checkpoint sidecar exists, its stored architecture and padding."""
    if cfg.model in (None, "none"):
        return None
    side = sidecar_path(cfg.model)
    arch = None
    if side.exists():
        stored = json.loads(side.read_text()).get("model_config")
        arch = ModelConfig(**stored) if stored else None
    return load_weights(cfg.model, arch, pad_mode=cfg.padding)


def _load_dataset(directory):
    images = []
    for path in list_images(directory):
        try:
            images.append(read_image(path))
        except Exception as exc:  # unreadable file: skip it
            log.warning("skipping unreadable image %s: %s", path, exc)
    if not images:
        raise ValueError(f"{directory}: no readable images")
    return images


def _fmt(v):
    if v is None:
        return "-"
    return "inf" if v == math.inf else f"{v:.6g}"


def _print_record(rec):
    print(f"epoch={rec.epoch} batches={rec.batches} samples={rec.samples} seconds={rec.seconds:.3f} "
          f"loss={_fmt(rec.loss)} psnr={_fmt(rec.psnr)}", flush=True)


def _print_report(report, label=""):
    for name, p, s in report.rows:
        print(f"{label}{name} psnr_db={_fmt(p)} ssim={_fmt(s)}")
    for name, err in report.failures:
        print(f"{label}{name} failed: {err}")
    print(f"{label}mean psnr_db={_fmt(report.mean_psnr)} ssim={_fmt(report.mean_ssim)} "
          f"images={len(report.rows)} color_space={report.color_space} shave={report.shave}")


def _write_report(report, out):
    out = Path(out)
    if out.suffix.lower() == ".csv":
        report.to_csv(out)
    else:
        report.to_json(out)


# -- commands --------------------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "data", "out")
    images = _load_dataset(cfg.data)
    tc = cfg.train_config()
    model, records = train(images, tc, model_config=cfg.model_config(), on_epoch=_print_record)
    if not records:
        raise RuntimeError("budget ended before the first batch")
    checkpoint(model, records, cfg.out)
    print(f"saved {cfg.out} epochs={len(records)}")
    return 0


def cmd_upscale(cfg: RunConfig) -> int:
    _require(cfg, "image", "out")
    model = _load_model(cfg)
    image = read_image(cfg.image)
    result = upscale(model, image, cfg.scale, cfg.tile, cfg.threads)
    write_png(cfg.out, result)
    print(f"wrote {cfg.out} {result.shape[2]}x{result.shape[1]}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    _require(cfg, "data")
    model = _load_model(cfg)
    report = evaluation.evaluate_dir(model, cfg.data, cfg.scale, cfg.tile, cfg.threads)
    _print_report(report)
    if cfg.out:
        _write_report(report, cfg.out)
    return 0


def cmd_seam(cfg: RunConfig) -> int:
    _require(cfg, "image")
    image = read_image(cfg.image)
    print(f"seam_index={seam_index(image, cfg.tile)!r}")
    if cfg.heatmap:
        heat = seam_heatmap(image, cfg.tile)
        peak = heat.max()
        write_png(cfg.heatmap, quantize(heat / peak if peak > 0 else heat))
    return 0


def cmd_experiment_random(cfg: RunConfig) -> int:
    _require(cfg, "data")
    images = _load_dataset(cfg.data)
    result = compare_schedules(images, cfg.train_config(), cfg.model_config())
    print(f"{'':20s}{'sequential':>16s}{'random':>16s}")
    seq, rnd = result["sequential"]["summary"], result["random_learning"]["summary"]
    for key in ("epochs", "mean_samples", "first_loss", "final_loss", "final_psnr", "mean_epoch_seconds"):
        print(f"{key:20s}{_fmt(seq[key]):>16s}{_fmt(rnd[key]):>16s}")
    if cfg.out:
        payload = {k: {"summary": v["summary"], "epochs": [r.to_json() for r in v["records"]]}
                   for k, v in result.items()}
        Path(cfg.out).write_text(json.dumps(payload, indent=2))
    return 0


def cmd_baseline(cfg: RunConfig) -> int:
    _require(cfg, "data")
    reports = {}
    for directory in cfg.data.split(","):
        start = time.perf_counter()
        report = evaluation.evaluate_dir(None, directory, cfg.scale, cfg.tile, cfg.threads)
        name = Path(directory).name
        _print_report(report, label=f"{name}/")
        print(f"{name} seconds={time.perf_counter() - start:.2f}")
        reports[name] = report.to_dict()
    if cfg.out:
        Path(cfg.out).write_text(json.dumps(reports, indent=2))
    return 0


COMMANDS = {
    "train": cmd_train,
    "upscale": cmd_upscale,
    "evaluate": cmd_evaluate,
    "seam": cmd_seam,
    "experiment-random": cmd_experiment_random,
    "baseline": cmd_baseline,
}


# -- parsing ----------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"srtool: usage error: {message}\n")


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="srtool", description="Tiled super-resolution toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with run settings; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=_positive(int))
    common.add_argument("--out")
    common.add_argument("--verbose", action="store_true")

    model_flags = _Parser(add_help=False)
    model_flags.add_argument("--model", help="weight file, or 'none' for plain bicubic")
    model_flags.add_argument("--padding", choices=("mirror", "zero", "valid"))
    model_flags.add_argument("--scale", type=_positive(int))
    model_flags.add_argument("--tile", type=_positive(int))

    train_flags = _Parser(add_help=False)
    train_flags.add_argument("--data")
    train_flags.add_argument("--schedule", choices=("random", "sequential"))
    train_flags.add_argument("--learning-rate", type=_positive(float))
    train_flags.add_argument("--optimizer", choices=("adam", "sgd"))
    train_flags.add_argument("--batch-size", type=_positive(int))
    train_flags.add_argument("--max-epochs", type=_positive(int))
    train_flags.add_argument("--max-steps", type=_positive(int))
    train_flags.add_argument("--max-seconds", type=_positive(float))
    train_flags.add_argument("--checkpoint-every", type=int)
    train_flags.add_argument("--feature-width", type=_positive(int))
    train_flags.add_argument("--expansion-width", type=_positive(int))
    train_flags.add_argument("--n-residual-blocks", type=_positive(int))
    train_flags.add_argument("--kernel-size", type=_positive(int))

    sub.add_parser("train", parents=[common, model_flags, train_flags], help="train a model")
    p = sub.add_parser("upscale", parents=[common, model_flags], help="super-resolve one image")
    p.add_argument("--image", "--input", dest="image")
    p = sub.add_parser("evaluate", parents=[common, model_flags], help="score a dataset directory")
    p.add_argument("--data")
    p = sub.add_parser("seam", parents=[common], help="seam index of an image")
    p.add_argument("--image", "--input", dest="image")
    p.add_argument("--tile", type=_positive(int))
    p.add_argument("--heatmap", help="write a boundary heat-map PNG here")
    sub.add_parser("experiment-random", parents=[common, model_flags, train_flags],
                   help="random-learning vs sequential under one budget")
    p = sub.add_parser("baseline", parents=[common], help="bicubic scores for dataset directories")
    p.add_argument("--data", help="comma-separated dataset directories")
    p.add_argument("--scale", type=_positive(int))
    p.add_argument("--tile", type=_positive(int))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = RunConfig.from_sources(args.config, overrides)
        if cfg.tile < 1:
            raise UsageError("tile must be positive")
        if cfg.schedule not in SCHEDULE_NAMES:
            raise UsageError(f"unknown schedule {cfg.schedule!r}")
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"srtool: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"srtool: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
