"""Image quality measures, bicubic resampling and the seam index.

Conventions: images are ``(C, H, W)`` or ``(H, W)`` arrays. Float images
are in the unit range unless a ``data_range`` says otherwise; integer
images hold raw levels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError

INF = math.inf


def _peak_scale(y, bits, data_range):
    peak = 2 ** bits - 1
    if data_range is None:
        data_range = peak if np.issubdtype(np.asarray(y).dtype, np.integer) else 1.0
    return peak, peak / data_range


def psnr(y, y_hat, bits: int = 8, data_range=None) -> float:
    """Peak signal-to-noise ratio in dB, ``10 log10((2^n - 1)^2 / MSE)``.

    The MSE is taken after mapping both images onto ``[0, 2^n - 1]``; with
    ``data_range=None`` float inputs are assumed to span ``[0, 1]`` and
    integer inputs to be levels already. Identical images give ``INF``.
    """
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise ShapeError(f"psnr: shapes {y.shape} and {y_hat.shape} differ")
    peak, scale = _peak_scale(y, bits, data_range)
    d = (y.astype(np.float64) - y_hat.astype(np.float64)) * scale
    err = float(np.mean(d * d))
    if err == 0:
        return INF
    return 10.0 * math.log10(peak * peak / err)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    v = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(v, len(g), axis=1) @ g


def ssim(y, y_hat, data_range: float = 255.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity of two grayscale images.

    Gaussian-weighted local statistics over every full ``window x window``
    position (no border padding).
    """
    x = np.asarray(y, dtype=np.float64)
    z = np.asarray(y_hat, dtype=np.float64)
    if x.ndim != 2 or x.shape != z.shape:
        raise ShapeError(f"ssim expects two equal 2-D images, got {x.shape} and {z.shape}")
    if min(x.shape) < window:
        raise ShapeError(f"image {x.shape} is smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_x = _filter_valid(x, g)
    mu_z = _filter_valid(z, g)
    var_x = _filter_valid(x * x, g) - mu_x * mu_x
    var_z = _filter_valid(z * z, g) - mu_z * mu_z
    cov = _filter_valid(x * z, g) - mu_x * mu_z
    num = (2 * mu_x * mu_z + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_z * mu_z + c1) * (var_x + var_z + c2)
    return float(np.mean(num / den))


def to_luma(rgb, studio: bool = False) -> np.ndarray:
    """BT.601 luma of a ``(3, H, W)`` image.

    Full range: ``Y = 0.299 R + 0.587 G + 0.114 B`` in the input's own units.
    ``studio=True`` gives the 16..235 video-range Y used by the classic SR
    benchmark scripts; inputs must then be on the 0..255 scale.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"to_luma expects a (3,H,W) image, got shape {rgb.shape}")
    r, g, b = rgb
    if studio:
        return 16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0
    return 0.299 * r + 0.587 * g + 0.114 * b


# -- bicubic ------------------------------------------------------------------

def cubic(x, a: float = -0.5):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, scale: float, a: float = -0.5,
                  antialias: bool = True) -> np.ndarray:
    """Dense ``(out_len, in_len)`` resampling matrix along one axis.

    Output sample ``i`` sits at input coordinate ``(i + 0.5) / scale - 0.5``;
    out-of-range taps are clamped to the edge sample. When shrinking with
    ``antialias`` the kernel is stretched by ``1/scale``.
    """
    shrink = antialias and scale < 1
    width = 4.0 / scale if shrink else 4.0
    u = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2).astype(np.int64)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    w = scale * cubic(scale * dist, a) if shrink else cubic(dist, a)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1)
    m = np.zeros((out_len, in_len))
    np.add.at(m, (np.repeat(np.arange(out_len), taps), idx.ravel()), w.ravel())
    return m


def bicubic_resize(image, scale, out_shape=None, a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """Separable cubic-convolution resize of a ``(C, H, W)`` or ``(H, W)`` image.

    Output extents are ``ceil(H * scale)`` unless ``out_shape`` fixes them.
    ``scale`` may be a float or a :class:`fractions.Fraction`.
    """
    img = np.asarray(image, dtype=np.float64)
    scale = float(scale)
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    h, w = img.shape[-2:]
    if out_shape is None:
        # the tiny epsilon keeps e.g. 85 * 3.0000000001 from rounding up
        out_shape = (int(math.ceil(h * scale - 1e-9)), int(math.ceil(w * scale - 1e-9)))
    oh, ow = out_shape
    if oh < 1 or ow < 1:
        raise ShapeError(f"resize of {h}x{w} by {scale} gives an empty image")
    mh = resize_matrix(h, oh, scale, a, antialias)
    mw = resize_matrix(w, ow, scale, a, antialias)
    return np.matmul(np.matmul(mh, img), mw.T)


def quantize(image, levels: int = 255) -> np.ndarray:
    """Clamp a unit-range image and round half up to integer levels (uint8 for 255)."""
    v = np.floor(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * levels + 0.5)
    return v.astype(np.uint8 if levels <= 255 else np.uint16)


# -- seams ----------------------------------------------------------------------

def _pair_diffs(image, t):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ShapeError(f"expected a (C,H,W) or (H,W) image, got shape {np.shape(image)}")
    h, w = img.shape[1:]
    if t < 1 or t >= min(h, w):
        raise ShapeError(f"tile size {t} must be in [1, {min(h, w) - 1}] for a {h}x{w} image")
    dx = np.abs(np.diff(img, axis=2))  # pair (j, j+1)
    dy = np.abs(np.diff(img, axis=1))
    bx = (np.arange(1, w) % t) == 0
    by = (np.arange(1, h) % t) == 0
    return dx, dy, bx, by


def seam_index(image, t: int, eps: float = 1e-6) -> float:
    """Boundary-to-interior ratio of adjacent-pixel differences.

    Pairs straddling a tile boundary (column or row index a multiple of
    ``t`` and its predecessor) are compared with all other adjacent pairs.
    About 1 means boundaries look like the interior; much larger means
    visible seams.
    """
    dx, dy, bx, by = _pair_diffs(image, t)
    boundary = np.concatenate([dx[:, :, bx].ravel(), dy[:, by, :].ravel()])
    interior = np.concatenate([dx[:, :, ~bx].ravel(), dy[:, ~by, :].ravel()])
    b = boundary.mean() if boundary.size else 0.0
    a = interior.mean() if interior.size else 0.0
    return float(b / (a + eps))


def seam_heatmap(image, t: int) -> np.ndarray:
    """``(H, W)`` map of boundary-pair differences (channel mean), zero elsewhere."""
    dx, dy, bx, by = _pair_diffs(image, t)
    h, w = dy.shape[1] + 1, dx.shape[2] + 1
    heat = np.zeros((h, w))
    cols = np.nonzero(bx)[0] + 1
    rows = np.nonzero(by)[0] + 1
    heat[:, cols] = np.maximum(heat[:, cols], dx[:, :, bx].mean(axis=0))
    heat[rows, :] = np.maximum(heat[rows, :], dy[:, by, :].mean(axis=0))
    return heat


# -- reports --------------------------------------------------------------------

def _fmt(v: float) -> str:
    return "inf" if v == INF else repr(float(v))


def _parse(v) -> float:
    return INF if v == "inf" else float(v)


@dataclass
class QualityReport:
    rows: list[tuple[str, float, float]] = field(default_factory=list)
    color_space: str = "Y"
    shave: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)

    def add(self, image: str, psnr_db: float, ssim_value: float) -> None:
        self.rows.append((image, float(psnr_db), float(ssim_value)))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else math.nan

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "psnr_db", "ssim"])
            for name, p, s in self.rows:
                writer.writerow([name, _fmt(p), _fmt(s)])

    @classmethod
    def from_csv(cls, path, **kwargs) -> "QualityReport":
        with open(path, newline="") as fh:
            rows = [(r["image"], _parse(r["psnr_db"]), _parse(r["ssim"])) for r in csv.DictReader(fh)]
        return cls(rows=rows, **kwargs)

    def to_dict(self) -> dict:
        return {
            "color_space": self.color_space,
            "shave": self.shave,
            "images": [{"image": n, "psnr_db": _fmt(p), "ssim": _fmt(s)} for n, p, s in self.rows],
            "mean_psnr_db": _fmt(self.mean_psnr) if self.rows else None,
            "mean_ssim": _fmt(self.mean_ssim) if self.rows else None,
            "failures": [{"image": n, "error": e} for n, e in self.failures],
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "QualityReport":
        d = json.loads(Path(path).read_text())
        rows = [(r["image"], _parse(r["psnr_db"]), _parse(r["ssim"])) for r in d["images"]]
        failures = [(f["image"], f["error"]) for f in d.get("failures", [])]
        return cls(rows=rows, color_space=d["color_space"], shave=d["shave"], failures=failures)
