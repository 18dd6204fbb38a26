"""Same-size padding geometry and border fill.

A valid convolution with kernel ``(k1, k2)`` and stride ``(s1, s2)`` applied to
an input of extent ``(s1*h + k1 - 1, s2*w + k2 - 1)`` returns exactly
``(h, w)`` outputs. :func:`same_pad_spec` computes how much border that takes
and :func:`pad` fills it, either with zeros or by edge-inclusive mirror
reflection (the border row next to the edge repeats the edge row, numpy's
``"symmetric"`` mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ConvKernel, ShapeError

MODES = ("mirror", "zero")


@dataclass(frozen=True)
class PadSpec:
    top: int
    bottom: int
    left: int
    right: int
    mode: str = "mirror"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown pad mode {self.mode!r}; expected one of {MODES}")
        if min(self.top, self.bottom, self.left, self.right) < 0:
            raise ValueError("pad amounts must be non-negative")

    def padded_size(self, h: int, w: int) -> tuple[int, int]:
        return h + self.top + self.bottom, w + self.left + self.right

    def check_source(self, h: int, w: int) -> None:
        """Reject mirror specs that would reflect past the far side of the source."""
        if self.mode != "mirror":
            return
        if max(self.top, self.bottom) > h:
            raise ShapeError(
                f"height axis: mirror pad ({self.top}, {self.bottom}) exceeds source height {h}; "
                "kernel too large for tile")
        if max(self.left, self.right) > w:
            raise ShapeError(
                f"width axis: mirror pad ({self.left}, {self.right}) exceeds source width {w}; "
                "kernel too large for tile")


def _split(total: int) -> tuple[int, int]:
    # odd totals put the extra pixel at the bottom/right
    return total // 2, total - total // 2


def same_pad_spec(h: int, w: int, kernel, mode: str = "mirror", stride=None) -> PadSpec:
    """Padding that makes a valid convolution return an ``(h, w)`` output.

    ``kernel`` is a :class:`ConvKernel`, or a kernel size (int or pair) with
    ``stride`` given separately (default 1).
    """
    if h < 1 or w < 1:
        raise ValueError(f"source extents must be >= 1, got ({h}, {w})")
    if isinstance(kernel, ConvKernel):
        (k1, k2), (s1, s2) = kernel.size, kernel.stride
    else:
        k1, k2 = (kernel, kernel) if np.isscalar(kernel) else kernel
        stride = 1 if stride is None else stride
        s1, s2 = (stride, stride) if np.isscalar(stride) else stride
    top, bottom = _split((s1 - 1) * h + k1 - 1)
    left, right = _split((s2 - 1) * w + k2 - 1)
    spec = PadSpec(top, bottom, left, right, mode)
    spec.check_source(h, w)
    return spec


def pad(t, spec: PadSpec) -> np.ndarray:
    """Pad the last two axes of ``t`` according to ``spec``."""
    t = np.asarray(t)
    if t.ndim < 2:
        raise ShapeError(f"pad expects at least 2 axes, got {t.ndim}")
    spec.check_source(t.shape[-2], t.shape[-1])
    widths = [(0, 0)] * (t.ndim - 2) + [(spec.top, spec.bottom), (spec.left, spec.right)]
    if spec.mode == "zero":
        return np.pad(t, widths, mode="constant")
    return np.pad(t, widths, mode="symmetric")


def _fold_axis(g, before, after, axis):
    """Adjoint of edge-inclusive mirror padding along one axis."""
    g = np.moveaxis(g, axis, -1)
    n = g.shape[-1] - before - after
    out = g[..., before:before + n].copy()
    if before:
        out[..., :before] += g[..., :before][..., ::-1]
    if after:
        out[..., n - after:] += g[..., before + n:][..., ::-1]
    return np.moveaxis(out, -1, axis)


def pad_backward(spec: PadSpec, grad_out) -> np.ndarray:
    """Gradient of :func:`pad` with respect to its input.

    Zero mode crops; mirror mode sums each border gradient into the source
    element it was reflected from.
    """
    g = np.asarray(grad_out)
    if g.ndim < 2:
        raise ShapeError(f"pad_backward expects at least 2 axes, got {g.ndim}")
    h = g.shape[-2] - spec.top - spec.bottom
    w = g.shape[-1] - spec.left - spec.right
    if h < 1 or w < 1:
        raise ShapeError(f"grad_out extents {g.shape[-2:]} are smaller than the padding of {spec}")
    if spec.mode == "zero":
        return g[..., spec.top:spec.top + h, spec.left:spec.left + w].copy()
    spec.check_source(h, w)
    g = _fold_axis(g, spec.top, spec.bottom, g.ndim - 2)
    return _fold_axis(g, spec.left, spec.right, g.ndim - 1)
