"""Dense tensors and the differentiable primitives the network is built from.

Tensors are plain numpy arrays in row-major ``(N, C, H, W)`` layout; the batch
axis is optional everywhere, so ``(C, H, W)`` inputs come back without one.
Every operation is a pure function of its arguments and returns a new array.

Convolution is cross-correlation (no kernel flip) in "valid" mode. It is
computed as a sum over kernel offsets of ``(C_out, C_in) @ (C_in, N*H'*W')``
matrix products, which keeps peak memory at one shifted copy of the input
instead of a full im2col buffer. Small problems, where that buffer is cheap,
use a single im2col product instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# largest im2col buffer the forward pass will build
_IM2COL_BYTES = 16 << 20


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


@dataclass
class ConvKernel:
    """Weights ``(C_out, C_in, k1, k2)``, bias ``(C_out,)`` and stride ``(s1, s2)``."""

    weights: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int] = field(default=(1, 1))

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 4:
            raise ShapeError(f"kernel weights must be rank 4, got rank {self.weights.ndim}")
        c_out, _, k1, k2 = self.weights.shape
        if k1 < 1 or k2 < 1:
            raise ShapeError(f"kernel extents must be >= 1, got ({k1}, {k2})")
        if self.bias.shape != (c_out,):
            raise ShapeError(f"bias must have shape ({c_out},), got {self.bias.shape}")
        if isinstance(self.stride, int):
            self.stride = (self.stride, self.stride)
        self.stride = (int(self.stride[0]), int(self.stride[1]))
        if min(self.stride) < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("kernel weights must be finite")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


def conv_output_size(n: int, k: int, s: int = 1) -> int:
    """Extent of a valid convolution along one axis."""
    return (n - k) // s + 1


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected a (C,H,W) or (N,C,H,W) tensor, got rank {x.ndim}")


def _check_conv(xb, kernel):
    _, c, h, w = xb.shape
    k1, k2 = kernel.size
    if c != kernel.in_channels:
        raise ShapeError(f"channel axis: input has {c} channels, kernel expects {kernel.in_channels}")
    if h < k1:
        raise ShapeError(f"height axis: input height {h} is smaller than kernel height {k1}")
    if w < k2:
        raise ShapeError(f"width axis: input width {w} is smaller than kernel width {k2}")


def conv2d_valid(x, kernel: ConvKernel) -> np.ndarray:
    """Valid-mode strided cross-correlation.

    ``out[o, i, j] = bias[o] + sum_{c,a,b} x[c, i*s1 + a, j*s2 + b] * w[o, c, a, b]``
    """
    xb, single = _batched(x)
    _check_conv(xb, kernel)
    n, c, h, w = xb.shape
    k1, k2 = kernel.size
    s1, s2 = kernel.stride
    ho, wo = conv_output_size(h, k1, s1), conv_output_size(w, k2, s2)
    dtype = np.result_type(xb.dtype, kernel.weights.dtype)

    if c * k1 * k2 * n * ho * wo * np.dtype(dtype).itemsize <= _IM2COL_BYTES:
        # small outputs: one big matmul beats many thin ones
        win = sliding_window_view(xb, (k1, k2), axis=(2, 3))[:, :, ::s1, ::s2]
        col = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k1 * k2, -1)
        out = kernel.weights.reshape(kernel.out_channels, -1).astype(dtype, copy=False) @ col
    else:
        xc = xb.transpose(1, 0, 2, 3)
        # (k1, k2, C_out, C_in) so each offset's matrix is contiguous for BLAS
        wt = np.ascontiguousarray(kernel.weights.transpose(2, 3, 0, 1), dtype=dtype)
        out = np.zeros((kernel.out_channels, n * ho * wo), dtype=dtype)
        for a in range(k1):
            for b in range(k2):
                patch = xc[:, :, a:a + (ho - 1) * s1 + 1:s1, b:b + (wo - 1) * s2 + 1:s2]
                out += wt[a, b] @ patch.reshape(c, -1)
    out += kernel.bias.astype(dtype, copy=False)[:, None]
    out = np.ascontiguousarray(out.reshape(-1, n, ho, wo).transpose(1, 0, 2, 3))
    return out[0] if single else out


def conv2d_backward(x, kernel: ConvKernel, grad_out, need_input_grad: bool = True):
    """Gradients of :func:`conv2d_valid` with respect to input, weights and bias.

    Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is None
    when ``need_input_grad`` is False (first layer of a network).
    """
    xb, single = _batched(x)
    _check_conv(xb, kernel)
    gb, g_single = _batched(grad_out)
    n, c, h, w = xb.shape
    k1, k2 = kernel.size
    s1, s2 = kernel.stride
    ho, wo = conv_output_size(h, k1, s1), conv_output_size(w, k2, s2)
    expected = (n, kernel.out_channels, ho, wo)
    if gb.shape != expected or single != g_single:
        raise ShapeError(f"grad_out has shape {np.shape(grad_out)}, expected {expected[single:]}")
    dtype = np.result_type(xb.dtype, kernel.weights.dtype, gb.dtype)

    xc = xb.transpose(1, 0, 2, 3)
    go = np.ascontiguousarray(gb.transpose(1, 0, 2, 3)).reshape(kernel.out_channels, -1).astype(dtype, copy=False)
    wt = np.ascontiguousarray(kernel.weights.transpose(2, 3, 1, 0), dtype=dtype)
    grad_w = np.empty((k1, k2) + kernel.weights.shape[:2], dtype=dtype)
    grad_xc = np.zeros((c, n, h, w), dtype=dtype) if need_input_grad else None
    for a in range(k1):
        for b in range(k2):
            rows = slice(a, a + (ho - 1) * s1 + 1, s1)
            cols = slice(b, b + (wo - 1) * s2 + 1, s2)
            grad_w[a, b] = go @ xc[:, :, rows, cols].reshape(c, -1).T
            if need_input_grad:
                grad_xc[:, :, rows, cols] += (wt[a, b] @ go).reshape(c, n, ho, wo)
    grad_w = np.ascontiguousarray(grad_w.transpose(2, 3, 0, 1))
    grad_b = go.sum(axis=1)

    grad_x = None
    if need_input_grad:
        grad_x = np.ascontiguousarray(grad_xc.transpose(1, 0, 2, 3))
        if single:
            grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


def relu(t) -> np.ndarray:
    return np.maximum(t, 0)


def relu_backward(t, grad_out) -> np.ndarray:
    """Pass gradient where ``t > 0``; the subgradient at exactly 0 is 0."""
    t = np.asarray(t)
    grad_out = np.asarray(grad_out)
    if t.shape != grad_out.shape:
        raise ShapeError(f"relu_backward: shapes {t.shape} and {grad_out.shape} differ")
    return np.where(t > 0, grad_out, np.zeros((), dtype=grad_out.dtype))


def add(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return a + b


def mse(y, y_hat) -> float:
    """Mean of squared elementwise differences."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeError(f"mse: shapes {y.shape} and {y_hat.shape} differ")
    d = y - y_hat
    return float(np.mean(d * d))
