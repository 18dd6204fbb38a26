"""Residual super-resolution network with padding before every convolution.

Layer stack (all stride 1, every conv preceded by a pad):

    conv0 (3 -> F) + ReLU                      = h0
    n residual blocks: h <- h + conv2(P(relu(conv1(P(h)))))
    conv_skip (F -> F), summed with h0         = s
    conv_e1 (F -> E) + ReLU
    conv_e2 (E -> E) + ReLU
    conv_out (E -> 3), linear

With ``pad_mode`` mirror or zero each layer keeps the spatial extent, so the
network maps a ``(3, H, W)`` image to a ``(3, H, W)`` image for any ``H, W``
large enough for the mirror reflection. ``valid`` mode drops the padding
(ablation only); skip sums then center-crop the longer branch.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .padding import pad, pad_backward, same_pad_spec
from .tensor import ConvKernel, ShapeError, conv2d_backward, conv2d_valid, relu

PAD_MODES = ("mirror", "zero", "valid")

MAGIC = b"SRW1"
FORMAT_VERSION = 1


class WeightFileError(ValueError):
    """Base class for weight-file problems."""


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ShapeMismatchError(WeightFileError):
    pass


@dataclass
class ModelConfig:
    tile_size: int = 33
    channels_in: int = 3
    feature_width: int = 64
    expansion_width: int = 256
    n_residual_blocks: int = 5
    kernel_size: int = 7
    pad_mode: str = "mirror"
    seed: int = 0
    # start each residual branch and the long-skip conv at zero (identity blocks)
    zero_init_residual: bool = True

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.n_residual_blocks < 1:
            raise ValueError(f"n_residual_blocks must be >= 1, got {self.n_residual_blocks}")
        if self.pad_mode not in PAD_MODES:
            raise ValueError(f"pad_mode must be one of {PAD_MODES}, got {self.pad_mode!r}")
        for name in ("tile_size", "channels_in", "feature_width", "expansion_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Layer:
    name: str
    kernel: ConvKernel
    activation: bool


def layer_plan(cfg: ModelConfig) -> list[tuple[str, int, int, bool]]:
    """``(name, c_in, c_out, relu)`` for every conv, in forward order."""
    f, e = cfg.feature_width, cfg.expansion_width
    plan = [("conv0", cfg.channels_in, f, True)]
    for i in range(1, cfg.n_residual_blocks + 1):
        plan.append((f"block{i}.conv1", f, f, True))
        plan.append((f"block{i}.conv2", f, f, False))
    plan += [
        ("conv_skip", f, f, False),
        ("conv_e1", f, e, True),
        ("conv_e2", e, e, True),
        ("conv_out", e, cfg.channels_in, False),
    ]
    return plan


class Model:
    """Ordered conv layers plus the config that fixes how they are wired."""

    def __init__(self, config: ModelConfig, layers: list[Layer]):
        self.config = config
        self.layers = layers
        self._by_name = {layer.name: layer for layer in layers}
        expected = [(name, ci, co) for name, ci, co, _ in layer_plan(config)]
        got = [(l.name, l.kernel.in_channels, l.kernel.out_channels) for l in layers]
        if got != expected:
            raise ShapeError("layer stack does not match the configured architecture")

    def __getitem__(self, name: str) -> Layer:
        return self._by_name[name]

    @property
    def dtype(self):
        return self.layers[0].kernel.weights.dtype

    def blocks(self) -> list[tuple[Layer, Layer]]:
        n = self.config.n_residual_blocks
        return [(self[f"block{i}.conv1"], self[f"block{i}.conv2"]) for i in range(1, n + 1)]

    def astype(self, dtype) -> "Model":
        """Copy with weights converted to ``dtype`` (float64 for gradient checks)."""
        layers = [
            Layer(l.name, ConvKernel(l.kernel.weights.astype(dtype), l.kernel.bias.astype(dtype),
                                     l.kernel.stride), l.activation)
            for l in self.layers
        ]
        return Model(copy.deepcopy(self.config), layers)

    def copy(self) -> "Model":
        return self.astype(self.dtype)

    def parameters(self):
        """Yield ``(name, weights, bias)`` with the live arrays."""
        for l in self.layers:
            yield l.name, l.kernel.weights, l.kernel.bias

    def n_parameters(self) -> int:
        return sum(w.size + b.size for _, w, b in self.parameters())


def build_model(cfg: ModelConfig | None = None) -> Model:
    """Instantiate the layer stack with seeded He-normal weights and zero biases."""
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(cfg.seed)
    k = cfg.kernel_size
    layers = []
    for name, c_in, c_out, act in layer_plan(cfg):
        std = np.sqrt(2.0 / (c_in * k * k))
        w = rng.normal(0.0, std, size=(c_out, c_in, k, k)).astype(np.float32)
        if cfg.zero_init_residual and (name.endswith(".conv2") or name == "conv_skip"):
            w[...] = 0
        layers.append(Layer(name, ConvKernel(w, np.zeros(c_out, dtype=np.float32)), act))
    return Model(cfg, layers)


def identity_model(cfg: ModelConfig | None = None) -> Model:
    """A model whose forward map is exactly the identity on non-negative images.

    Each conv on the main path is a centered delta routing the first
    ``channels_in`` channels straight through; residual branches and the long
    skip are zero. Used as a pass-through oracle for the tiling pipeline.
    """
    cfg = cfg or ModelConfig()
    k, c = cfg.kernel_size, cfg.channels_in
    layers = []
    for name, c_in, c_out, act in layer_plan(cfg):
        w = np.zeros((c_out, c_in, k, k), dtype=np.float32)
        if not (name.endswith(".conv2") or name.endswith(".conv1") or name == "conv_skip"):
            for i in range(min(c, c_in, c_out)):
                w[i, i, k // 2, k // 2] = 1.0
        layers.append(Layer(name, ConvKernel(w, np.zeros(c_out, dtype=np.float32)), act))
    return Model(cfg, layers)


# -- forward / backward -----------------------------------------------------

def _center_crop(a, shape_hw):
    h, w = a.shape[-2:]
    th, tw = shape_hw
    top, left = (h - th) // 2, (w - tw) // 2
    return a[..., top:top + th, left:left + tw]


def _skip_sum(a, b):
    # a is the shorter branch in valid mode
    if a.shape[-2:] != b.shape[-2:]:
        b = _center_crop(b, a.shape[-2:])
    return a + b


def _uncrop(g, shape):
    """Adjoint of :func:`_center_crop`: embed ``g`` back into zeros of ``shape``."""
    if g.shape == tuple(shape):
        return g
    out = np.zeros(shape, dtype=g.dtype)
    _center_crop(out, g.shape[-2:])[...] = g
    return out


class _Tape:
    """Per-layer activations kept for the backward pass."""

    def __init__(self):
        self.padded = {}
        self.specs = {}
        self.outputs = {}
        self.shapes = {}


def _apply(model, layer, x, tape):
    mode = model.config.pad_mode
    spec = None
    xp = x
    if mode != "valid":
        spec = same_pad_spec(x.shape[-2], x.shape[-1], layer.kernel, mode)
        xp = pad(x, spec)
    y = conv2d_valid(xp, layer.kernel)
    if layer.activation:
        y = relu(y)
    if tape is not None:
        tape.padded[layer.name] = xp
        tape.specs[layer.name] = spec
        tape.outputs[layer.name] = y
    return y


def _layer_backward(model, layer, tape, grad, need_input_grad=True):
    if layer.activation:
        grad = np.where(tape.outputs[layer.name] > 0, grad, 0).astype(grad.dtype, copy=False)
    gx, gw, gb = conv2d_backward(tape.padded[layer.name], layer.kernel, grad, need_input_grad)
    spec = tape.specs[layer.name]
    if gx is not None and spec is not None:
        gx = pad_backward(spec, gx)
    return gx, gw, gb


def residual_block_forward(model: Model, block, x, tape=None) -> np.ndarray:
    """``x + conv2(P(relu(conv1(P(x)))))`` for ``block = (conv1, conv2)``."""
    conv1, conv2 = block
    r = _apply(model, conv2, _apply(model, conv1, x, tape), tape)
    return _skip_sum(r, x)


def _run(model: Model, x, tape=None, hook=None):
    def emit(name, value):
        if hook is not None:
            hook(name, value)
        return value

    h0 = emit("conv0", _apply(model, model["conv0"], x, tape))
    h = h0
    for i, block in enumerate(model.blocks(), start=1):
        if tape is not None:
            tape.shapes[f"block{i}.in"] = h.shape
        h = emit(f"block{i}", residual_block_forward(model, block, h, tape))
    if tape is not None:
        tape.shapes["blocks.out"] = h.shape
    s = emit("skip_sum", _skip_sum(_apply(model, model["conv_skip"], h, tape), h0))
    e = emit("conv_e1", _apply(model, model["conv_e1"], s, tape))
    e = emit("conv_e2", _apply(model, model["conv_e2"], e, tape))
    return emit("conv_out", _apply(model, model["conv_out"], e, tape))


def _check_input(model, x):
    x = np.asarray(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected a (3,H,W) or (N,3,H,W) image, got shape {x.shape}")
    c = x.shape[-3]
    if c != model.config.channels_in:
        raise ShapeError(f"channel axis: input has {c} channels, model expects {model.config.channels_in}")
    return x


def forward(model: Model, x, hook=None) -> np.ndarray:
    """Run the network. ``hook(name, tensor)`` sees every intermediate stage."""
    x = _check_input(model, x)
    return _run(model, x, hook=hook)


def forward_with_tape(model: Model, x):
    x = _check_input(model, x)
    tape = _Tape()
    out = _run(model, x, tape=tape)
    return out, tape


def backward(model: Model, x, grad_out, tape=None, need_input_grad=False):
    """Reverse-mode gradients for every layer.

    Returns ``{layer name: (grad_weights, grad_bias)}``; with
    ``need_input_grad`` the gradient with respect to ``x`` is stored under
    the key ``"input"``. Pass the tape from :func:`forward_with_tape` to avoid
    recomputing the forward pass.
    """
    if tape is None:
        out, tape = forward_with_tape(model, x)
    else:
        out = tape.outputs["conv_out"]
    grad_out = np.asarray(grad_out)
    if grad_out.shape != out.shape:
        raise ShapeError(f"grad_out has shape {grad_out.shape}, expected {out.shape}")
    grads = {}

    def back(name, g, need=True):
        gx, gw, gb = _layer_backward(model, model[name], tape, g, need)
        grads[name] = (gw, gb)
        return gx

    g = back("conv_out", grad_out)
    g = back("conv_e2", g)
    g_s = back("conv_e1", g)

    # s = crop(conv_skip(h)) + crop(h0): the sum's gradient feeds both branches
    h0_shape = tape.outputs["conv0"].shape
    skip_shape = tape.outputs["conv_skip"].shape
    g_h0 = _uncrop(g_s, h0_shape)
    g_h = back("conv_skip", _uncrop(g_s, skip_shape))
    g_h = _uncrop(g_h, tape.shapes["blocks.out"])

    for i in range(model.config.n_residual_blocks, 0, -1):
        in_shape = tape.shapes[f"block{i}.in"]
        r_shape = tape.outputs[f"block{i}.conv2"].shape
        g_r = back(f"block{i}.conv2", _uncrop(g_h, r_shape))
        g_r = back(f"block{i}.conv1", g_r)
        g_h = _uncrop(g_h, in_shape) + g_r

    g_h0 = g_h0 + _uncrop(g_h, h0_shape)
    gx = back("conv0", g_h0, need=need_input_grad)
    if need_input_grad:
        grads["input"] = gx
    return grads


# -- weight file -------------------------------------------------------------

def save_weights(model: Model, path) -> None:
    """Write the SRW1 little-endian weight file (weights stored as float32)."""
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(model.layers))]
    for name, w, b in model.parameters():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", w.ndim) + struct.pack(f"<{w.ndim}I", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"truncated weight file: needed {n} bytes for {what} at offset {self.pos}, "
                f"only {len(self.data) - self.pos} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def read_weight_file(path) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Parse an SRW1 file into ``(name, weights, bias)`` records."""
    r = _Reader(Path(path).read_bytes())
    if len(r.data) < 4 or r.data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a weight file (bad magic bytes)")
    r.pos = 4
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: weight format version {version}, expected {FORMAT_VERSION}")
    records = []
    for _ in range(r.u32("layer count")):
        name = r.take(r.u32("name length"), "layer name").decode("utf-8")
        rank = r.u32("rank")
        shape = tuple(r.u32("extent") for _ in range(rank))
        count = int(np.prod(shape))
        w = np.frombuffer(r.take(4 * count, f"{name} weights"), dtype="<f4").reshape(shape)
        c_out = shape[0] if rank else 1
        b = np.frombuffer(r.take(4 * c_out, f"{name} bias"), dtype="<f4")
        records.append((name, w.astype(np.float32), b.astype(np.float32)))
    if r.pos != len(r.data):
        raise WeightFileError(f"{path}: {len(r.data) - r.pos} trailing bytes after last layer")
    return records


def infer_config(records, **overrides) -> ModelConfig:
    """Recover the architecture hyperparameters from weight shapes."""
    shapes = {name: w.shape for name, w, _ in records}
    try:
        c0 = shapes["conv0"]
        e1 = shapes["conv_e1"]
    except KeyError as exc:
        raise ShapeMismatchError(f"weight file lacks layer {exc.args[0]}") from None
    n_blocks = sum(1 for name in shapes if name.endswith(".conv1"))
    fields = dict(channels_in=c0[1], feature_width=c0[0], expansion_width=e1[0],
                  n_residual_blocks=n_blocks, kernel_size=c0[2])
    fields.update(overrides)
    return ModelConfig(**fields)


def load_weights(path, config: ModelConfig | None = None, pad_mode: str | None = None) -> Model:
    """Load an SRW1 file.

    Without ``config`` the architecture is inferred from the stored shapes;
    with one, every layer must match it exactly.
    """
    records = read_weight_file(path)
    if config is None:
        config = infer_config(records, **({"pad_mode": pad_mode} if pad_mode else {}))
    elif pad_mode:
        config = replace(config, pad_mode=pad_mode)
    plan = layer_plan(config)
    k = config.kernel_size
    if len(records) != len(plan):
        raise ShapeMismatchError(
            f"{path}: file has {len(records)} layers, config expects {len(plan)}")
    layers = []
    for (name, w, b), (want, c_in, c_out, act) in zip(records, plan):
        if name != want or w.shape != (c_out, c_in, k, k):
            raise ShapeMismatchError(
                f"{path}: layer {name!r} {w.shape} does not match config layer {want!r} "
                f"{(c_out, c_in, k, k)}")
        layers.append(Layer(name, ConvKernel(w, b), act))
    return Model(config, layers)
