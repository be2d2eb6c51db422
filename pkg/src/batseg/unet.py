"""From-scratch 3D U-Net: three pooling levels, skip connections, sigmoid head.

Encoder blocks conv1..conv3 double the filter count per level, conv4 is the
bottleneck, decoder blocks conv5..conv7 halve it again while consuming the
concatenated encoder activations, and conv8 is a 1x1x1 projection to a single
probability channel. Every block is two 3x3x3 convolutions with ReLU.

Forward/backward run on raw float64 arrays through :mod:`batseg.kernels`;
the Volume-typed wrappers below are the public single-op surface.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CheckpointError, InvalidConfigError, ShapeError
from .volume import Shape3, Volume

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class UNetConfig:
    input_shape: Shape3
    base_filters: int = 4
    depth: int = 3
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "input_shape", Shape3(*self.input_shape).validate())
        if self.depth != 3:
            raise InvalidConfigError("architecture is fixed at 3 pooling levels")
        if self.base_filters < 1:
            raise InvalidConfigError("base_filters must be >= 1")
        if self.in_channels != 1 or self.out_channels != 1:
            raise InvalidConfigError("model is single-channel in and out")
        divisor = 2**self.depth
        if any(s % divisor for s in self.input_shape):
            raise InvalidConfigError(
                f"input shape {tuple(self.input_shape)} must be divisible by {divisor}"
            )

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "base_filters": self.base_filters,
            "depth": self.depth,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(
            input_shape=Shape3(*d["input_shape"]),
            base_filters=int(d["base_filters"]),
            depth=int(d["depth"]),
            in_channels=int(d["in_channels"]),
            out_channels=int(d["out_channels"]),
        )


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out_ch, in_ch, k, k, k)
    bias: np.ndarray  # (out_ch,)

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


def _block_channels(base_filters: int) -> dict[str, tuple[int, int]]:
    f = base_filters
    return {
        "conv1": (1, f),
        "conv2": (f, 2 * f),
        "conv3": (2 * f, 4 * f),
        "conv4": (4 * f, 8 * f),
        "conv5": (8 * f + 4 * f, 4 * f),
        "conv6": (4 * f + 2 * f, 2 * f),
        "conv7": (2 * f + f, f),
        "conv8": (f, 1),
    }


def layer_names(cfg: UNetConfig) -> list[str]:
    """Parameter layer names in fixed serialization order."""
    names = []
    for block in ("conv1", "conv2", "conv3", "conv4", "conv5", "conv6", "conv7"):
        names.extend([f"{block}a", f"{block}b"])
    names.append("conv8")
    return names


def _layer_shapes(cfg: UNetConfig) -> dict[str, tuple[int, int, int]]:
    """name -> (in_ch, out_ch, kernel_size)."""
    chans = _block_channels(cfg.base_filters)
    shapes = {}
    for block in ("conv1", "conv2", "conv3", "conv4", "conv5", "conv6", "conv7"):
        cin, cout = chans[block]
        shapes[f"{block}a"] = (cin, cout, 3)
        shapes[f"{block}b"] = (cout, cout, 3)
    shapes["conv8"] = (chans["conv8"][0], 1, 1)
    return shapes


@dataclass
class UNetModel:
    """Architecture config, all layer parameters, and Adam optimizer state.

    A model instance is single-writer: training mutates it in place, while
    inference on an unchanging model is safe from any number of threads.
    """

    config: UNetConfig
    layers: dict[str, ConvLayer]
    adam_m: dict[str, tuple[np.ndarray, np.ndarray]] = field(repr=False, default_factory=dict)
    adam_v: dict[str, tuple[np.ndarray, np.ndarray]] = field(repr=False, default_factory=dict)
    adam_step: int = 0

    def param_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name in layer_names(self.config):
            out.append((f"{name}.weights", self.layers[name].weights))
            out.append((f"{name}.bias", self.layers[name].bias))
        return out


def init_model(cfg: UNetConfig, seed: int) -> UNetModel:
    """He-style fan-in initialization, zero biases; bitwise-deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = {}
    adam_m = {}
    adam_v = {}
    for name, (cin, cout, k) in _layer_shapes(cfg).items():
        fan_in = cin * k**3
        scale = np.sqrt(2.0 / fan_in)
        w = rng.standard_normal((cout, cin, k, k, k)) * scale
        b = np.zeros(cout, dtype=np.float64)
        layers[name] = ConvLayer(w, b)
        adam_m[name] = (np.zeros_like(w), np.zeros_like(b))
        adam_v[name] = (np.zeros_like(w), np.zeros_like(b))
    return UNetModel(cfg, layers, adam_m, adam_v, adam_step=0)


# ---------------------------------------------------------------------------
# Volume-typed single ops
# ---------------------------------------------------------------------------

def conv3d_forward(x: Volume, layer: ConvLayer) -> Volume:
    out = kernels.conv3d_forward(x.data, layer.weights, layer.bias)
    return Volume(x.shape, layer.out_channels, out)


def relu(x: Volume) -> Volume:
    return Volume(x.shape, x.channels, np.maximum(x.data, 0.0))


def sigmoid(x: Volume) -> Volume:
    return Volume(x.shape, x.channels, _sigmoid_array(x.data))


def maxpool3d(x: Volume) -> tuple[Volume, np.ndarray]:
    out, idx = kernels.maxpool3d_forward(x.data)
    half = Shape3(x.shape.d // 2, x.shape.h // 2, x.shape.w // 2)
    return Volume(half, x.channels, out), idx


def upsample3d(x: Volume) -> Volume:
    out = kernels.upsample3d_nearest(x.data)
    doubled = Shape3(2 * x.shape.d, 2 * x.shape.h, 2 * x.shape.w)
    return Volume(doubled, x.channels, out)


def concat_channels(a: Volume, b: Volume) -> Volume:
    if a.shape != b.shape:
        raise ShapeError(f"spatial mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return Volume(a.shape, a.channels + b.channels, np.concatenate([a.data, b.data], axis=0))


def _sigmoid_array(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# full forward / backward on raw arrays
# ---------------------------------------------------------------------------

_ENCODER = ("conv1", "conv2", "conv3")
_DECODER = ("conv5", "conv6", "conv7")


def _block_forward(model: UNetModel, block: str, x: np.ndarray, trace: dict) -> np.ndarray:
    la, lb = model.layers[f"{block}a"], model.layers[f"{block}b"]
    z1 = kernels.conv3d_forward(x, la.weights, la.bias)
    a1 = np.maximum(z1, 0.0)
    z2 = kernels.conv3d_forward(a1, lb.weights, lb.bias)
    a2 = np.maximum(z2, 0.0)
    trace[block] = {"x": x, "z1": z1, "a1": a1, "z2": z2}
    return a2


def _block_backward(model: UNetModel, block: str, gout: np.ndarray, trace: dict, grads: dict) -> np.ndarray:
    t = trace[block]
    la, lb = model.layers[f"{block}a"], model.layers[f"{block}b"]
    gz2 = gout * (t["z2"] > 0.0)
    ga1, gwb, gbb = kernels.conv3d_backward(t["a1"], lb.weights, gz2)
    grads[f"{block}b"] = (gwb, gbb)
    gz1 = ga1 * (t["z1"] > 0.0)
    gx, gwa, gba = kernels.conv3d_backward(t["x"], la.weights, gz1)
    grads[f"{block}a"] = (gwa, gba)
    return gx


def forward_with_trace(
    model: UNetModel, x: np.ndarray, *, zero_skips: bool = False
) -> tuple[np.ndarray, dict]:
    """One sample through the U: returns (probability map, activation trace).

    ``zero_skips`` replaces the encoder side of every concatenation with
    zeros; it exists so tests can show the skips carry real signal.
    """
    cfg = model.config
    if x.shape != (cfg.in_channels, *cfg.input_shape):
        raise ShapeError(
            f"input shape {x.shape} does not match config {(cfg.in_channels, *cfg.input_shape)}"
        )
    trace: dict = {}
    a1 = _block_forward(model, "conv1", x, trace)
    p1, i1 = kernels.maxpool3d_forward(a1)
    a2 = _block_forward(model, "conv2", p1, trace)
    p2, i2 = kernels.maxpool3d_forward(a2)
    a3 = _block_forward(model, "conv3", p2, trace)
    p3, i3 = kernels.maxpool3d_forward(a3)
    a4 = _block_forward(model, "conv4", p3, trace)
    trace["pool_idx"] = (i1, i2, i3)

    skips = [a3, a2, a1]
    if zero_skips:
        skips = [np.zeros_like(s) for s in skips]
    out = a4
    for block, skip in zip(_DECODER, skips):
        up = kernels.upsample3d_nearest(out)
        cat = np.concatenate([up, skip], axis=0)
        trace[f"{block}_split"] = up.shape[0]
        out = _block_forward(model, block, cat, trace)

    head = model.layers["conv8"]
    z8 = kernels.conv3d_forward(out, head.weights, head.bias)
    trace["conv8_x"] = out
    p = _sigmoid_array(z8)
    return p, trace


def backward_from_head_grad(
    model: UNetModel, trace: dict, gz8: np.ndarray
) -> tuple[dict[str, tuple[np.ndarray, np.ndarray]], list[np.ndarray]]:
    """Backprop from the gradient at the sigmoid pre-activation.

    Returns per-layer (d/dweights, d/dbias) plus the gradients that flowed
    into each skip connection (decoder order), which accumulate into the
    encoder path.
    """
    grads: dict = {}
    head = model.layers["conv8"]
    gout, gw8, gb8 = kernels.conv3d_backward(trace["conv8_x"], head.weights, gz8)
    grads["conv8"] = (gw8, gb8)

    skip_grads = []
    for block in reversed(_DECODER):  # conv7, conv6, conv5
        gcat = _block_backward(model, block, gout, trace, grads)
        split = trace[f"{block}_split"]
        gup, gskip = gcat[:split], gcat[split:]
        skip_grads.append(gskip)
        gout = kernels.upsample3d_nearest_backward(gup)
    gskip1, gskip2, gskip3 = skip_grads  # for a1, a2, a3 respectively

    i1, i2, i3 = trace["pool_idx"]
    gp3 = _block_backward(model, "conv4", gout, trace, grads)
    ga3 = kernels.maxpool3d_backward(gp3, i3) + gskip3
    gp2 = _block_backward(model, "conv3", ga3, trace, grads)
    ga2 = kernels.maxpool3d_backward(gp2, i2) + gskip2
    gp1 = _block_backward(model, "conv2", ga2, trace, grads)
    ga1 = kernels.maxpool3d_backward(gp1, i1) + gskip1
    _block_backward(model, "conv1", ga1, trace, grads)
    return grads, [gskip1, gskip2, gskip3]


def unet_forward(model: UNetModel, batch: list[Volume]) -> list[Volume]:
    """Inference: one single-channel probability volume per input."""
    outs = []
    for v in batch:
        p, _ = forward_with_trace(model, v.data)
        outs.append(Volume(v.shape, 1, p))
    return outs


def adam_update(model: UNetModel, grads: dict, lr: float) -> None:
    """One Adam step over every parameter, in place."""
    model.adam_step += 1
    t = model.adam_step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for name in layer_names(model.config):
        layer = model.layers[name]
        gw, gb = grads[name]
        for arr, g, m, v in (
            (layer.weights, gw, model.adam_m[name][0], model.adam_v[name][0]),
            (layer.bias, gb, model.adam_m[name][1], model.adam_v[name][1]),
        ):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# checkpointing: magic "UNC1", version u32, config JSON, parameters in fixed
# conv1..conv8 order (float64 LE), Adam moments, step counter
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"UNC1"
_CKPT_VERSION = 1


def save_checkpoint(model: UNetModel) -> bytes:
    cfg_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [_CKPT_MAGIC, struct.pack("<I", _CKPT_VERSION), struct.pack("<I", len(cfg_blob)), cfg_blob]
    for name in layer_names(model.config):
        layer = model.layers[name]
        parts.append(layer.weights.astype("<f8").tobytes(order="C"))
        parts.append(layer.bias.astype("<f8").tobytes(order="C"))
    for store in (model.adam_m, model.adam_v):
        for name in layer_names(model.config):
            mw, mb = store[name]
            parts.append(mw.astype("<f8").tobytes(order="C"))
            parts.append(mb.astype("<f8").tobytes(order="C"))
    parts.append(struct.pack("<Q", model.adam_step))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"only {len(self.blob) - self.pos} left"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def take_array(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape)) * 8
        return np.frombuffer(self.take(n), dtype="<f8").reshape(shape).astype(np.float64)


def load_checkpoint(blob: bytes) -> UNetModel:
    r = _Reader(blob)
    if r.take(4) != _CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<I", r.take(4))
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", r.take(4))
    try:
        cfg = UNetConfig.from_dict(json.loads(r.take(cfg_len).decode("utf-8")))
    except (ValueError, KeyError, InvalidConfigError) as exc:
        raise CheckpointError(f"invalid embedded config: {exc}") from exc
    shapes = _layer_shapes(cfg)
    layers = {}
    for name in layer_names(cfg):
        cin, cout, k = shapes[name]
        w = r.take_array((cout, cin, k, k, k))
        b = r.take_array((cout,))
        layers[name] = ConvLayer(w, b)
    adam_m = {}
    adam_v = {}
    for store in (adam_m, adam_v):
        for name in layer_names(cfg):
            cin, cout, k = shapes[name]
            store[name] = (r.take_array((cout, cin, k, k, k)), r.take_array((cout,)))
    (step,) = struct.unpack("<Q", r.take(8))
    if r.pos != len(blob):
        raise CheckpointError(f"{len(blob) - r.pos} trailing bytes after checkpoint")
    return UNetModel(cfg, layers, adam_m, adam_v, adam_step=int(step))
