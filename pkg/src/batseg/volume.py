"""Dense volumetric tensors, shape algebra, resampling, and the VOL3 container.

Volumes are stored as C-contiguous float64 arrays of shape (channels, d, h, w)
in memory and as little-endian float32 on disk. Masks hold one uint8 per voxel
with values in {0, 1}. All operations here are pure: inputs are never mutated
and returned arrays are marked read-only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import FormatError, InvalidInputError, InvalidVolumeError, ShapeError


class Shape3(NamedTuple):
    """Spatial extent of a volume in voxels, (depth, height, width)."""

    d: int
    h: int
    w: int

    def validate(self) -> "Shape3":
        if any(int(s) < 1 for s in self):
            raise ShapeError(f"all dims must be >= 1, got {tuple(self)}")
        return Shape3(int(self.d), int(self.h), int(self.w))

    @property
    def voxels(self) -> int:
        return self.d * self.h * self.w


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Volume:
    """Real-valued voxel grid with a channel axis.

    ``data`` is copied on construction, converted to float64 and frozen, so a
    Volume can be shared freely across threads.
    """

    shape: Shape3
    channels: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = self.shape.validate() if isinstance(self.shape, Shape3) else Shape3(*self.shape).validate()
        object.__setattr__(self, "shape", shape)
        if self.channels < 1:
            raise ShapeError(f"channels must be >= 1, got {self.channels}")
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        expected = (self.channels, shape.d, shape.h, shape.w)
        if arr.size != self.channels * shape.voxels:
            raise InvalidVolumeError(
                f"data has {arr.size} elements, expected {self.channels * shape.voxels}"
            )
        arr = arr.reshape(expected)
        if not np.all(np.isfinite(arr)):
            raise InvalidVolumeError("volume contains non-finite values")
        object.__setattr__(self, "data", _freeze(arr))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Volume":
        """Build from a (d,h,w) or (c,d,h,w) array."""
        arr = np.asarray(arr)
        if arr.ndim == 3:
            arr = arr[np.newaxis]
        if arr.ndim != 4:
            raise ShapeError(f"expected 3 or 4 dims, got {arr.ndim}")
        return cls(Shape3(*arr.shape[1:]), arr.shape[0], arr)

    def single_channel(self) -> np.ndarray:
        if self.channels != 1:
            raise ShapeError(f"expected 1 channel, got {self.channels}")
        return self.data[0]


@dataclass(frozen=True)
class MaskVolume:
    """Binary voxel labels with the same length contract as Volume."""

    shape: Shape3
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = self.shape.validate() if isinstance(self.shape, Shape3) else Shape3(*self.shape).validate()
        object.__setattr__(self, "shape", shape)
        arr = np.array(self.data, order="C", copy=True)
        if arr.size != shape.voxels:
            raise InvalidVolumeError(
                f"mask has {arr.size} elements, expected {shape.voxels}"
            )
        arr = arr.reshape(shape)
        if not np.isin(arr, (0, 1)).all():
            raise InvalidVolumeError("mask values must be 0 or 1")
        object.__setattr__(self, "data", _freeze(arr.astype(np.uint8)))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "MaskVolume":
        arr = np.asarray(arr)
        if arr.ndim != 3:
            raise ShapeError(f"expected 3 dims, got {arr.ndim}")
        return cls(Shape3(*arr.shape), arr)


def normalize_max(v: Volume) -> Volume:
    """Scale so the global maximum becomes 1.0.

    A non-positive maximum (e.g. an all-zero volume) returns the input
    unchanged rather than dividing by zero.
    """
    peak = float(v.data.max())
    if peak <= 0.0:
        return v
    return Volume(v.shape, v.channels, v.data / peak)


def _axis_coords(out_size: int, in_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices and fractions for one axis, align-corners-false.

    Voxel centers map as src = (i + 0.5) * in/out - 0.5, clamped to the valid
    range so border voxels extend outward.
    """
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def trilinear_resize(v: Volume, target: Shape3) -> Volume:
    """Resample to ``target`` with trilinear interpolation.

    Exact on constant volumes and bitwise identity when target equals the
    source shape; output values never leave the input's [min, max] range.
    """
    target = Shape3(*target).validate()
    if target == v.shape:
        return v
    d0, d1, fd = _axis_coords(target.d, v.shape.d)
    h0, h1, fh = _axis_coords(target.h, v.shape.h)
    w0, w1, fw = _axis_coords(target.w, v.shape.w)

    fd = fd[:, None, None]
    fh = fh[None, :, None]
    fw = fw[None, None, :]
    out = np.empty((v.channels, target.d, target.h, target.w), dtype=np.float64)
    for c in range(v.channels):
        ch = v.data[c]
        # gather the 8 corners, then lerp as a + t*(b-a) so constants survive
        c000 = ch[np.ix_(d0, h0, w0)]
        c001 = ch[np.ix_(d0, h0, w1)]
        c010 = ch[np.ix_(d0, h1, w0)]
        c011 = ch[np.ix_(d0, h1, w1)]
        c100 = ch[np.ix_(d1, h0, w0)]
        c101 = ch[np.ix_(d1, h0, w1)]
        c110 = ch[np.ix_(d1, h1, w0)]
        c111 = ch[np.ix_(d1, h1, w1)]
        c00 = c000 + fw * (c001 - c000)
        c01 = c010 + fw * (c011 - c010)
        c10 = c100 + fw * (c101 - c100)
        c11 = c110 + fw * (c111 - c110)
        c0 = c00 + fh * (c01 - c00)
        c1 = c10 + fh * (c11 - c10)
        out[c] = c0 + fd * (c1 - c0)
    return Volume(target, v.channels, out)


def nearest_resize_mask(m: MaskVolume, target: Shape3) -> MaskVolume:
    """Nearest-neighbor resample for masks (keeps labels binary).

    Uses the same align-corners-false grid: source index floor((i+0.5)*scale).
    """
    target = Shape3(*target).validate()
    if target == m.shape:
        return m
    idx = []
    for out_size, in_size in zip(target, m.shape):
        scale = in_size / out_size
        src = np.floor((np.arange(out_size, dtype=np.float64) + 0.5) * scale)
        idx.append(np.clip(src, 0, in_size - 1).astype(np.int64))
    out = m.data[np.ix_(*idx)]
    return MaskVolume(target, out)


def mask_from_probs(p: Volume, threshold: float) -> MaskVolume:
    """Binarize a probability map; a voxel is positive iff prob >= threshold."""
    if p.channels != 1:
        raise ShapeError(f"probability map must have 1 channel, got {p.channels}")
    if p.data.min() < 0.0 or p.data.max() > 1.0:
        raise InvalidInputError("probabilities must lie in [0, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError(f"threshold must lie in [0, 1], got {threshold}")
    return MaskVolume(p.shape, (p.data[0] >= threshold).astype(np.uint8))


# VOL3 container: magic, version u8, dtype u8 (1=float32, 2=uint8 mask),
# dims 3*u32 LE, channels u32 LE, then the row-major little-endian payload.
_MAGIC = b"VOL3"
_VERSION = 1
_DTYPE_F32 = 1
_DTYPE_MASK = 2
_HEADER = struct.Struct("<4sBB3II")


def write_volume(v: Volume | MaskVolume) -> bytes:
    """Serialize to the VOL3 container (float32 payload; uint8 for masks)."""
    if isinstance(v, MaskVolume):
        header = _HEADER.pack(_MAGIC, _VERSION, _DTYPE_MASK, *v.shape, 1)
        payload = v.data.astype("<u1").tobytes(order="C")
    elif isinstance(v, Volume):
        header = _HEADER.pack(_MAGIC, _VERSION, _DTYPE_F32, *v.shape, v.channels)
        payload = v.data.astype("<f4").tobytes(order="C")
    else:
        raise InvalidInputError(f"cannot serialize {type(v).__name__}")
    return header + payload


def read_volume(blob: bytes) -> Volume | MaskVolume:
    """Decode a VOL3 container; inverse of write_volume at 32-bit precision."""
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad magic {bytes(blob[:4])!r}", offset=0)
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header", offset=len(blob))
    _, version, dtype, d, h, w, channels = _HEADER.unpack_from(blob, 0)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype not in (_DTYPE_F32, _DTYPE_MASK):
        raise FormatError(f"unknown dtype code {dtype}", offset=5)
    if min(d, h, w) < 1 or channels < 1:
        raise FormatError(f"invalid dims {(d, h, w)} x {channels} channels", offset=6)
    count = d * h * w * channels
    itemsize = 4 if dtype == _DTYPE_F32 else 1
    expected = _HEADER.size + count * itemsize
    if len(blob) != expected:
        raise FormatError(
            f"payload length mismatch: expected {count} voxels "
            f"({expected - _HEADER.size} bytes), got {len(blob) - _HEADER.size}",
            offset=min(len(blob), expected),
        )
    if dtype == _DTYPE_MASK:
        if channels != 1:
            raise FormatError("masks must have exactly 1 channel", offset=18)
        arr = np.frombuffer(blob, dtype="<u1", offset=_HEADER.size)
        if not np.isin(arr, (0, 1)).all():
            bad = int(np.flatnonzero(~np.isin(arr, (0, 1)))[0])
            raise FormatError("mask voxel outside {0,1}", offset=_HEADER.size + bad)
        return MaskVolume(Shape3(d, h, w), arr.reshape(d, h, w))
    arr = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    finite = np.isfinite(arr)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise FormatError("non-finite voxel value", offset=_HEADER.size + bad * 4)
    return Volume(Shape3(d, h, w), channels, arr.reshape(channels, d, h, w))
