"""Dense feature/depth containers, the small kernels built on them, and the
``AMDE`` binary tensor format.

All arithmetic runs in float64. The file format stores float32, so a write
followed by a read is bit-exact only for values that were already float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import FormatError, InvalidArgumentError, ShapeError, TruncationError

MAGIC = b"AMDE"
FORMAT_VERSION = 1
DTYPE_F32 = 0
LEVELS = (1, 2, 3, 4)

# expit saturates to exactly 0/1 in float64 for |x| > ~37; keep the open interval.
_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = 1.0 - np.finfo(np.float64).epsneg


@dataclass(eq=False)
class FeatureMap:
    """C x H x W feature grid at pyramid level ``level``."""

    data: np.ndarray
    level: int = 1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or 0 in self.data.shape:
            raise ShapeError(f"FeatureMap needs a non-empty C x H x W array, got shape {self.data.shape}")
        if self.level not in LEVELS:
            raise InvalidArgumentError(f"level must be one of {LEVELS}, got {self.level}")
        if not np.isfinite(self.data).all():
            raise InvalidArgumentError("FeatureMap values must be finite")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "FeatureMap":
        return FeatureMap(data, self.level)

    def copy(self) -> "FeatureMap":
        return FeatureMap(self.data.copy(), self.level)


@dataclass(eq=False)
class DepthMap:
    """H x W inverse-depth map with an optional validity mask (True = valid)."""

    data: np.ndarray
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or 0 in self.data.shape:
            raise ShapeError(f"DepthMap needs a non-empty H x W array, got shape {self.data.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.data.shape:
                raise ShapeError(f"mask shape {self.mask.shape} != data shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.data.shape, dtype=bool)
        return self.mask


def as_depth(x) -> DepthMap:
    return x if isinstance(x, DepthMap) else DepthMap(x)


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

def _axis_taps(n_src: int, n_tgt: int):
    x = (np.arange(n_tgt) + 0.5) * (n_src / n_tgt) - 0.5
    x = np.clip(x, 0.0, n_src - 1)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, x - i0


def resize_array(src: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of the last two axes."""
    if target_h < 1 or target_w < 1:
        raise InvalidArgumentError(f"target size must be >= 1, got {target_h}x{target_w}")
    h, w = src.shape[-2:]
    out = src
    if target_h != h:
        i0, i1, wy = _axis_taps(h, target_h)
        a, b = out[..., i0, :], out[..., i1, :]
        # a + w*(b - a) keeps constants and endpoints exact
        out = a + wy[:, None] * (b - a)
    if target_w != w:
        i0, i1, wx = _axis_taps(w, target_w)
        a, b = out[..., i0], out[..., i1]
        out = a + wx * (b - a)
    return out if out is not src else src.copy()


def bilinear_resize(src: FeatureMap, target_h: int, target_w: int) -> FeatureMap:
    return src.with_data(resize_array(src.data, target_h, target_w))


def pointwise_linear(src: FeatureMap, weights, bias=None) -> FeatureMap:
    """Per-pixel affine channel map (a 1x1 convolution)."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != src.channels:
        raise InvalidArgumentError(
            f"weights must be C_out x {src.channels}, got shape {weights.shape}")
    out = np.tensordot(weights, src.data, axes=(1, 0))
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weights.shape[0],):
            raise InvalidArgumentError(f"bias must have length {weights.shape[0]}, got {bias.shape}")
        out = out + bias[:, None, None]
    return src.with_data(out)


def conv3x3_array(x: np.ndarray, kernel: np.ndarray, bias=None) -> np.ndarray:
    c_out, c_in, kh, kw = kernel.shape
    h, w = x.shape[1:]
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((c_out, h, w))
    for dy in range(3):
        for dx in range(3):
            out += np.tensordot(kernel[:, :, dy, dx], padded[:, dy:dy + h, dx:dx + w], axes=(1, 0))
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


def conv2d_small(src: FeatureMap, kernel, bias=None) -> FeatureMap:
    """Same-size 3x3 cross-correlation with zero padding of one pixel."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise InvalidArgumentError(f"kernel must be C_out x C_in x 3 x 3, got shape {kernel.shape}")
    if kernel.shape[1] != src.channels:
        raise InvalidArgumentError(
            f"kernel expects {kernel.shape[1]} input channels, map has {src.channels}")
    if bias is not None and np.shape(bias) != (kernel.shape[0],):
        raise InvalidArgumentError(f"bias must have length {kernel.shape[0]}")
    return src.with_data(conv3x3_array(src.data, kernel, bias))


def sigmoid(x):
    return np.clip(expit(x), _SIG_LO, _SIG_HI)


def sigmoid_map(src: FeatureMap) -> FeatureMap:
    return src.with_data(sigmoid(src.data))


def concat_channels(a: FeatureMap, b: FeatureMap) -> FeatureMap:
    if a.size != b.size:
        raise ShapeError(f"spatial sizes differ: {a.size} vs {b.size}")
    return FeatureMap(np.concatenate([a.data, b.data], axis=0), a.level)


# --------------------------------------------------------------------------
# binary format
# --------------------------------------------------------------------------

def write_array(path: str | PathLike, array: np.ndarray) -> None:
    """Write a 2-D or 3-D array as little-endian float32."""
    array = np.asarray(array)
    if array.ndim not in (2, 3):
        raise ShapeError(f"only 2-D and 3-D tensors are supported, got {array.ndim}-D")
    header = MAGIC + struct.pack("<IBB", FORMAT_VERSION, DTYPE_F32, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_array(path: str | PathLike, ndim: int | None = None) -> np.ndarray:
    """Read a tensor file; returns a float32 array of the declared shape."""
    raw = Path(path).read_bytes()
    if len(raw) < 10:
        if raw[:4] != MAGIC[:len(raw)]:
            raise FormatError(f"{path}: bad magic")
        raise TruncationError(f"{path}: file ends inside the header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype, nd = struct.unpack_from("<IBB", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if nd not in (2, 3):
        raise FormatError(f"{path}: unsupported rank {nd}")
    if ndim is not None and nd != ndim:
        raise ShapeError(f"{path}: expected a {ndim}-D tensor, header declares {nd}-D")
    off = 10 + 4 * nd
    if len(raw) < off:
        raise TruncationError(f"{path}: file ends inside the dims block")
    dims = struct.unpack_from(f"<{nd}I", raw, 10)
    if 0 in dims:
        raise FormatError(f"{path}: zero-sized dimension in {dims}")
    need = 4 * int(np.prod(dims))
    have = len(raw) - off
    if have < need:
        raise TruncationError(f"{path}: payload has {have} bytes, header needs {need}")
    if have > need:
        raise ShapeError(f"{path}: payload has {have} bytes but dims {dims} account for {need}")
    return np.frombuffer(raw, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


def tensor_write(path: str | PathLike, tensor: FeatureMap | DepthMap) -> None:
    # the validity mask and the pyramid level are not part of the format
    write_array(path, tensor.data)


def tensor_read(path: str | PathLike, kind: type | None = None, level: int = 1):
    """Read a FeatureMap (3-D) or DepthMap (2-D). ``kind`` pins the expected type."""
    expect = {None: None, FeatureMap: 3, DepthMap: 2}[kind]
    arr = read_array(path, expect)
    if arr.ndim == 3:
        return FeatureMap(arr, level)
    return DepthMap(arr)
