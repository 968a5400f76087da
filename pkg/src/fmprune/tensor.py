"""Dense activation and weight storage, channel-major, single precision."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    """A tensor, weight block, or layer violates its declared shape."""


_RAW_HEADER = struct.Struct("<III")


class Tensor:
    """A C×H×W volume of float32 values.

    Storage is channel-major: channel plane c occupies the contiguous flat
    range [c*H*W, (c+1)*H*W), so skipping a channel skips one contiguous
    load. There is no batch dimension; the engine processes one image at a
    time.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"expected a non-empty C×H×W volume, got shape {arr.shape}")
        self.data = arr

    @classmethod
    def zeros(cls, c: int, h: int, w: int) -> "Tensor":
        return cls(np.zeros((c, h, w), dtype=np.float32))

    @property
    def c(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def channel_plane(self, c: int) -> np.ndarray:
        """Read-only H×W view of channel c (no copy)."""
        if not 0 <= c < self.c:
            raise IndexError(f"channel {c} out of range for {self.c} channels")
        plane = self.data[c]
        plane.flags.writeable = False
        return plane

    def max_abs_in_plane(self, c: int) -> float:
        if not 0 <= c < self.c:
            raise IndexError(f"channel {c} out of range for {self.c} channels")
        return float(np.abs(self.data[c]).max())

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def write_raw_tensor(t: Tensor, path) -> None:
    """Write the fixture format: <III header (C,H,W) then C*H*W LE float32."""
    with open(path, "wb") as f:
        f.write(_RAW_HEADER.pack(t.c, t.h, t.w))
        f.write(t.data.tobytes())


def read_raw_tensor(source) -> Tensor:
    """Read the raw fixture format from a path or a bytes object."""
    if isinstance(source, (bytes, bytearray)):
        buf = bytes(source)
    else:
        buf = Path(source).read_bytes()
    if len(buf) < _RAW_HEADER.size:
        raise ShapeError("raw tensor: truncated header")
    c, h, w = _RAW_HEADER.unpack_from(buf)
    if min(c, h, w) < 1:
        raise ShapeError(f"raw tensor: invalid dimensions ({c},{h},{w})")
    need = _RAW_HEADER.size + 4 * c * h * w
    if len(buf) != need:
        raise ShapeError(f"raw tensor: expected {need} bytes, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", count=c * h * w, offset=_RAW_HEADER.size)
    return Tensor(data.reshape(c, h, w).copy())


@dataclass
class WeightBlock:
    """Coefficients and biases of one convolutional or connected layer.

    weights is (O, C_in/groups, K, K) float32; connected layers use K=1 with
    the flattened input size in the second axis. Batch-norm statistics, when
    present, are per output channel and come as a complete triple.
    """

    weights: np.ndarray
    biases: np.ndarray
    bn_scales: np.ndarray | None = None
    bn_rolling_mean: np.ndarray | None = None
    bn_rolling_var: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float32)
        if self.weights.ndim != 4:
            raise ShapeError(f"weights must be 4-D (O, C/g, K, K), got {self.weights.shape}")
        o, _, kh, kw = self.weights.shape
        if kh != kw:
            raise ShapeError(f"kernels must be square, got {kh}×{kw}")
        if self.biases.shape != (o,):
            raise ShapeError(f"expected {o} biases, got shape {self.biases.shape}")
        bn = (self.bn_scales, self.bn_rolling_mean, self.bn_rolling_var)
        present = [x is not None for x in bn]
        if any(present) and not all(present):
            raise ShapeError("batch-norm arrays must be supplied as a complete triple")
        if all(present):
            self.bn_scales = np.ascontiguousarray(self.bn_scales, dtype=np.float32)
            self.bn_rolling_mean = np.ascontiguousarray(self.bn_rolling_mean, dtype=np.float32)
            self.bn_rolling_var = np.ascontiguousarray(self.bn_rolling_var, dtype=np.float32)
            for name, arr in zip(("scales", "rolling mean", "rolling variance"),
                                 (self.bn_scales, self.bn_rolling_mean, self.bn_rolling_var)):
                if arr.shape != (o,):
                    raise ShapeError(f"batch-norm {name} must have length {o}, got {arr.shape}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels_per_group(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    @property
    def has_batch_norm(self) -> bool:
        return self.bn_scales is not None

    def copy(self) -> "WeightBlock":
        return WeightBlock(
            self.weights.copy(),
            self.biases.copy(),
            None if self.bn_scales is None else self.bn_scales.copy(),
            None if self.bn_rolling_mean is None else self.bn_rolling_mean.copy(),
            None if self.bn_rolling_var is None else self.bn_rolling_var.copy(),
        )
