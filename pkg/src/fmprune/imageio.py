"""Test-image decoding and conversion to network input tensors.

Only binary PPM (P6, maxval 255) and the raw tensor fixture format are
supported; convert anything else externally (e.g. `convert img.jpg img.ppm`).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tensor, read_raw_tensor


class PPMError(ValueError):
    """The PPM byte stream is malformed."""


@dataclass
class RawImage:
    """Decoded interleaved 8-bit RGB image; pixels is (H, W, 3) uint8."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise ShapeError(
                f"pixels shape {self.pixels.shape} does not match "
                f"{self.height}×{self.width}×3"
            )


_WHITESPACE = b" \t\r\n\x0b\x0c"
_DIGITS = b"0123456789"


def load_ppm(source) -> RawImage:
    """Decode a binary PPM ("P6") from bytes or a file path."""
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = Path(source).read_bytes()
    if data[:2] != b"P6":
        raise PPMError("not a binary PPM: magic is not 'P6'")
    pos = 2
    values = []
    while len(values) < 3:
        while pos < len(data):
            if data[pos] in _WHITESPACE:
                pos += 1
            elif data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] not in b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and data[pos] in _DIGITS:
            pos += 1
        if start == pos:
            raise PPMError("malformed PPM header: expected an integer")
        values.append(int(data[start:pos]))
    width, height, maxval = values
    if maxval != 255:
        raise PPMError(f"unsupported maxval {maxval}, only 255 is accepted")
    if width < 1 or height < 1:
        raise PPMError(f"invalid image dimensions {width}×{height}")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise PPMError("malformed PPM header: maxval not followed by whitespace")
    pos += 1
    need = 3 * width * height
    body = data[pos:pos + need]
    if len(body) < need:
        raise PPMError(f"truncated pixel data: need {need} bytes, got {len(body)}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()
    return RawImage(width=width, height=height, pixels=pixels)


def write_ppm(img: RawImage, path) -> None:
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        f.write(img.pixels.tobytes())


def _bilinear_axis(length: int, target: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel-center sampling, clamped at the borders
    coords = (np.arange(target, dtype=np.float64) + 0.5) * (length / target) - 0.5
    coords = np.clip(coords, 0.0, length - 1)
    lo = np.floor(coords).astype(np.int64)
    frac = coords - lo
    hi = np.minimum(lo + 1, length - 1)
    return lo, hi, frac


def to_input_tensor(img: RawImage, target_shape: tuple[int, int, int]) -> Tensor:
    """Bilinear-resize to the model input plane and scale to [0, 1].

    Output is planar RGB (channel 0 = red) of exactly target_shape; the
    target must have 3 channels.
    """
    c, th, tw = target_shape
    if c != 3:
        raise ShapeError(f"input tensors are RGB: target channels must be 3, got {c}")
    src = img.pixels.astype(np.float64)
    y0, y1, fy = _bilinear_axis(img.height, th)
    x0, x1, fx = _bilinear_axis(img.width, tw)
    top = src[y0][:, x0] * (1 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bottom = src[y1][:, x0] * (1 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    resized = top * (1 - fy)[:, None, None] + bottom * fy[:, None, None]
    return Tensor((resized.transpose(2, 0, 1) / 255.0).astype(np.float32))


def load_input(path, target_shape: tuple[int, int, int]) -> Tensor:
    """Load a .ppm (decoded and resized) or raw tensor file as model input."""
    p = Path(path)
    if p.suffix.lower() in (".ppm", ".pnm"):
        return to_input_tensor(load_ppm(p), target_shape)
    t = read_raw_tensor(p)
    if t.shape != tuple(target_shape):
        raise ShapeError(
            f"raw tensor {p} has shape {t.shape}, model expects {tuple(target_shape)}"
        )
    return t
