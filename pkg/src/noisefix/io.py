"""On-disk formats: portable tensor files and binary PGM/PPM images.

Tensor file layout (little-endian throughout):

    bytes 0..3   magic "I2RT"
    byte  4      rank, always 3
    bytes 5..16  three uint32 dims: height, width, channels
    payload      h*w*c float32 values, row-major

Values are widened to float64 on load and narrowed to float32 on save, so
write(read(f)) reproduces f byte for byte.

Images are 8-bit binary netpbm files: PGM (P5) for one channel, PPM (P6)
for three, maxval 255. Pixel v maps to v/127.5 - 1 in [-1, 1]; writing
clamps to [-1, 1] and inverts the map with round-half-up.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .tensor import Tensor3

__all__ = [
    "TENSOR_MAGIC",
    "read_tensor",
    "write_tensor",
    "read_image",
    "write_image",
]

TENSOR_MAGIC = b"I2RT"
_HEADER = struct.Struct("<4sBIII")


def write_tensor(t: Tensor3, path) -> None:
    """Serialize `t` to the portable tensor format."""
    data = t.data
    if not np.isfinite(data).all():
        raise ValueError("refusing to write non-finite tensor entries")
    h, w, c = t.shape
    payload = data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, 3, h, w, c))
        fh.write(payload)


def read_tensor(path) -> Tensor3:
    """Load a tensor file, validating magic, rank, dims and payload length."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, rank, h, w, c = _HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if rank != 3:
        raise FileFormatError(f"{path}: bad rank {rank}, expected 3")
    for name, dim in (("height", h), ("width", w), ("channels", c)):
        if dim == 0:
            raise FileFormatError(f"{path}: zero {name} dimension")
    expected = h * w * c * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FileFormatError(
            f"{path}: payload holds {len(payload)} bytes, "
            f"expected {expected} for dims {h}x{w}x{c}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return Tensor3(values.reshape(h, w, c))


def _read_pnm_header(raw: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Parse a binary netpbm header; returns (magic, w, h, maxval, offset)."""
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise FileFormatError(f"{path}: unsupported magic {magic!r}, expected P5 or P6")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise FileFormatError(f"{path}: truncated image header")
        ch = raw[pos:pos + 1]
        if ch == b"#":  # comment runs to end of line
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            pos += 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(raw) and raw[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(raw[start:pos]))
        else:
            raise FileFormatError(f"{path}: unexpected byte {ch!r} in image header")
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FileFormatError(f"{path}: missing separator after image header")
    pos += 1
    w, h, maxval = fields
    return magic, w, h, maxval, pos


def read_image(path) -> Tensor3:
    """Load an 8-bit binary PGM (P5) or PPM (P6) image into [-1, 1]."""
    raw = Path(path).read_bytes()
    magic, w, h, maxval, pos = _read_pnm_header(raw, path)
    if maxval != 255:
        raise FileFormatError(f"{path}: maxval {maxval} unsupported, expected 255")
    channels = 1 if magic == b"P5" else 3
    expected = h * w * channels
    payload = raw[pos:]
    if len(payload) != expected:
        raise FileFormatError(
            f"{path}: pixel payload holds {len(payload)} bytes, expected {expected}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    values = pixels / 127.5 - 1.0
    return Tensor3(values.reshape(h, w, channels))


def write_image(t: Tensor3, path) -> None:
    """Write a 1-channel PGM or 3-channel PPM, quantizing with round-half-up."""
    if t.channels not in (1, 3):
        raise ValueError(f"images must have 1 or 3 channels, got {t.channels}")
    clamped = np.clip(t.data, -1.0, 1.0)
    # round-half-up keeps read/write a fixed point of the affine pixel map
    pixels = np.floor((clamped + 1.0) * 127.5 + 0.5)
    pixels = np.clip(pixels, 0, 255).astype(np.uint8)
    magic = b"P5" if t.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (t.width, t.height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes(order="C"))
