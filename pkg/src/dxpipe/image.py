"""8-bit grayscale images, PGM file I/O, and lossless right-angle transforms.

Everything here is pure: images are immutable values, transforms return new
images, and the binary PGM writer is the canonical on-disk form (round-trips
byte-for-byte).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PgmError(ValueError):
    """Raised for malformed, oversized, or truncated PGM data."""


@dataclass(frozen=True)
class Image:
    """Immutable 8-bit grayscale raster, pixels row-major."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be >= 1, got {self.width}x{self.height}")
        if len(self.pixels) != self.width * self.height:
            raise ValueError(
                f"pixel buffer length {len(self.pixels)} does not match "
                f"{self.width}x{self.height}"
            )

    def to_array(self) -> np.ndarray:
        """Read-only uint8 view shaped (height, width)."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
        h, w = arr.shape
        return cls(width=w, height=h, pixels=np.ascontiguousarray(arr).tobytes())


@dataclass(frozen=True)
class Rotation:
    """Clockwise rotation by a whole number of quarter turns (canonical mod 4)."""

    quarter_turns: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "quarter_turns", self.quarter_turns % 4)

    def inverse(self) -> "Rotation":
        return Rotation((4 - self.quarter_turns) % 4)

    def __int__(self) -> int:
        return self.quarter_turns


_WHITESPACE = b" \t\n\r\x0b\x0c"


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next header token, skipping whitespace and '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c in (b"#",):
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos : pos + 1] not in _WHITESPACE and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PgmError("malformed PGM header: unexpected end of data")
    return data[start:pos], pos


def _int_token(data: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, pos = _next_token(data, pos)
    try:
        value = int(tok)
    except ValueError:
        raise PgmError(f"malformed PGM header: bad {what} {tok!r}") from None
    return value, pos


def read_pgm(data: bytes) -> Image:
    """Decode a binary (P5) or ASCII (P2) PGM byte string with maxval <= 255."""
    data = bytes(data)
    magic, pos = _next_token(data, 0)
    if magic not in (b"P5", b"P2"):
        raise PgmError(f"malformed PGM header: unknown magic {magic!r}")
    width, pos = _int_token(data, pos, "width")
    height, pos = _int_token(data, pos, "height")
    maxval, pos = _int_token(data, pos, "maxval")
    if width < 1 or height < 1:
        raise PgmError(f"malformed PGM header: bad dimensions {width}x{height}")
    if maxval > 255:
        raise PgmError(f"unsupported PGM maxval {maxval} (must be <= 255)")
    if maxval < 1:
        raise PgmError(f"malformed PGM header: bad maxval {maxval}")

    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates maxval from the raster
        if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
            raise PgmError("malformed PGM header: missing raster separator")
        pos += 1
        payload = data[pos : pos + count]
        if len(payload) < count:
            raise PgmError(
                f"truncated PGM payload: expected {count} bytes, got {len(payload)}"
            )
        return Image(width=width, height=height, pixels=payload)

    values = bytearray(count)
    for i in range(count):
        try:
            v, pos = _int_token(data, pos, "pixel")
        except PgmError:
            raise PgmError(
                f"truncated PGM payload: expected {count} pixels, got {i}"
            ) from None
        if v < 0 or v > maxval:
            raise PgmError(f"malformed PGM pixel value {v} (maxval {maxval})")
        values[i] = v
    return Image(width=width, height=height, pixels=bytes(values))


def write_pgm(img: Image) -> bytes:
    """Encode as canonical binary PGM (P5, maxval 255)."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels


def load_pgm(path) -> Image:
    with open(path, "rb") as fh:
        return read_pgm(fh.read())


def save_pgm(img: Image, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pgm(img))


def rotate(img: Image, r: Rotation) -> Image:
    """Rotate clockwise by r quarter turns.

    One turn maps input pixel (row, col) of an HxW image to
    (col, H-1-row) of the WxH output; further turns compose this map.
    """
    k = int(r) % 4
    if k == 0:
        return img
    arr = np.rot90(img.to_array(), k=-k)
    return Image.from_array(np.ascontiguousarray(arr))


def rotate_array(arr: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Array-level clockwise quarter-turn rotation (same mapping as rotate)."""
    k = quarter_turns % 4
    if k == 0:
        return arr
    return np.ascontiguousarray(np.rot90(arr, k=-k))


def flip_horizontal(img: Image) -> Image:
    """Mirror left-right: column c maps to column width-1-c."""
    return Image.from_array(np.ascontiguousarray(np.fliplr(img.to_array())))
