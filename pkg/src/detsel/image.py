"""Grayscale raster type, portable graymap IO and intensity statistics."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

MIN_SIDE = 1


class ImageError(ValueError):
    """Invalid image contents or dimensions."""


class PnmParseError(ValueError):
    """Malformed portable graymap stream.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit single-channel image stored as a read-only ``(height, width)`` uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ImageError(f"expected a 2-D array, got shape {arr.shape}")
        h, w = arr.shape
        if h < MIN_SIDE or w < MIN_SIDE:
            raise ImageError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {w}x{h}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ImageError(f"pixel values must be integers, got dtype {arr.dtype}")
            if arr.min() < 0 or arr.max() > 255:
                raise ImageError("pixel values must lie in [0, 255]")
        arr = np.array(arr, dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_values(cls, width: int, height: int, values) -> GrayImage:
        """Build an image from a flat row-major sequence."""
        flat = np.asarray(values)
        if flat.size != width * height:
            raise ImageError(f"expected {width * height} values, got {flat.size}")
        return cls(flat.reshape(height, width))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def as_float(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True)
class Histogram:
    bins: np.ndarray
    total: int

    def mean(self) -> float:
        return float(np.dot(np.arange(256, dtype=np.float64), self.bins) / self.total)


def histogram(img: GrayImage) -> Histogram:
    bins = np.bincount(img.data.ravel(), minlength=256).astype(np.int64)
    return Histogram(bins=bins, total=int(bins.sum()))


def mean_intensity(img: GrayImage) -> float:
    """Histogram-weighted mean intensity, i.e. the arithmetic pixel mean."""
    return histogram(img).mean()


# -- portable graymap IO -----------------------------------------------------

_WHITESPACE = b" \t\n\r\v\f"


class _Tokenizer:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def skip_space(self):
        buf = self.buf
        while self.pos < len(buf):
            c = buf[self.pos : self.pos + 1]
            if c in _WHITESPACE:
                self.pos += 1
            elif c == b"#":
                while self.pos < len(buf) and buf[self.pos : self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            else:
                break

    def token(self, what: str) -> tuple[bytes, int]:
        self.skip_space()
        start = self.pos
        buf = self.buf
        while self.pos < len(buf):
            c = buf[self.pos : self.pos + 1]
            if c in _WHITESPACE or c == b"#":
                break
            self.pos += 1
        if self.pos == start:
            raise PnmParseError(f"truncated data: expected {what}", start)
        return buf[start : self.pos], start

    def integer(self, what: str) -> tuple[int, int]:
        tok, start = self.token(what)
        if not tok.isdigit():
            raise PnmParseError(f"expected integer {what}, got {tok[:16]!r}", start)
        return int(tok), start


def load_image(stream: bytes) -> GrayImage:
    """Parse a P2 (ASCII) or P5 (binary) graymap with maxval 255."""
    if isinstance(stream, (bytearray, memoryview)):
        stream = bytes(stream)
    magic = stream[:2]
    if magic not in (b"P2", b"P5"):
        raise PnmParseError(f"malformed magic number {magic!r}", 0)
    tok = _Tokenizer(stream)
    tok.pos = 2
    width, _ = tok.integer("width")
    height, _ = tok.integer("height")
    maxval, maxval_pos = tok.integer("maxval")
    if maxval != 255:
        raise PnmParseError(f"unsupported maxval {maxval}", maxval_pos)
    if width < 1 or height < 1:
        raise PnmParseError(f"invalid dimensions {width}x{height}", 2)
    n = width * height

    if magic == b"P5":
        # exactly one whitespace byte separates maxval from the raster
        if tok.pos >= len(stream) or stream[tok.pos : tok.pos + 1] not in _WHITESPACE:
            raise PnmParseError("truncated data: missing raster", tok.pos)
        start = tok.pos + 1
        payload = stream[start : start + n]
        if len(payload) < n:
            raise PnmParseError(f"truncated data: expected {n} raster bytes, got {len(payload)}", start + len(payload))
        values = np.frombuffer(payload, dtype=np.uint8)
    else:
        values = np.empty(n, dtype=np.int64)
        for i in range(n):
            tok_bytes, start = tok.token(f"pixel {i}")
            if not tok_bytes.isdigit():
                raise PnmParseError(f"expected integer pixel value, got {tok_bytes[:16]!r}", start)
            v = int(tok_bytes)
            if v > maxval:
                raise PnmParseError(f"pixel value {v} exceeds maxval", start)
            values[i] = v
    try:
        return GrayImage.from_values(width, height, values)
    except ImageError as exc:
        raise PnmParseError(str(exc), 0) from exc


def save_image(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.data.tobytes()


def save_image_ascii(img: GrayImage) -> bytes:
    lines = [f"P2\n{img.width} {img.height}\n255"]
    lines.extend(" ".join(str(v) for v in row) for row in img.data)
    return ("\n".join(lines) + "\n").encode("ascii")


def read_image(path: str | os.PathLike) -> GrayImage:
    with open(path, "rb") as fh:
        return load_image(fh.read())


def write_image(path: str | os.PathLike, img: GrayImage) -> None:
    with open(path, "wb") as fh:
        fh.write(save_image(img))
