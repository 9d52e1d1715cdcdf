"""Grayscale raster primitives and the binary morphology used by the segmentation chain.

Pixel layout is row-major with origin at the top-left corner. All operations
are pure: they never mutate their inputs.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class GrayImage:
    """8-bit single-channel raster."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D pixel array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image dimensions must be positive")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer) and not np.issubdtype(arr.dtype, np.floating):
                raise ValueError(f"unsupported pixel dtype {arr.dtype}")
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        self.pixels = arr

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def full(cls, width: int, height: int, value: int) -> "GrayImage":
        if not 0 <= value <= 255:
            raise ValueError("intensity must lie in [0, 255]")
        return cls(np.full((height, width), value, dtype=np.uint8))

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> "GrayImage":
        if len(data) != width * height:
            raise ValueError(f"expected {width * height} bytes, got {len(data)}")
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
        return cls(arr.copy())

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def crop(self, x: int, y: int, w: int, h: int) -> "GrayImage":
        """Extract a sub-rectangle; the box must lie within the image."""
        if x < 0 or y < 0 or w < 1 or h < 1 or x + w > self.width or y + h > self.height:
            raise ValueError(f"crop ({x},{y},{w},{h}) outside {self.width}x{self.height} image")
        return GrayImage(self.pixels[y : y + h, x : x + w].copy())

    def __eq__(self, other) -> bool:
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"


class BinaryImage:
    """Row-major boolean mask; True marks foreground."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D mask, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("mask dimensions must be positive")
        self.pixels = arr.astype(bool)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def foreground_count(self) -> int:
        return int(self.pixels.sum())

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryImage":
        return cls(np.zeros((height, width), dtype=bool))

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryImage) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self) -> str:
        return f"BinaryImage({self.width}x{self.height}, fg={self.foreground_count})"


@dataclass(frozen=True)
class StructuringElement:
    """Square neighborhood of side 2*radius + 1; radius 0 is the identity."""

    radius: int = 1
    shape: str = "square"

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.shape != "square":
            raise ValueError(f"unsupported structuring element shape {self.shape!r}")

    def footprint(self) -> np.ndarray:
        side = 2 * self.radius + 1
        return np.ones((side, side), dtype=bool)


def threshold(img: GrayImage, t: int) -> BinaryImage:
    """Binarize: foreground where intensity is strictly above ``t``."""
    if not 0 <= t <= 255:
        raise ValueError("threshold must lie in [0, 255]")
    return BinaryImage(img.pixels > t)


def invert(mask: BinaryImage) -> BinaryImage:
    """Flip every pixel."""
    return BinaryImage(~mask.pixels)


def dilate(mask: BinaryImage, se: StructuringElement, passes: int = 1) -> BinaryImage:
    """Grow foreground: a pixel turns on if any pixel of its (border-clipped)
    neighborhood is on."""
    if passes < 0:
        raise ValueError("passes must be >= 0")
    if passes == 0 or se.radius == 0:
        return BinaryImage(mask.pixels.copy())
    out = ndimage.binary_dilation(
        mask.pixels, structure=se.footprint(), iterations=passes, border_value=0
    )
    return BinaryImage(out)


def erode(mask: BinaryImage, se: StructuringElement, passes: int = 1) -> BinaryImage:
    """Shrink foreground: a pixel stays on only if every pixel of its
    (border-clipped) neighborhood is on. Dual of :func:`dilate` under inversion."""
    if passes < 0:
        raise ValueError("passes must be >= 0")
    if passes == 0 or se.radius == 0:
        return BinaryImage(mask.pixels.copy())
    # border_value=1 treats out-of-image neighbors as foreground, i.e. the
    # neighborhood is clipped at the border rather than padded with background.
    out = ndimage.binary_erosion(
        mask.pixels, structure=se.footprint(), iterations=passes, border_value=1
    )
    return BinaryImage(out)


def read_pgm(source) -> GrayImage:
    """Read a binary (P5) portable graymap with maxval <= 255.

    ``source`` is a path or a binary file-like object.
    """
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    stream = io.BytesIO(data)

    def next_token() -> bytes:
        tok = b""
        while True:
            ch = stream.read(1)
            if ch == b"":
                raise ValueError("truncated PGM header")
            if ch == b"#":  # comment runs to end of line
                while ch not in (b"\n", b"\r", b""):
                    ch = stream.read(1)
                continue
            if ch.isspace():
                if tok:
                    return tok
                continue
            tok += ch

    magic = next_token()
    if magic != b"P5":
        raise ValueError(f"not a binary PGM (magic {magic!r})")
    width = int(next_token())
    height = int(next_token())
    maxval = int(next_token())
    if width < 1 or height < 1:
        raise ValueError("PGM dimensions must be positive")
    if not 0 < maxval <= 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    raster = stream.read(width * height)
    if len(raster) != width * height:
        raise ValueError("truncated PGM raster")
    return GrayImage.from_bytes(width, height, raster)


def write_pgm(img: GrayImage, target) -> None:
    """Write a binary (P5) portable graymap; output bytes are deterministic."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    payload = header + img.tobytes()
    if hasattr(target, "write"):
        target.write(payload)
    else:
        with open(target, "wb") as fh:
            fh.write(payload)
