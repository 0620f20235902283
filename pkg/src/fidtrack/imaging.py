"""Pixel-level primitives: frames, HSV conversion, background differencing, masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    """One RGB frame. pixels is (height, width, 3) uint8, row-major."""

    pixels: np.ndarray
    timestamp_us: int = 0
    frame_index: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError("pixels must be (h, w, 3) uint8")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class GrayFrame:
    """8-bit single channel frame, (height, width) uint8."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.dtype != np.uint8:
            raise ValueError("pixels must be (h, w) uint8")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean per-pixel mask, (height, width)."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.dtype != np.bool_:
            raise ValueError("bits must be (h, w) bool")
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


def rgb_to_hsv(r: int, g: int, b: int) -> tuple[float, float, float]:
    """Hexcone HSV for one pixel: h in [0,360) degrees, s and v in [0,1]."""
    rf, gf, bf = r / 255.0, g / 255.0, b / 255.0
    v = max(rf, gf, bf)
    c = v - min(rf, gf, bf)
    if c == 0.0:
        h = 0.0
    elif v == rf:
        h = 60.0 * (((gf - bf) / c) % 6.0)
    elif v == gf:
        h = 60.0 * ((bf - rf) / c + 2.0)
    else:
        h = 60.0 * ((rf - gf) / c + 4.0)
    s = 0.0 if v == 0.0 else c / v
    if s == 0.0:
        h = 0.0
    return h % 360.0, s, v


def rgb_image_to_hsv(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized rgb_to_hsv over an (h, w, 3) uint8 image."""
    rgb = pixels.astype(np.float64) / 255.0
    v = rgb.max(axis=2)
    c = v - rgb.min(axis=2)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    h = np.zeros_like(v)
    nz = c > 0
    rmax = nz & (v == r)
    gmax = nz & ~rmax & (v == g)
    bmax = nz & ~rmax & ~gmax
    cs = np.where(nz, c, 1.0)
    h[rmax] = 60.0 * (((g - b)[rmax] / cs[rmax]) % 6.0)
    h[gmax] = 60.0 * ((b - r)[gmax] / cs[gmax] + 2.0)
    h[bmax] = 60.0 * ((r - g)[bmax] / cs[bmax] + 4.0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    h = np.where(s > 0, h % 360.0, 0.0)
    return h, s, v


def to_gray(frame: Frame) -> GrayFrame:
    """Arithmetic channel mean, rounded to nearest (used for binary detection)."""
    s = frame.pixels.astype(np.uint16).sum(axis=2)
    return GrayFrame(((s + 1) // 3).astype(np.uint8))


def background_mask(current: Frame, background: Frame, tau: int) -> BinaryMask:
    """Foreground where the mean absolute channel difference exceeds tau (strict)."""
    if (current.height, current.width) != (background.height, background.width):
        raise DimensionMismatchError("frame dimensions differ")
    diff = np.abs(current.pixels.astype(np.int16) - background.pixels.astype(np.int16))
    # mean of three channel diffs; the sum is never an exact half-multiple of 3,
    # so any nearest-rounding rule agrees
    mean = np.rint(diff.sum(axis=2) / 3.0)
    return BinaryMask(mean > tau)


def apply_mask(frame: Frame, mask: BinaryMask) -> Frame:
    """Zero background pixels, keep foreground bytes untouched."""
    if (frame.height, frame.width) != (mask.height, mask.width):
        raise DimensionMismatchError("mask dimensions differ")
    out = np.where(mask.bits[:, :, None], frame.pixels, np.uint8(0))
    return Frame(out.astype(np.uint8), frame.timestamp_us, frame.frame_index)
