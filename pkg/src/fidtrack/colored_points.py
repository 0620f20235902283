"""Colored Points detector: HSV classification, single-pass online clustering,
EMA smoothing, and topology resolution into ordered square corners.

Scan order matters: pixels are visited row-major and join the first existing
mass of their class whose bounding box lies within dist_cutoff, which is the
single-pass online behaviour the rest of the pipeline assumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import Frame, rgb_image_to_hsv


@dataclass(frozen=True)
class HsvRange:
    """Inclusive HSV bounds; hue wraps around when h_lo > h_hi."""

    h_lo: float
    h_hi: float
    s_lo: float = 0.0
    s_hi: float = 1.0
    v_lo: float = 0.0
    v_hi: float = 1.0

    def __post_init__(self):
        if not (0 <= self.s_lo <= self.s_hi <= 1):
            raise ValueError("saturation bounds out of order")
        if not (0 <= self.v_lo <= self.v_hi <= 1):
            raise ValueError("value bounds out of order")
        for h in (self.h_lo, self.h_hi):
            if not (0 <= h < 360):
                raise ValueError("hue bounds must be in [0, 360)")

    def contains(self, h: float, s: float, v: float) -> bool:
        if self.h_lo <= self.h_hi:
            hue_ok = self.h_lo <= h <= self.h_hi
        else:
            hue_ok = h >= self.h_lo or h <= self.h_hi
        return hue_ok and self.s_lo <= s <= self.s_hi and self.v_lo <= v <= self.v_hi


@dataclass(frozen=True)
class ColorClass:
    id: int
    name: str
    range: HsvRange


@dataclass
class ColorMass:
    """One clustered chromatic blob."""

    class_id: int
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    pixel_count: int
    centroid: np.ndarray  # (2,) pixels, mean of member pixel coords
    smoothed_centroid: np.ndarray  # (2,) pixels
    pixels: list | None = None  # optional (x, y) members, for oracle tests

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return self.x_min, self.y_min, self.x_max, self.y_max


@dataclass(frozen=True)
class ColoredPointsConfig:
    dist_cutoff: float = 32.0
    min_pixels: int = 8
    alpha: float = 0.7
    match_radius: float = 64.0

    def __post_init__(self):
        if self.dist_cutoff <= 0:
            raise ValueError("dist_cutoff must be positive")
        if not (0 < self.alpha <= 1):
            raise ValueError("alpha must be in (0, 1]")
        if self.min_pixels < 1:
            raise ValueError("min_pixels must be >= 1")


@dataclass(frozen=True)
class ObjectTopology:
    """Two Lines over four distinct color-class slots; line 0 is the top edge
    (TL, TR), line 1 the bottom edge (BL, BR)."""

    object_id: str
    line0: tuple[int, int]  # (TL class id, TR class id)
    line1: tuple[int, int]  # (BL class id, BR class id)
    marker_size: float  # meters, edge length

    def __post_init__(self):
        slots = (*self.line0, *self.line1)
        if len(set(slots)) != 4:
            raise ValueError("topology slots must be four distinct classes")
        if self.marker_size <= 0:
            raise ValueError("marker_size must be positive")

    @property
    def corner_classes(self) -> tuple[int, int, int, int]:
        """Class ids in TL, TR, BR, BL order."""
        return self.line0[0], self.line0[1], self.line1[1], self.line1[0]


class _MassAccum:
    __slots__ = ("class_id", "x_min", "y_min", "x_max", "y_max", "n", "sx", "sy", "px")

    def __init__(self, class_id, x, y, keep_pixels):
        self.class_id = class_id
        self.x_min = self.x_max = x
        self.y_min = self.y_max = y
        self.n = 1
        self.sx = x
        self.sy = y
        self.px = [(x, y)] if keep_pixels else None

    def box_dist(self, x, y):
        dx = max(self.x_min - x, 0, x - self.x_max)
        dy = max(self.y_min - y, 0, y - self.y_max)
        return math.hypot(dx, dy)

    def add(self, x, y):
        if x < self.x_min:
            self.x_min = x
        elif x > self.x_max:
            self.x_max = x
        if y < self.y_min:
            self.y_min = y
        elif y > self.y_max:
            self.y_max = y
        self.n += 1
        self.sx += x
        self.sy += y
        if self.px is not None:
            self.px.append((x, y))


def classify_and_cluster(
    frame: Frame,
    classes: list[ColorClass],
    cfg: ColoredPointsConfig,
    keep_pixels: bool = False,
) -> list[ColorMass]:
    """One row-major pass: classify pixels against the HSV ranges (first matching
    class wins) and grow color masses by bounding-box proximity."""
    if not classes:
        raise ValueError("classes must be non-empty")
    h, s, v = rgb_image_to_hsv(frame.pixels)
    class_map = np.full(h.shape, -1, dtype=np.int32)
    for idx, cls in enumerate(classes):
        r = cls.range
        if r.h_lo <= r.h_hi:
            hue_ok = (h >= r.h_lo) & (h <= r.h_hi)
        else:
            hue_ok = (h >= r.h_lo) | (h <= r.h_hi)
        m = (
            hue_ok
            & (s >= r.s_lo)
            & (s <= r.s_hi)
            & (v >= r.v_lo)
            & (v <= r.v_hi)
            & (class_map < 0)
        )
        class_map[m] = idx

    ys, xs = np.nonzero(class_map >= 0)  # row-major scan order
    idxs = class_map[ys, xs]
    by_class: dict[int, list[_MassAccum]] = {i: [] for i in range(len(classes))}
    all_masses: list[_MassAccum] = []
    for x, y, ci in zip(xs.tolist(), ys.tolist(), idxs.tolist()):
        for mass in by_class[ci]:
            if mass.box_dist(x, y) <= cfg.dist_cutoff:
                mass.add(x, y)
                break
        else:
            mass = _MassAccum(classes[ci].id, x, y, keep_pixels)
            by_class[ci].append(mass)
            all_masses.append(mass)

    out = []
    for m in all_masses:  # discovery order
        if m.n < cfg.min_pixels:
            continue
        c = np.array([m.sx / m.n, m.sy / m.n])
        out.append(
            ColorMass(
                class_id=m.class_id,
                x_min=m.x_min,
                y_min=m.y_min,
                x_max=m.x_max,
                y_max=m.y_max,
                pixel_count=m.n,
                centroid=c,
                smoothed_centroid=c.copy(),
                pixels=m.px,
            )
        )
    return out


def smooth_masses(
    previous: list[ColorMass], current: list[ColorMass], cfg: ColoredPointsConfig
) -> list[ColorMass]:
    """EMA-smooth centroids by greedy nearest matching against the previous frame.

    smoothed = alpha * current_centroid + (1 - alpha) * previous_smoothed
    Unmatched masses start fresh at their own centroid.
    """
    pairs = []
    for ci, cur in enumerate(current):
        for pi, prev in enumerate(previous):
            if prev.class_id != cur.class_id:
                continue
            d = float(np.linalg.norm(cur.centroid - prev.smoothed_centroid))
            if d <= cfg.match_radius:
                pairs.append((d, ci, pi))
    pairs.sort()
    cur_taken: dict[int, int] = {}
    prev_taken: set[int] = set()
    for d, ci, pi in pairs:
        if ci in cur_taken or pi in prev_taken:
            continue
        cur_taken[ci] = pi
        prev_taken.add(pi)

    out = []
    for ci, cur in enumerate(current):
        if ci in cur_taken:
            prev = previous[cur_taken[ci]]
            sm = cfg.alpha * cur.centroid + (1.0 - cfg.alpha) * prev.smoothed_centroid
        else:
            sm = cur.centroid.copy()
        out.append(
            ColorMass(
                class_id=cur.class_id,
                x_min=cur.x_min,
                y_min=cur.y_min,
                x_max=cur.x_max,
                y_max=cur.y_max,
                pixel_count=cur.pixel_count,
                centroid=cur.centroid,
                smoothed_centroid=sm,
                pixels=cur.pixels,
            )
        )
    return out


def resolve_topology(
    masses: list[ColorMass], topo: ObjectTopology
) -> np.ndarray | None:
    """Return the four smoothed centroids ordered TL, TR, BR, BL, or None
    (incomplete) when any slot class has zero or multiple candidate masses."""
    points = []
    for class_id in topo.corner_classes:
        candidates = [m for m in masses if m.class_id == class_id]
        if len(candidates) != 1:
            return None
        points.append(candidates[0].smoothed_centroid)
    return np.array(points)
