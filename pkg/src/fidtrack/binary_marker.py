"""Square binary-marker family: deterministic dictionary generation, adaptive
binarization, quad extraction with sub-pixel corner fit, and decoding."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import cv2
import numpy as np

from .imaging import BinaryMask, GrayFrame
from .pose_solver import dlt_homography

MIN_QUAD_AREA = 100.0
POLY_TOLERANCE = 0.03  # fraction of perimeter, for polygon simplification
SEARCH_LIMIT = 10**6


class InfeasibleDictionaryError(ValueError):
    pass


class DictionaryFormatError(ValueError):
    pass


def _rotations(code: np.ndarray):
    yield code
    r = code
    for _ in range(3):
        r = np.rot90(r)
        yield r


def rotation_aware_hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Minimum Hamming distance between a and any 90-degree rotation of b."""
    return min(int(np.sum(a != r)) for r in _rotations(b))


@dataclass(frozen=True)
class MarkerDictionary:
    grid_n: int
    codes: tuple  # tuple of (n, n) uint8 bit matrices, index == id
    d_min: int
    seed: int

    @property
    def max_correction(self) -> int:
        return (self.d_min - 1) // 2

    def export_text(self) -> str:
        lines = []
        for i, code in enumerate(self.codes):
            bits = "".join(str(int(b)) for b in code.ravel())
            lines.append(f"{i} {bits}\n")
        return "".join(lines)

    @staticmethod
    def import_text(text: str, grid_n: int, d_min: int, seed: int = 0) -> "MarkerDictionary":
        codes = []
        for ln, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2 or len(parts[1]) != grid_n * grid_n:
                raise DictionaryFormatError(f"bad dictionary line {ln}")
            if int(parts[0]) != len(codes):
                raise DictionaryFormatError(f"ids must be consecutive from 0 (line {ln})")
            bits = np.array([int(ch) for ch in parts[1]], dtype=np.uint8)
            codes.append(bits.reshape(grid_n, grid_n))
        return MarkerDictionary(grid_n, tuple(codes), d_min, seed)


def generate_dictionary(
    count: int, grid_n: int = 4, d_min: int = 4, seed: int = 0
) -> MarkerDictionary:
    """Random search for `count` codes with pairwise (and self-) rotation-aware
    Hamming distance >= d_min. Deterministic for a fixed seed."""
    if count < 1 or d_min < 1:
        raise ValueError("count and d_min must be >= 1")
    rng = random.Random(seed)
    n2 = grid_n * grid_n
    codes: list[np.ndarray] = []
    tried = 0
    while len(codes) < count:
        if tried >= SEARCH_LIMIT:
            raise InfeasibleDictionaryError(
                f"could not find {count} codes with d_min={d_min} within {SEARCH_LIMIT} candidates"
            )
        tried += 1
        bits = rng.getrandbits(n2)
        code = np.array([(bits >> i) & 1 for i in range(n2)], dtype=np.uint8)
        code = code.reshape(grid_n, grid_n)
        # reject rotation-symmetric candidates
        rots = list(_rotations(code))[1:]
        if any(int(np.sum(code != r)) < d_min for r in rots):
            continue
        if any(rotation_aware_hamming(existing, code) < d_min for existing in codes):
            continue
        codes.append(code)
    return MarkerDictionary(grid_n, tuple(codes), d_min, seed)


@dataclass(frozen=True)
class Quad:
    """Convex 4-gon with sub-pixel corners, canonical winding (positive
    shoelace in image coordinates, start at the topmost-leftmost corner)."""

    corners: np.ndarray  # (4,2) float

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float).reshape(4, 2)
        object.__setattr__(self, "corners", c)

    @property
    def area(self) -> float:
        c = self.corners
        return 0.5 * abs(
            float(np.dot(c[:, 0], np.roll(c[:, 1], -1)) - np.dot(c[:, 1], np.roll(c[:, 0], -1)))
        )


@dataclass(frozen=True)
class DetectedMarker:
    id: int
    corners: np.ndarray  # (4,2) image pixels for marker-frame TL, TR, BR, BL
    rotation_applied: int  # 0..3
    hamming: int
    marker_size: float = 0.0  # meters, filled in by the engine config


def binarize_adaptive(gray: GrayFrame, window: int = 15, C: float = 7.0) -> BinaryMask:
    """Dark where value < local mean - C; window is clamped at the borders."""
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    px = gray.pixels.astype(np.float64)
    h, w = px.shape
    half = window // 2
    # integral image with clamped rectangles
    ii = np.zeros((h + 1, w + 1))
    ii[1:, 1:] = px.cumsum(axis=0).cumsum(axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - half, 0, h)[:, None]
    y1 = np.clip(ys + half + 1, 0, h)[:, None]
    x0 = np.clip(xs - half, 0, w)[None, :]
    x1 = np.clip(xs + half + 1, 0, w)[None, :]
    total = ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]
    area = (y1 - y0) * (x1 - x0)
    mean = total / area
    return BinaryMask(px < mean - C)


def _fit_line_tls(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total least squares line through pts (N,2): returns (point, unit dir)."""
    mean = pts.mean(axis=0)
    centered = pts - mean
    _, _, Vt = np.linalg.svd(centered, full_matrices=False)
    return mean, Vt[0]


def _intersect(p1, u1, p2, u2) -> np.ndarray | None:
    A = np.column_stack([u1, -u2])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if abs(det) < 1e-9:
        return None
    ab = np.linalg.solve(A, p2 - p1)
    return p1 + ab[0] * u1


def _refine_corners(contour: np.ndarray, approx: np.ndarray) -> np.ndarray | None:
    """Fit a line to the boundary pixels of each quad edge and intersect
    adjacent lines. Boundary-pixel centers sit up to one pixel inside the true
    edge, so each fitted line is pushed 0.5 px along the outward normal."""
    n = len(contour)
    centroid = contour.mean(axis=0)
    idx = []
    for v in approx:
        d = np.sum((contour - v) ** 2, axis=1)
        idx.append(int(np.argmin(d)))
    lines = []
    for k in range(4):
        i0, i1 = idx[k], idx[(k + 1) % 4]
        if i1 >= i0:
            seg = contour[i0 : i1 + 1]
        else:
            seg = np.vstack([contour[i0:], contour[: i1 + 1]])
        trim = max(2, len(seg) // 8)
        if len(seg) - 2 * trim < 4:
            return None
        seg = seg[trim:-trim].astype(float)
        p, u = _fit_line_tls(seg)
        normal = np.array([-u[1], u[0]])
        if np.dot(normal, p - centroid) < 0:
            normal = -normal
        lines.append((p + 0.5 * normal, u))
    corners = []
    for k in range(4):
        p1, u1 = lines[(k - 1) % 4]
        p2, u2 = lines[k]
        pt = _intersect(p1, u1, p2, u2)
        if pt is None:
            return None
        corners.append(pt)
    return np.array(corners)


def _canonical_quad(corners: np.ndarray) -> Quad:
    c = corners
    # positive shoelace in image coordinates (x right, y down)
    s = float(np.dot(c[:, 0], np.roll(c[:, 1], -1)) - np.dot(c[:, 1], np.roll(c[:, 0], -1)))
    if s < 0:
        c = c[::-1]
    start = int(np.lexsort((c[:, 0], c[:, 1]))[0])
    return Quad(np.roll(c, -start, axis=0))


def extract_quads(mask: BinaryMask, min_area: float = MIN_QUAD_AREA) -> list[Quad]:
    """Trace outer borders of dark regions and keep convex quadrilaterals."""
    img = mask.bits.astype(np.uint8) * 255
    contours, _ = cv2.findContours(img, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    quads = []
    for contour in contours:
        contour = contour.reshape(-1, 2)
        if len(contour) < 16:
            continue
        peri = cv2.arcLength(contour.reshape(-1, 1, 2), True)
        approx = cv2.approxPolyDP(contour.reshape(-1, 1, 2), POLY_TOLERANCE * peri, True)
        if len(approx) != 4:
            continue
        approx = approx.reshape(4, 2)
        if not cv2.isContourConvex(approx.reshape(-1, 1, 2)):
            continue
        if cv2.contourArea(approx.reshape(-1, 1, 2)) < min_area:
            continue
        refined = _refine_corners(contour, approx)
        if refined is None:
            refined = approx.astype(float)
        quads.append(_canonical_quad(refined))
    return quads


def _sample_cells(gray: np.ndarray, quad: Quad, grid: int, sub: int = 3) -> np.ndarray:
    """Sample every cell's central 50% region; returns (grid, grid, sub*sub)."""
    dst = quad.corners
    src = np.array([[0.0, 0.0], [grid, 0.0], [grid, grid], [0.0, grid]])
    H = dlt_homography(src, dst)
    offs = 0.25 + 0.5 * (np.arange(sub) + 0.5) / sub
    gx, gy = np.meshgrid(offs, offs)
    cell_pts = np.stack([gx.ravel(), gy.ravel()], axis=1)  # (sub*sub, 2)
    cols, rows = np.meshgrid(np.arange(grid), np.arange(grid))
    base = np.stack([cols.ravel(), rows.ravel()], axis=1)  # (grid*grid, 2)
    pts = base[:, None, :] + cell_pts[None, :, :]  # (G2, S, 2)
    flat = pts.reshape(-1, 2)
    ph = np.column_stack([flat, np.ones(len(flat))]) @ H.T
    uv = ph[:, :2] / ph[:, 2:3]
    h, w = gray.shape
    u = np.clip(np.rint(uv[:, 0]).astype(int), 0, w - 1)
    v = np.clip(np.rint(uv[:, 1]).astype(int), 0, h - 1)
    vals = gray[v, u].astype(np.float64)
    return vals.reshape(grid, grid, sub * sub)


def decode(
    gray: GrayFrame, quad: Quad, dictionary: MarkerDictionary
) -> DetectedMarker | None:
    """Unwarp the quad to a cell grid, read the bits and match the dictionary.

    Returns None (no match) when the border check fails, no code lies within
    the correction budget, or two codes tie.
    """
    n = dictionary.grid_n
    grid = n + 2
    samples = _sample_cells(gray.pixels, quad, grid)
    cell_means = samples.mean(axis=2)
    lo, hi = float(cell_means.min()), float(cell_means.max())
    threshold = (lo + hi) / 2.0 if hi - lo >= 32.0 else 128.0
    dark_votes = (samples < threshold).sum(axis=2)
    dark = dark_votes * 2 > samples.shape[2]

    border = dark.copy()
    border[1:-1, 1:-1] = True
    if not border.all():
        return None

    bits = dark[1:-1, 1:-1].astype(np.uint8)
    best = None  # (hamming, id, rotation)
    second_id = None
    for k in range(4):
        rotated = np.rot90(bits, k)
        for code_id, code in enumerate(dictionary.codes):
            ham = int(np.sum(rotated != code))
            if ham <= dictionary.max_correction:
                if best is None or ham < best[0]:
                    if best is not None and best[1] != code_id:
                        second_id = best[1]
                    best = (ham, code_id, k)
                elif best[1] != code_id:
                    second_id = code_id
    if best is None or second_id is not None:
        return None
    ham, code_id, k = best
    corners = np.array([quad.corners[(i + k) % 4] for i in range(4)])
    return DetectedMarker(id=code_id, corners=corners, rotation_applied=k, hamming=ham)


def detect_markers(
    gray: GrayFrame,
    dictionary: MarkerDictionary,
    window: int = 15,
    C: float = 7.0,
    min_area: float = MIN_QUAD_AREA,
) -> list[DetectedMarker]:
    """Binarize, extract quads and decode; one detection per marker id (the
    lower-hamming one wins on duplicates)."""
    mask = binarize_adaptive(gray, window, C)
    found: dict[int, DetectedMarker] = {}
    for quad in extract_quads(mask, min_area):
        m = decode(gray, quad, dictionary)
        if m is None:
            continue
        if m.id not in found or m.hamming < found[m.id].hamming:
            found[m.id] = m
    return [found[i] for i in sorted(found)]
