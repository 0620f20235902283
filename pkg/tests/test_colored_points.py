import math

import numpy as np
import pytest

from fidtrack.colored_points import (
    ColorClass,
    ColoredPointsConfig,
    HsvRange,
    ObjectTopology,
    classify_and_cluster,
    resolve_topology,
    smooth_masses,
)
from fidtrack.imaging import Frame

RED = ColorClass(id=0, name="red", range=HsvRange(h_lo=350.0, h_hi=10.0, s_lo=0.5, v_lo=0.5))
GREEN = ColorClass(id=1, name="green", range=HsvRange(h_lo=100.0, h_hi=140.0, s_lo=0.5, v_lo=0.5))
BLUE = ColorClass(id=2, name="blue", range=HsvRange(h_lo=220.0, h_hi=260.0, s_lo=0.5, v_lo=0.5))
YELLOW = ColorClass(id=3, name="yellow", range=HsvRange(h_lo=40.0, h_hi=80.0, s_lo=0.5, v_lo=0.5))
CLASSES = [RED, GREEN, BLUE, YELLOW]
CLASS_RGB = {0: (255, 0, 0), 1: (0, 255, 0), 2: (0, 0, 255), 3: (255, 255, 0)}


def paint_blob(img, cx, cy, radius, rgb):
    ys, xs = np.mgrid[0 : img.shape[0], 0 : img.shape[1]]
    inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2
    img[inside] = rgb
    return inside


def random_separated_blobs(rng, size, count, radius, gap):
    """Blob centers of random classes whose disks are pairwise farther than gap."""
    blobs = []
    attempts = 0
    while len(blobs) < count and attempts < 500:
        attempts += 1
        cx = rng.integers(radius, size - radius)
        cy = rng.integers(radius, size - radius)
        if all(math.hypot(cx - x, cy - y) > 2 * radius + gap for x, y, _ in blobs):
            blobs.append((int(cx), int(cy), int(rng.integers(0, len(CLASSES)))))
    return blobs


def brute_force_masses(frame, classes, cfg):
    """Oracle: classify each pixel, then link same-class pixels within
    dist_cutoff into connected components (union-find over all pairs)."""
    from fidtrack.imaging import rgb_image_to_hsv

    h, s, v = rgb_image_to_hsv(frame.pixels)
    members = {}  # class array index -> list of (x, y)
    for y in range(frame.height):
        for x in range(frame.width):
            for idx, cls in enumerate(classes):
                r = cls.range
                hue_ok = (
                    r.h_lo <= h[y, x] <= r.h_hi
                    if r.h_lo <= r.h_hi
                    else (h[y, x] >= r.h_lo or h[y, x] <= r.h_hi)
                )
                if hue_ok and r.s_lo <= s[y, x] <= r.s_hi and r.v_lo <= v[y, x] <= r.v_hi:
                    members.setdefault(idx, []).append((x, y))
                    break
    out = []
    for idx, pts in members.items():
        parent = list(range(len(pts)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if math.dist(pts[i], pts[j]) <= cfg.dist_cutoff:
                    parent[find(i)] = find(j)
        groups = {}
        for i, p in enumerate(pts):
            groups.setdefault(find(i), []).append(p)
        for g in groups.values():
            if len(g) >= cfg.min_pixels:
                out.append((classes[idx].id, frozenset(g)))
    return set(out)


def test_clustering_matches_brute_force_on_separated_blobs():
    cfg = ColoredPointsConfig(dist_cutoff=4.0, min_pixels=5)
    rng = np.random.default_rng(7)
    for trial in range(50):
        size = int(rng.integers(24, 64))
        img = np.full((size, size, 3), 255, dtype=np.uint8)
        for cx, cy, ci in random_separated_blobs(rng, size, int(rng.integers(1, 5)), 3, 2 * cfg.dist_cutoff):
            paint_blob(img, cx, cy, 3, CLASS_RGB[CLASSES[ci].id])
        frame = Frame(img)
        got = classify_and_cluster(frame, CLASSES, cfg, keep_pixels=True)
        got_sets = {(m.class_id, frozenset(m.pixels)) for m in got}
        assert got_sets == brute_force_masses(frame, CLASSES, cfg)


def test_mass_centroid_and_bbox():
    cfg = ColoredPointsConfig(dist_cutoff=8.0, min_pixels=4)
    img = np.full((20, 20, 3), 255, dtype=np.uint8)
    img[5:9, 10:12] = CLASS_RGB[1]  # 4x2 green rectangle
    masses = classify_and_cluster(Frame(img), CLASSES, cfg)
    assert len(masses) == 1
    m = masses[0]
    assert m.class_id == 1
    assert (m.x_min, m.y_min, m.x_max, m.y_max) == (10, 5, 11, 8)
    assert m.pixel_count == 8
    assert np.allclose(m.centroid, [10.5, 6.5])


def test_min_pixels_filters_small_masses():
    cfg = ColoredPointsConfig(dist_cutoff=8.0, min_pixels=5)
    img = np.full((10, 10, 3), 255, dtype=np.uint8)
    img[2:4, 2:4] = CLASS_RGB[0]  # 4 pixels < min_pixels
    assert classify_and_cluster(Frame(img), CLASSES, cfg) == []


def test_hue_wraparound_class_matches_red():
    cfg = ColoredPointsConfig(dist_cutoff=8.0, min_pixels=1)
    img = np.full((4, 4, 3), 255, dtype=np.uint8)
    img[1, 1] = (255, 0, 20)  # hue ~355, inside the wrapped red window
    masses = classify_and_cluster(Frame(img), CLASSES, cfg)
    assert [m.class_id for m in masses] == [0]


def make_mass(class_id, centroid, smoothed=None):
    from fidtrack.colored_points import ColorMass

    c = np.asarray(centroid, dtype=float)
    return ColorMass(
        class_id=class_id,
        x_min=0,
        y_min=0,
        x_max=1,
        y_max=1,
        pixel_count=9,
        centroid=c,
        smoothed_centroid=np.asarray(smoothed if smoothed is not None else c, float),
    )


def test_ema_recurrence_exact():
    cfg = ColoredPointsConfig(alpha=0.7)
    positions = [np.array([10.0 + k, 5.0]) for k in range(20)]
    prev = []
    expected = None
    for pos in positions:
        cur = smooth_masses(prev, [make_mass(0, pos)], cfg)
        expected = pos if expected is None else 0.7 * pos + 0.3 * expected
        assert np.allclose(cur[0].smoothed_centroid, expected, atol=1e-12)
        prev = cur


def test_smoothing_step_response():
    cfg = ColoredPointsConfig(alpha=0.7)
    prev = [make_mass(0, [0.0, 0.0])]
    cur = smooth_masses(prev, [make_mass(0, [10.0, 0.0])], cfg)
    assert np.allclose(cur[0].smoothed_centroid, [7.0, 0.0], atol=1e-12)


def test_unmatched_mass_starts_fresh():
    cfg = ColoredPointsConfig(alpha=0.7, match_radius=5.0)
    prev = [make_mass(0, [0.0, 0.0])]
    cur = smooth_masses(prev, [make_mass(0, [100.0, 0.0])], cfg)  # beyond radius
    assert np.allclose(cur[0].smoothed_centroid, [100.0, 0.0])


def test_matching_is_class_aware_and_greedy_nearest():
    cfg = ColoredPointsConfig(alpha=0.5, match_radius=50.0)
    prev = [make_mass(0, [0.0, 0.0]), make_mass(1, [1.0, 0.0])]
    cur = smooth_masses(prev, [make_mass(0, [2.0, 0.0])], cfg)
    # must match the class-0 mass at distance 2, not the closer class-1 mass
    assert np.allclose(cur[0].smoothed_centroid, [1.0, 0.0])


def topology():
    return ObjectTopology(object_id="obj", line0=(0, 1), line1=(3, 2), marker_size=0.1)


def test_resolve_topology_orders_corners():
    masses = [
        make_mass(2, [90.0, 90.0]),
        make_mass(0, [10.0, 10.0]),
        make_mass(1, [90.0, 10.0]),
        make_mass(3, [10.0, 90.0]),
    ]
    pts = resolve_topology(masses, topology())
    assert np.allclose(pts, [[10, 10], [90, 10], [90, 90], [10, 90]])  # TL TR BR BL


def test_resolve_topology_requires_exactly_one_candidate_per_slot():
    base = [make_mass(0, [0, 0]), make_mass(1, [1, 0]), make_mass(2, [1, 1]), make_mass(3, [0, 1])]
    assert resolve_topology(base[:3], topology()) is None  # missing slot
    assert resolve_topology(base + [make_mass(0, [5, 5])], topology()) is None  # duplicate


def test_topology_validation():
    with pytest.raises(ValueError):
        ObjectTopology(object_id="x", line0=(0, 1), line1=(1, 2), marker_size=0.1)
    with pytest.raises(ValueError):
        ObjectTopology(object_id="x", line0=(0, 1), line1=(3, 2), marker_size=0.0)
