"""Acceptance suite: one test per headline criterion, each ending in a single
PASS line (pytest reports the FAIL side). These are end-to-end checks over the
public pipeline; the per-module suites carry the fine-grained properties.
"""

import json
import os
import socket
import threading
import time

import numpy as np
import pytest

from fidtrack import engine, streaming
from fidtrack.binary_marker import (
    decode,
    detect_markers,
    generate_dictionary,
    rotation_aware_hamming,
)
from fidtrack.colored_points import (
    ColoredPointsConfig,
    classify_and_cluster,
    resolve_topology,
    smooth_masses,
)
from fidtrack.engine import DetectionRateTracker, TrackerRuntime
from fidtrack.geometry import (
    CameraIntrinsics,
    DistortionCoeffs,
    project_points,
    rotation_angle_between,
)
from fidtrack.imaging import Frame, to_gray
from fidtrack.pattern_refine import chebyshev_polish, refine_pose_on_pattern
from fidtrack.pose_solver import (
    Correspondences,
    apply_update,
    dlt_homography,
    residual_jacobian,
    solve_planar_pose,
    square_model_points,
)
from fidtrack.synthetic import (
    Placement,
    SceneScript,
    facing_pose,
    render_frame,
    size_sweep,
)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
K = CameraIntrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0, width=640, height=480)
D0 = DistortionCoeffs()


def test_criterion_1_pose_round_trip():
    """200 random poses, distance 0.2-1.0 m, tilt <= 45 deg, noiseless:
    translation within max(1e-4 m, 0.1% of distance), rotation within 0.1 deg,
    under 60 s total. Marker size scales with distance (0.28 * z) so the
    projected size stays constant, as a physical deployment would choose."""
    dic = generate_dictionary(50, grid_n=6, d_min=8, seed=1)
    rng = np.random.default_rng(42)
    start = time.time()
    t_errors, t_tols, r_errors = [], [], []
    for i in range(200):
        tilt = rng.uniform(0, np.deg2rad(45))
        roll = rng.uniform(0, 2 * np.pi)
        phi = rng.uniform(0, 2 * np.pi)
        z = rng.uniform(0.2, 1.0)
        size = 0.28 * z
        t = np.array([rng.uniform(-0.03, 0.03) * z, rng.uniform(-0.02, 0.02) * z, z])
        pose = facing_pose([np.cos(phi), np.sin(phi), 0.0], tilt, roll, t)
        mid = int(rng.integers(0, 50))
        script = SceneScript(
            camera=K, frames=((Placement("binary", pose, size, marker_id=mid),),), dictionary=dic
        )
        frame, _ = render_frame(script, 0)
        gray = to_gray(frame)
        detections = [m for m in detect_markers(gray, dic) if m.id == mid]
        assert detections, f"pose {i}: marker not detected"
        result = solve_planar_pose(detections[0].corners, size, K, D0)
        dark = gray.pixels < 128
        refined = refine_pose_on_pattern(
            result.best.pose, dic.codes[mid], size, dark, K, D0, iterations=6
        )
        refined = chebyshev_polish(refined, dic.codes[mid], size, dark, K, D0)
        t_errors.append(float(np.linalg.norm(refined.translation - t)))
        t_tols.append(max(1e-4, 0.001 * float(np.linalg.norm(t))))
        r_errors.append(
            float(np.rad2deg(rotation_angle_between(refined.rotation, pose.rotation)))
        )
    elapsed = time.time() - start
    t_errors, t_tols, r_errors = map(np.array, (t_errors, t_tols, r_errors))
    assert (t_errors <= t_tols).all(), (
        f"translation failures: {int((t_errors > t_tols).sum())}/200, max {t_errors.max():.2e}"
    )
    assert (r_errors <= 0.1).all(), (
        f"rotation failures: {int((r_errors > 0.1).sum())}/200, max {r_errors.max():.4f} deg"
    )
    assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 60s"
    print(
        f"PASS criterion 1: pose round-trip 200/200 "
        f"(t max {t_errors.max():.1e} m, r max {r_errors.max():.4f} deg, {elapsed:.1f}s)"
    )


COLORED_DOC = {
    "schema": "fidtrack-config/1",
    "camera": {"fx": 800, "fy": 800, "cx": 320, "cy": 240, "width": 640, "height": 480},
    "colored_points": {
        "params": {"dist_cutoff": 32, "min_pixels": 8, "alpha": 0.7, "match_radius": 64},
        "classes": [
            {"id": 0, "name": "red", "h_lo": 350, "h_hi": 10, "s_lo": 0.5, "v_lo": 0.5},
            {"id": 1, "name": "green", "h_lo": 100, "h_hi": 140, "s_lo": 0.5, "v_lo": 0.5},
            {"id": 2, "name": "blue", "h_lo": 220, "h_hi": 260, "s_lo": 0.5, "v_lo": 0.5},
            {"id": 3, "name": "yellow", "h_lo": 40, "h_hi": 80, "s_lo": 0.5, "v_lo": 0.5},
        ],
        "objects": [
            {"object_id": "wand", "line0": [0, 1], "line1": [3, 2], "marker_size": 0.16}
        ],
    },
}


def test_criterion_2_colored_points_pipeline():
    """60-frame drifting 4-disk square: detection rate 1.0 and pose within the
    criterion-1 tolerances every frame; EMA matches the alpha=0.7 recurrence."""
    cfg = engine.config_from_dict(COLORED_DOC)
    colors = ((255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0))
    z = 0.4
    poses = [
        facing_pose(t=[-0.003 + 1e-4 * i, 0.001, z + 2e-4 * i]) for i in range(60)
    ]
    frames = tuple(
        (Placement("colored", p, 0.16, object_id="wand", corner_colors=colors),)
        for p in poses
    )
    script = SceneScript(camera=K, frames=frames)
    runtime = TrackerRuntime(cfg)
    for i in range(60):
        frame, _ = render_frame(script, i)
        records = runtime.process_frame(frame)
        assert [r.object_id for r in records] == ["wand"], f"frame {i}: not detected"
        rec = records[0]
        t_tol = max(1e-4, 0.001 * float(np.linalg.norm(poses[i].translation)))
        t_err = float(np.linalg.norm(rec.pose.translation - poses[i].translation))
        r_err = np.rad2deg(rotation_angle_between(rec.pose.rotation, poses[i].rotation))
        assert t_err <= t_tol, f"frame {i}: t err {t_err:.2e} > {t_tol:.2e}"
        assert r_err <= 0.1, f"frame {i}: r err {r_err:.4f} deg"
    assert runtime.rates["wand"].rate == 1.0

    # EMA response against the closed-form alpha=0.7 recurrence
    from fidtrack.colored_points import ColorMass

    cfg = ColoredPointsConfig(alpha=0.7)

    def mass(c, smoothed=None):
        c = np.asarray(c, float)
        return ColorMass(0, 0, 0, 1, 1, 9, c, np.asarray(smoothed if smoothed is not None else c, float))

    rng = np.random.default_rng(3)
    prev = []
    expected = None
    pos = np.array([50.0, 50.0])
    for _ in range(100):
        pos = pos + rng.uniform(-15, 15, size=2)  # stays within match_radius
        cur = smooth_masses(prev, [mass(pos)], cfg)
        expected = pos if expected is None else 0.7 * pos + 0.3 * expected
        assert np.abs(cur[0].smoothed_centroid - expected).max() < 1e-9
        prev = cur
    print("PASS criterion 2: colored-points pipeline 60/60 frames, EMA recurrence < 1e-9")


def test_criterion_3_detection_rate_arithmetic():
    tracker = DetectionRateTracker()
    for i in range(60):
        tracker.update(i % 5 != 0)
    assert tracker.rate == 0.8, f"48-of-60 reported {tracker.rate}"

    rng = np.random.default_rng(11)
    for _ in range(10_000):
        n = int(rng.integers(1, 150))
        pattern = rng.random(n) < rng.random()
        t = DetectionRateTracker()
        for hit in pattern:
            t.update(bool(hit))
        window = pattern[-60:]
        assert t.rate == window.sum() / len(window)
    print("PASS criterion 3: 48/60 = 0.8 exact; 10^4 random patterns match brute force")


def test_criterion_4_clustering_oracle_equivalence():
    from test_colored_points import (
        CLASSES,
        CLASS_RGB,
        brute_force_masses,
        paint_blob,
        random_separated_blobs,
    )

    cfg = ColoredPointsConfig(dist_cutoff=4.0, min_pixels=5)
    rng = np.random.default_rng(20)
    for trial in range(500):
        size = int(rng.integers(20, 65))
        img = np.full((size, size, 3), 255, dtype=np.uint8)
        for cx, cy, ci in random_separated_blobs(
            rng, size, int(rng.integers(1, 5)), 3, 2 * cfg.dist_cutoff
        ):
            paint_blob(img, cx, cy, 3, CLASS_RGB[CLASSES[ci].id])
        frame = Frame(img)
        got = {(m.class_id, frozenset(m.pixels)) for m in classify_and_cluster(frame, CLASSES, cfg, keep_pixels=True)}
        assert got == brute_force_masses(frame, CLASSES, cfg), f"trial {trial}"
    print("PASS criterion 4: clustering equals brute-force components on 500 frames")


def test_criterion_5_dictionary_integrity():
    dic = generate_dictionary(50, grid_n=4, d_min=4, seed=0)
    assert len(dic.codes) == 50
    for i in range(50):
        for k in range(1, 4):
            assert int(np.sum(dic.codes[i] != np.rot90(dic.codes[i], k))) >= 4
        for j in range(i + 1, 50):
            assert rotation_aware_hamming(dic.codes[i], dic.codes[j]) >= 4

    from test_binary_marker import render_axis_aligned

    n = dic.grid_n
    for mid in range(50):
        for flip in range(n * n):
            code = dic.codes[mid].copy()
            code[flip // n, flip % n] ^= 1
            gray, quad = render_axis_aligned(code, cell_px=4)  # 24 px marker
            m = decode(gray, quad, dic)
            assert m is not None and m.id == mid and m.hamming == 1, f"id {mid} flip {flip}"
    print("PASS criterion 5: 50-code dictionary d>=4 exhaustive; all 800 single-bit flips corrected")


def test_criterion_6_homography_and_solver_numerics():
    rng = np.random.default_rng(5)
    # DLT transfer error on exact inputs
    for _ in range(100):
        H = rng.normal(size=(3, 3))
        if abs(np.linalg.det(H)) < 0.1:
            continue
        src = rng.uniform(-1, 1, size=(5, 2))
        q = np.c_[src, np.ones(5)] @ H.T
        dst = q[:, :2] / q[:, 2:3]
        He = dlt_homography(src, dst)
        qe = np.c_[src, np.ones(5)] @ He.T
        assert np.abs(qe[:, :2] / qe[:, 2:3] - dst).max() < 1e-8

    # Jacobian vs central differences
    model = square_model_points(0.12)
    for _ in range(20):
        pose = facing_pose(
            [1.0, 0.3, 0.0], rng.uniform(0.1, 0.8), rng.uniform(0, 6), [0.01, -0.01, 0.5]
        )
        image = project_points(pose, model, K, D0) + rng.normal(scale=0.3, size=(4, 2))
        c = Correspondences(model_points=model, image_points=image)
        J = residual_jacobian(pose, c, K, D0)
        for k in range(6):
            d = np.zeros(6)
            d[k] = 1e-6
            rp = (project_points(apply_update(pose, d), model, K, D0) - image).ravel()
            rm = (project_points(apply_update(pose, -d), model, K, D0) - image).ravel()
            fd = (rp - rm) / 2e-6
            assert np.abs(J[:, k] - fd).max() / max(np.abs(fd).max(), 1.0) < 1e-4

    # candidate ordering on every solve
    ordered = 0
    for _ in range(200):
        pose = facing_pose([1, 0, 0], rng.uniform(0.02, 0.9), rng.uniform(0, 6),
                           [rng.uniform(-0.05, 0.05), 0.0, rng.uniform(0.3, 0.9)])
        image = project_points(pose, square_model_points(0.08), K, D0)
        image = image + rng.normal(scale=0.25, size=image.shape)
        try:
            result = solve_planar_pose(image, 0.08, K, D0)
        except Exception:
            continue
        if result.alternate is not None:
            assert result.best.rms_error <= result.alternate.rms_error
            ordered += 1
    assert ordered > 50
    print("PASS criterion 6: DLT < 1e-8, Jacobian vs FD < 1e-4, candidates rms-ordered")


def test_criterion_7_size_sweep_trend():
    dic = generate_dictionary(8, grid_n=4, d_min=4, seed=0)
    z = 0.5  # fixed distance; projected edge = size * fx / z = 1600 * size px

    def make_script(size):
        frames = tuple(
            (
                Placement(
                    "binary",
                    facing_pose([1.0, 0.0, 0.0], np.deg2rad(12), roll=i * 0.1, t=[0, 0, z]),
                    size,
                    marker_id=0,
                ),
            )
            for i in range(60)
        )
        return SceneScript(camera=K, dictionary=dic, frames=frames)

    def run_frame(frame, truths):
        return any(m.id == 0 for m in detect_markers(to_gray(frame), dic))

    sizes = [0.002, 0.00375, 0.0075, 0.015, 0.03, 0.06]  # 3.2 .. 96 px projected
    rows = size_sweep(make_script, sizes, run_frame, frames_per_size=60)
    rates = [rate for _, rate in rows]
    assert all(a <= b for a, b in zip(rates, rates[1:])), f"not monotone: {rates}"
    assert rates[1] == 0.0, f"6 px projected should be undetectable, rate {rates[1]}"
    assert rates[3] == 1.0, f"24 px projected should always detect, rate {rates[3]}"
    print(f"PASS criterion 7: size-sweep rates {rates} non-decreasing, sharp 6->24 px threshold")


def test_criterion_8_wire_golden_files():
    # byte-identical replay of the committed video + config
    with open(os.path.join(DATA_DIR, "golden_config.yaml"), encoding="utf-8") as fh:
        cfg = engine.load_config(fh.read())
    runtime = TrackerRuntime(cfg)
    source = engine.RawVideoSource(os.path.join(DATA_DIR, "golden_video.ftrk"))
    lines = []
    while (frame := source.next_frame()) is not None:
        records = runtime.process_frame(frame)
        lines.append(streaming.encode_record(frame.frame_index, frame.timestamp_us, records))
    produced = b"".join(lines)
    with open(os.path.join(DATA_DIR, "golden_stream.ndjson"), "rb") as fh:
        golden = fh.read()
    assert produced == golden, "replay differs from committed golden stream"
    assert len(lines) == 5 and lines[3].endswith(b'"objects":[]}\n')

    # two concurrent consumers receive identical bytes
    srv = streaming.PoseStreamServer("tcp", port=0)
    try:
        c1 = socket.create_connection(srv.address)
        c2 = socket.create_connection(srv.address)
        time.sleep(0.1)
        for line in lines:
            srv.publish(line)
        def read_all(conn, n):
            conn.settimeout(5)
            buf = b""
            while buf.count(b"\n") < n:
                buf += conn.recv(65536)
            return buf
        assert read_all(c1, 5) == read_all(c2, 5) == produced
        c1.close()
        c2.close()

        # slow-consumer disconnect at the 1024-record backlog, publisher unstalled
        slow = socket.create_connection(srv.address)
        time.sleep(0.1)
        big = streaming.encode_record(0, 0, []).replace(b"[]", b'["' + b"x" * 40000 + b'"]')
        start = time.perf_counter()
        for i in range(streaming.CONSUMER_BACKLOG_LIMIT + 200):
            srv.publish(big)
        assert time.perf_counter() - start < 5.0
        deadline = time.time() + 5.0
        while srv.consumer_count > 0 and time.time() < deadline:
            time.sleep(0.05)
        assert srv.consumer_count == 0
        slow.close()
    finally:
        srv.close()
    print("PASS criterion 8: golden replay byte-identical; broadcast identical; backlog disconnect")
