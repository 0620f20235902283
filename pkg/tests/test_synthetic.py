import numpy as np
import pytest

from fidtrack.binary_marker import generate_dictionary
from fidtrack.geometry import rotation_angle_between
from fidtrack.imaging import to_gray
from fidtrack.synthetic import (
    Placement,
    SceneScript,
    facing_pose,
    load_scene,
    render_frame,
    size_sweep,
)

SCENE_TEXT = """\
schema: fidtrack-scene/1
camera: {fx: 800, fy: 800, cx: 320, cy: 240, width: 640, height: 480}
dictionary: {count: 4, grid_n: 4, d_min: 4, seed: 0}
noise_sigma: 0.0
frames:
  - placements:
      - {kind: binary, marker_id: 1, size: 0.1, pose: {tilt_deg: 15, t: [0, 0, 0.5]}}
  - placements: []
"""


@pytest.fixture(scope="module")
def dictionary():
    return generate_dictionary(4, grid_n=4, d_min=4, seed=0)


def frontal_script(camera, dictionary, size=0.1, z=0.5, frames=1):
    placement = Placement("binary", facing_pose(t=[0.0, 0.0, z]), size, marker_id=0)
    return SceneScript(camera=camera, dictionary=dictionary, frames=((placement,),) * frames)


def test_render_is_deterministic(camera, dictionary):
    script = frontal_script(camera, dictionary)
    a, _ = render_frame(script, 0)
    b, _ = render_frame(script, 0)
    assert (a.pixels == b.pixels).all()


def test_noise_is_seed_deterministic(camera, dictionary):
    base = frontal_script(camera, dictionary)
    s1 = SceneScript(**{**base.__dict__, "noise_sigma": 2.0, "seed": 5})
    s2 = SceneScript(**{**base.__dict__, "noise_sigma": 2.0, "seed": 5})
    s3 = SceneScript(**{**base.__dict__, "noise_sigma": 2.0, "seed": 6})
    a, _ = render_frame(s1, 0)
    b, _ = render_frame(s2, 0)
    c, _ = render_frame(s3, 0)
    assert (a.pixels == b.pixels).all()
    assert (a.pixels != c.pixels).any()


def test_frontal_marker_covers_expected_pixel_area(camera, dictionary):
    size, z = 0.1, 0.5
    frame, _ = render_frame(frontal_script(camera, dictionary, size, z), 0)
    gray = to_gray(frame).pixels
    # marker square occupies (size*fx/z)^2 pixels; dark cells are a subset,
    # but the square's bounding box of non-white pixels matches the edge length
    ys, xs = np.nonzero(gray < 128)
    edge_px = size * camera.fx / z
    assert xs.max() - xs.min() == pytest.approx(edge_px, abs=2)
    assert ys.max() - ys.min() == pytest.approx(edge_px, abs=2)
    # centered on the principal point
    assert (xs.min() + xs.max()) / 2 == pytest.approx(camera.cx, abs=1.5)
    assert (ys.min() + ys.max()) / 2 == pytest.approx(camera.cy, abs=1.5)


def test_facing_pose_tilt_angle():
    for tilt_deg in (0.0, 15.0, 40.0):
        pose = facing_pose(tilt_axis=[0.3, 1.0, 0.0], tilt=np.deg2rad(tilt_deg))
        frontal = facing_pose()
        assert rotation_angle_between(pose.rotation, frontal.rotation) == pytest.approx(
            np.deg2rad(tilt_deg), abs=1e-12
        )


def test_facing_pose_normal_faces_camera():
    pose = facing_pose(tilt=np.deg2rad(30), t=[0.0, 0.0, 0.5])
    normal_cam = pose.rotation[:, 2]
    assert normal_cam[2] < 0  # marker +z points back toward the camera


def test_ground_truth_matches_placements(camera, dictionary):
    script = frontal_script(camera, dictionary)
    _, truths = render_frame(script, 0)
    assert len(truths) == 1
    assert truths[0].object_id == "binary:0"
    assert truths[0].size == 0.1


def test_placement_validation(camera):
    with pytest.raises(ValueError):
        Placement("binary", facing_pose(t=[0, 0, -0.5]), 0.1)
    with pytest.raises(ValueError):
        Placement("colored", facing_pose(), 0.1, corner_colors=((255, 0, 0),))


def test_load_scene_round_trip(camera):
    script = load_scene(SCENE_TEXT)
    assert script.frame_count == 2
    assert script.camera == camera
    frame, truths = render_frame(script, 0)
    assert truths[0].object_id == "binary:1"
    _, empty = render_frame(script, 1)
    assert empty == []


def test_load_scene_rejects_wrong_schema():
    with pytest.raises(ValueError):
        load_scene(SCENE_TEXT.replace("fidtrack-scene/1", "fidtrack-scene/2"))


def test_load_scene_explicit_rotation(camera):
    text = """\
schema: fidtrack-scene/1
camera: {fx: 800, fy: 800, cx: 320, cy: 240, width: 640, height: 480}
frames:
  - placements:
      - kind: colored
        object_id: wand
        size: 0.1
        corner_colors: [[255,0,0],[0,255,0],[0,0,255],[255,255,0]]
        pose:
          rotation: [1, 0, 0, 0, -1, 0, 0, 0, -1]
          t: [0, 0, 0.4]
"""
    script = load_scene(text)
    p = script.frames[0][0]
    assert p.kind == "colored"
    assert np.allclose(p.pose.rotation, np.diag([1.0, -1.0, -1.0]))


def test_size_sweep_reports_rates(camera, dictionary):
    from fidtrack.binary_marker import detect_markers

    def make_script(size):
        return frontal_script(camera, dictionary, size=size, z=0.5, frames=2)

    def run_frame(frame, truths):
        found = detect_markers(to_gray(frame), dictionary)
        return any(m.id == 0 for m in found)

    rows = size_sweep(make_script, [0.004, 0.1], run_frame, frames_per_size=2)
    assert [size for size, _ in rows] == [0.004, 0.1]
    assert rows[0][1] == 0.0  # ~6 px projected: undetectable
    assert rows[1][1] == 1.0  # 160 px projected: always detected
