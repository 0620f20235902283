"""Synthetic scene renderer: the ground-truth oracle for every detector and
solver claim. Inverse-mapped rasterization through the same camera model the
pose pipeline assumes, nearest-neighbor sampling, no anti-aliasing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binary_marker import MarkerDictionary
from .geometry import (
    CameraIntrinsics,
    DistortionCoeffs,
    Pose,
    project_points,
    undistort_normalized,
)
from .imaging import Frame
from .pose_solver import square_model_points

DISK_RADIUS_FRACTION = 0.15  # of the square edge
QUIET_ZONE_CELLS = 1  # white margin around binary markers, in cell widths

BLACK = np.array([0, 0, 0], dtype=np.uint8)
WHITE = np.array([255, 255, 255], dtype=np.uint8)


@dataclass(frozen=True)
class Placement:
    """One marker instance in a frame."""

    kind: str  # "binary" | "colored"
    pose: Pose
    size: float  # meters, outer edge length
    marker_id: int = 0  # binary only
    object_id: str = ""  # colored only
    corner_colors: tuple = ()  # colored only: 4 RGB triples, TL TR BR BL

    def __post_init__(self):
        if self.kind not in ("binary", "colored"):
            raise ValueError("kind must be 'binary' or 'colored'")
        if self.pose.translation[2] <= 0:
            raise ValueError("placement pose must have positive depth")
        if self.kind == "colored" and len(self.corner_colors) != 4:
            raise ValueError("colored placement needs 4 corner colors")


@dataclass(frozen=True)
class GroundTruth:
    kind: str
    object_id: str  # "binary:<id>" or the colored object id
    pose: Pose
    size: float


@dataclass(frozen=True)
class SceneScript:
    camera: CameraIntrinsics
    distortion: DistortionCoeffs = DistortionCoeffs()
    background: tuple = (255, 255, 255)
    noise_sigma: float = 0.0
    seed: int = 0
    frames: tuple = ()  # tuple of tuples of Placement
    dictionary: MarkerDictionary | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)


def facing_pose(
    tilt_axis: np.ndarray | None = None,
    tilt: float = 0.0,
    roll: float = 0.0,
    t: np.ndarray = (0.0, 0.0, 0.5),
) -> Pose:
    """A camera-facing marker pose: the frontal base orientation (marker y up
    maps to image up) optionally tilted about an in-plane axis and rolled
    about the viewing axis."""
    from .geometry import axis_angle_to_matrix

    base = np.diag([1.0, -1.0, -1.0])  # frontal: marker normal toward camera
    R = base
    if roll != 0.0:
        R = R @ axis_angle_to_matrix(np.array([0.0, 0.0, roll]))
    if tilt != 0.0:
        axis = np.asarray(tilt_axis if tilt_axis is not None else [1.0, 0.0, 0.0], float)
        axis = axis / np.linalg.norm(axis)
        R = axis_angle_to_matrix(axis * tilt) @ R
    return Pose(R, np.asarray(t, dtype=float))


def _ray_dirs(script: SceneScript, x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
    """Camera-frame ray directions (h, w, 3) for the pixel window [y0:y1, x0:x1]."""
    K = script.camera
    us, vs = np.meshgrid(np.arange(x0, x1, dtype=float), np.arange(y0, y1, dtype=float))
    xy = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy], axis=-1)
    xy = undistort_normalized(xy, script.distortion)
    return np.concatenate([xy, np.ones(xy.shape[:2] + (1,))], axis=-1)


def _paint_placement(script: SceneScript, img: np.ndarray, p: Placement) -> None:
    K = script.camera
    h = p.size / 2.0
    if p.kind == "binary":
        if script.dictionary is None:
            raise ValueError("script has binary placements but no dictionary")
        grid = script.dictionary.grid_n + 2
        margin = QUIET_ZONE_CELLS * p.size / grid
    else:
        margin = DISK_RADIUS_FRACTION * p.size
    extent = h + margin

    # pixel window from the projected extent corners
    corners = np.array(
        [[-extent, extent, 0], [extent, extent, 0], [extent, -extent, 0], [-extent, -extent, 0]]
    )
    px = project_points(p.pose, corners, K, script.distortion)
    x0 = max(0, int(np.floor(px[:, 0].min())) - 2)
    y0 = max(0, int(np.floor(px[:, 1].min())) - 2)
    x1 = min(K.width, int(np.ceil(px[:, 0].max())) + 3)
    y1 = min(K.height, int(np.ceil(px[:, 1].max())) + 3)
    if x1 <= x0 or y1 <= y0:
        return

    dirs = _ray_dirs(script, x0, y0, x1, y1)
    R, t = p.pose.rotation, p.pose.translation
    cam_in_marker = -R.T @ t
    d_m = dirs @ R  # == dirs . R, i.e. R^T applied to each ray
    dz = d_m[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(np.abs(dz) > 1e-12, -cam_in_marker[2] / dz, -1.0)
    valid = s > 1e-9
    mx = cam_in_marker[0] + s * d_m[..., 0]
    my = cam_in_marker[1] + s * d_m[..., 1]

    window = img[y0:y1, x0:x1]
    if p.kind == "binary":
        code = script.dictionary.codes[p.marker_id]
        n = script.dictionary.grid_n
        grid = n + 2
        in_quiet = valid & (np.abs(mx) <= extent) & (np.abs(my) <= extent)
        in_marker = valid & (np.abs(mx) < h) & (np.abs(my) < h)
        window[in_quiet & ~in_marker] = WHITE
        col = np.clip(((mx + h) / p.size * grid).astype(int), 0, grid - 1)
        row = np.clip(((h - my) / p.size * grid).astype(int), 0, grid - 1)
        border = (row == 0) | (row == grid - 1) | (col == 0) | (col == grid - 1)
        inner_r = np.clip(row - 1, 0, n - 1)
        inner_c = np.clip(col - 1, 0, n - 1)
        bit_dark = code[inner_r, inner_c].astype(bool)
        dark = border | bit_dark
        window[in_marker & dark] = BLACK
        window[in_marker & ~dark] = WHITE
    else:
        model = square_model_points(p.size)
        radius2 = (DISK_RADIUS_FRACTION * p.size) ** 2
        for corner, color in zip(model, p.corner_colors):
            inside = valid & (
                (mx - corner[0]) ** 2 + (my - corner[1]) ** 2 <= radius2
            )
            window[inside] = np.asarray(color, dtype=np.uint8)


def render_frame(script: SceneScript, index: int) -> tuple[Frame, list[GroundTruth]]:
    """Rasterize frame `index`; also return the scripted poses as ground truth."""
    if index >= script.frame_count:
        raise IndexError("frame index out of range")
    K = script.camera
    img = np.empty((K.height, K.width, 3), dtype=np.uint8)
    img[:] = np.asarray(script.background, dtype=np.uint8)
    truths = []
    for p in script.frames[index]:
        _paint_placement(script, img, p)
        oid = f"binary:{p.marker_id}" if p.kind == "binary" else p.object_id
        truths.append(GroundTruth(p.kind, oid, p.pose, p.size))
    if script.noise_sigma > 0:
        rng = np.random.default_rng(script.seed + index)
        noisy = img.astype(np.float64) + rng.normal(0.0, script.noise_sigma, img.shape)
        img = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    return Frame(img, timestamp_us=index * 33333, frame_index=index), truths


def size_sweep(
    make_script, sizes, run_frame, frames_per_size: int = 60
) -> list[tuple[float, float]]:
    """Detection rate as a function of marker size at fixed distance.

    make_script(size) returns a SceneScript; run_frame(frame, truths) runs the
    detection pipeline and reports whether the scripted marker was found. The
    pipeline is injected so this module stays free of engine dependencies.
    """
    rows = []
    for size in sizes:
        script = make_script(float(size))
        n = min(frames_per_size, script.frame_count)
        detected = sum(
            bool(run_frame(*render_frame(script, i))) for i in range(n)
        )
        rows.append((float(size), detected / max(n, 1)))
    return rows


# ---------------------------------------------------------------------------
# scene script files

SCENE_SCHEMA = "fidtrack-scene/1"


def load_scene(text: str) -> SceneScript:
    """Parse a scene document (schema fidtrack-scene/1) into a SceneScript.

    Placements give either an explicit pose (rotation: 9 row-major floats) or
    the facing_pose parameters (tilt_deg / tilt_axis / roll_deg / t).
    """
    import yaml

    from .binary_marker import generate_dictionary

    doc = yaml.safe_load(text)
    if not isinstance(doc, dict) or doc.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"schema must be {SCENE_SCHEMA!r}")
    cam = doc["camera"]
    camera = CameraIntrinsics(
        fx=float(cam["fx"]),
        fy=float(cam["fy"]),
        cx=float(cam["cx"]),
        cy=float(cam["cy"]),
        width=int(cam["width"]),
        height=int(cam["height"]),
    )
    dd = doc.get("distortion", {})
    distortion = DistortionCoeffs(
        k1=float(dd.get("k1", 0.0)),
        k2=float(dd.get("k2", 0.0)),
        k3=float(dd.get("k3", 0.0)),
        p1=float(dd.get("p1", 0.0)),
        p2=float(dd.get("p2", 0.0)),
    )
    dictionary = None
    if doc.get("dictionary"):
        d = doc["dictionary"]
        dictionary = generate_dictionary(
            count=int(d["count"]),
            grid_n=int(d.get("grid_n", 4)),
            d_min=int(d.get("d_min", 4)),
            seed=int(d.get("seed", 0)),
        )

    def parse_pose(p) -> Pose:
        if "rotation" in p:
            R = np.asarray(p["rotation"], dtype=float).reshape(3, 3)
            return Pose(R, np.asarray(p["t"], dtype=float))
        return facing_pose(
            tilt_axis=np.asarray(p.get("tilt_axis", [1.0, 0.0, 0.0]), float),
            tilt=np.deg2rad(float(p.get("tilt_deg", 0.0))),
            roll=np.deg2rad(float(p.get("roll_deg", 0.0))),
            t=np.asarray(p.get("t", [0.0, 0.0, 0.5]), float),
        )

    frames = []
    for fr in doc.get("frames", []):
        placements = []
        for pl in fr.get("placements", []):
            placements.append(
                Placement(
                    kind=str(pl["kind"]),
                    pose=parse_pose(pl["pose"]),
                    size=float(pl["size"]),
                    marker_id=int(pl.get("marker_id", 0)),
                    object_id=str(pl.get("object_id", "")),
                    corner_colors=tuple(
                        tuple(c) for c in pl.get("corner_colors", ())
                    ),
                )
            )
        frames.append(tuple(placements))
    return SceneScript(
        camera=camera,
        distortion=distortion,
        background=tuple(doc.get("background", (255, 255, 255))),
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
        seed=int(doc.get("seed", 0)),
        frames=tuple(frames),
        dictionary=dictionary,
    )
