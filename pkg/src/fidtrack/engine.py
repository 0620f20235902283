"""Per-frame orchestration: configuration, frame sources, background state,
the detection pipeline, and sliding-window detection rates.

The engine owns all mutable tracking state. Configuration changes arrive via a
queue and are applied between frames only, so a frame is always processed
under exactly one config.
"""

from __future__ import annotations

import os
import queue
import struct
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .binary_marker import (
    MarkerDictionary,
    detect_markers,
    generate_dictionary,
)
from .colored_points import (
    ColorClass,
    ColoredPointsConfig,
    HsvRange,
    ObjectTopology,
    classify_and_cluster,
    resolve_topology,
    smooth_masses,
)
from .geometry import CameraIntrinsics, DistortionCoeffs, Pose, project_points
from .imaging import Frame, apply_mask, background_mask, to_gray
from .pattern_refine import chebyshev_polish, refine_pose_on_pattern
from .pose_solver import solve_planar_pose, square_model_points

CONFIG_SCHEMA = "fidtrack-config/1"
RATE_WINDOW = 60
RAW_VIDEO_MAGIC = b"FTRK"
NOMINAL_FRAME_INTERVAL_US = 33333


class SourceExhaustedError(RuntimeError):
    pass


class UnknownObjectError(KeyError):
    pass


class ConfigError(ValueError):
    """Invalid configuration document; .problems lists every violation."""

    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class BackgroundConfig:
    enabled: bool = False
    tau: int = 50
    capture_frames: int = 1


@dataclass(frozen=True)
class ColoredPointsSection:
    params: ColoredPointsConfig = ColoredPointsConfig()
    classes: tuple = ()  # ColorClass
    objects: tuple = ()  # ObjectTopology


@dataclass(frozen=True)
class BinarySection:
    dictionary: MarkerDictionary | None = None
    marker_sizes: dict = field(default_factory=dict)  # id -> meters
    default_marker_size: float = 0.0  # 0 disables unlisted ids


@dataclass(frozen=True)
class StreamConfig:
    kind: str = "tcp"  # "unix" | "tcp"
    path: str = ""
    port: int = 0  # 0: disabled


@dataclass(frozen=True)
class ControlConfig:
    port: int = 0  # 0: disabled


@dataclass(frozen=True)
class TrackerConfig:
    camera: CameraIntrinsics
    distortion: DistortionCoeffs = DistortionCoeffs()
    background: BackgroundConfig = BackgroundConfig()
    colored: ColoredPointsSection = ColoredPointsSection()
    binary: BinarySection = BinarySection()
    stream: StreamConfig = StreamConfig()
    control: ControlConfig = ControlConfig()

    def object_ids(self) -> list[str]:
        """Every object this config can produce records for, sorted."""
        ids = [t.object_id for t in self.colored.objects]
        if self.binary.dictionary is not None:
            for i in range(len(self.binary.dictionary.codes)):
                if self._binary_size(i) > 0:
                    ids.append(f"binary:{i}")
        return sorted(ids)

    def _binary_size(self, marker_id: int) -> float:
        return float(
            self.binary.marker_sizes.get(marker_id, self.binary.default_marker_size)
        )


def validate_config_dict(doc) -> list[str]:
    """Collect every invariant violation in a config document; empty = valid."""
    problems = []
    if not isinstance(doc, dict):
        return ["document must be a mapping"]
    if doc.get("schema") != CONFIG_SCHEMA:
        problems.append(f"schema must be {CONFIG_SCHEMA!r}")

    cam = doc.get("camera")
    if not isinstance(cam, dict):
        problems.append("camera section missing")
    else:
        for k in ("fx", "fy", "cx", "cy", "width", "height"):
            if k not in cam:
                problems.append(f"camera.{k} missing")
        if cam.get("fx", 1) <= 0 or cam.get("fy", 1) <= 0:
            problems.append("camera focal lengths must be positive")
        if cam.get("width", 1) <= 0 or cam.get("height", 1) <= 0:
            problems.append("camera resolution must be positive")

    bg = doc.get("background", {})
    if bg:
        if bg.get("tau", 50) < 0:
            problems.append("background.tau must be >= 0")
        if bg.get("capture_frames", 1) < 1:
            problems.append("background.capture_frames must be >= 1")

    cp = doc.get("colored_points", {})
    params = cp.get("params", {}) if isinstance(cp, dict) else {}
    if not (0 < params.get("alpha", 0.7) <= 1):
        problems.append("colored_points.params.alpha must be in (0, 1]")
    if params.get("dist_cutoff", 32.0) <= 0:
        problems.append("colored_points.params.dist_cutoff must be positive")
    if params.get("min_pixels", 8) < 1:
        problems.append("colored_points.params.min_pixels must be >= 1")
    class_ids = set()
    for c in cp.get("classes", []) if isinstance(cp, dict) else []:
        cid = c.get("id")
        if cid in class_ids:
            problems.append(f"duplicate color class id {cid}")
        class_ids.add(cid)
        for hk in ("h_lo", "h_hi"):
            if not (0 <= c.get(hk, 0) < 360):
                problems.append(f"class {cid}: {hk} must be in [0, 360)")
        for lo, hi in (("s_lo", "s_hi"), ("v_lo", "v_hi")):
            if not (0 <= c.get(lo, 0) <= c.get(hi, 1) <= 1):
                problems.append(f"class {cid}: {lo}..{hi} out of order")
    seen_objects = set()
    for o in cp.get("objects", []) if isinstance(cp, dict) else []:
        oid = o.get("object_id")
        if oid in seen_objects:
            problems.append(f"duplicate object_id {oid!r}")
        seen_objects.add(oid)
        slots = tuple(o.get("line0", ())) + tuple(o.get("line1", ()))
        if len(slots) != 4 or len(set(slots)) != 4:
            problems.append(f"object {oid!r}: topology needs 4 distinct classes")
        for s in slots:
            if s not in class_ids:
                problems.append(f"object {oid!r}: unknown class id {s}")
        if o.get("marker_size", 0) <= 0:
            problems.append(f"object {oid!r}: marker_size must be positive")

    bn = doc.get("binary", {})
    if bn:
        d = bn.get("dictionary", {})
        if d and d.get("count", 1) < 1:
            problems.append("binary.dictionary.count must be >= 1")
        for mid, size in (bn.get("marker_sizes") or {}).items():
            if size <= 0:
                problems.append(f"binary.marker_sizes[{mid}] must be positive")
        if bn.get("default_marker_size", 0) < 0:
            problems.append("binary.default_marker_size must be >= 0")

    st = doc.get("stream", {})
    if st and st.get("kind", "tcp") not in ("unix", "tcp"):
        problems.append("stream.kind must be 'unix' or 'tcp'")
    return problems


def config_from_dict(doc) -> TrackerConfig:
    """Build a TrackerConfig; raises ConfigError listing every violation."""
    problems = validate_config_dict(doc)
    if problems:
        raise ConfigError(problems)
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
    bg = doc.get("background", {})
    background = BackgroundConfig(
        enabled=bool(bg.get("enabled", False)),
        tau=int(bg.get("tau", 50)),
        capture_frames=int(bg.get("capture_frames", 1)),
    )
    cp = doc.get("colored_points", {})
    params = cp.get("params", {})
    colored = ColoredPointsSection(
        params=ColoredPointsConfig(
            dist_cutoff=float(params.get("dist_cutoff", 32.0)),
            min_pixels=int(params.get("min_pixels", 8)),
            alpha=float(params.get("alpha", 0.7)),
            match_radius=float(params.get("match_radius", 64.0)),
        ),
        classes=tuple(
            ColorClass(
                id=int(c["id"]),
                name=str(c.get("name", f"class{c['id']}")),
                range=HsvRange(
                    h_lo=float(c["h_lo"]),
                    h_hi=float(c["h_hi"]),
                    s_lo=float(c.get("s_lo", 0.0)),
                    s_hi=float(c.get("s_hi", 1.0)),
                    v_lo=float(c.get("v_lo", 0.0)),
                    v_hi=float(c.get("v_hi", 1.0)),
                ),
            )
            for c in cp.get("classes", [])
        ),
        objects=tuple(
            ObjectTopology(
                object_id=str(o["object_id"]),
                line0=(int(o["line0"][0]), int(o["line0"][1])),
                line1=(int(o["line1"][0]), int(o["line1"][1])),
                marker_size=float(o["marker_size"]),
            )
            for o in cp.get("objects", [])
        ),
    )
    bn = doc.get("binary", {})
    dictionary = None
    if bn.get("dictionary"):
        d = bn["dictionary"]
        dictionary = generate_dictionary(
            count=int(d["count"]),
            grid_n=int(d.get("grid_n", 4)),
            d_min=int(d.get("d_min", 4)),
            seed=int(d.get("seed", 0)),
        )
    binary = BinarySection(
        dictionary=dictionary,
        marker_sizes={int(k): float(v) for k, v in (bn.get("marker_sizes") or {}).items()},
        default_marker_size=float(bn.get("default_marker_size", 0.0)),
    )
    st = doc.get("stream", {})
    stream = StreamConfig(
        kind=str(st.get("kind", "tcp")),
        path=str(st.get("path", "")),
        port=int(st.get("port", 0)),
    )
    ct = doc.get("control", {})
    control = ControlConfig(port=int(ct.get("port", 0)))
    return TrackerConfig(
        camera=camera,
        distortion=distortion,
        background=background,
        colored=colored,
        binary=binary,
        stream=stream,
        control=control,
    )


def config_to_dict(cfg: TrackerConfig) -> dict:
    """Canonical document form: fixed key order, round-trips through
    config_from_dict without change."""
    cam = cfg.camera
    doc = {
        "schema": CONFIG_SCHEMA,
        "camera": {
            "fx": cam.fx,
            "fy": cam.fy,
            "cx": cam.cx,
            "cy": cam.cy,
            "width": cam.width,
            "height": cam.height,
        },
        "distortion": {
            "k1": cfg.distortion.k1,
            "k2": cfg.distortion.k2,
            "k3": cfg.distortion.k3,
            "p1": cfg.distortion.p1,
            "p2": cfg.distortion.p2,
        },
        "background": {
            "enabled": cfg.background.enabled,
            "tau": cfg.background.tau,
            "capture_frames": cfg.background.capture_frames,
        },
        "colored_points": {
            "params": {
                "dist_cutoff": cfg.colored.params.dist_cutoff,
                "min_pixels": cfg.colored.params.min_pixels,
                "alpha": cfg.colored.params.alpha,
                "match_radius": cfg.colored.params.match_radius,
            },
            "classes": [
                {
                    "id": c.id,
                    "name": c.name,
                    "h_lo": c.range.h_lo,
                    "h_hi": c.range.h_hi,
                    "s_lo": c.range.s_lo,
                    "s_hi": c.range.s_hi,
                    "v_lo": c.range.v_lo,
                    "v_hi": c.range.v_hi,
                }
                for c in cfg.colored.classes
            ],
            "objects": [
                {
                    "object_id": t.object_id,
                    "line0": list(t.line0),
                    "line1": list(t.line1),
                    "marker_size": t.marker_size,
                }
                for t in cfg.colored.objects
            ],
        },
        "binary": {
            "dictionary": (
                {
                    "count": len(cfg.binary.dictionary.codes),
                    "grid_n": cfg.binary.dictionary.grid_n,
                    "d_min": cfg.binary.dictionary.d_min,
                    "seed": cfg.binary.dictionary.seed,
                }
                if cfg.binary.dictionary is not None
                else {}
            ),
            "marker_sizes": dict(sorted(cfg.binary.marker_sizes.items())),
            "default_marker_size": cfg.binary.default_marker_size,
        },
        "stream": {
            "kind": cfg.stream.kind,
            "path": cfg.stream.path,
            "port": cfg.stream.port,
        },
        "control": {"port": cfg.control.port},
    }
    return doc


def dump_config(cfg: TrackerConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def load_config(text: str) -> TrackerConfig:
    return config_from_dict(yaml.safe_load(text))


# ---------------------------------------------------------------------------
# frame sources


def write_raw_video(path: str, frames) -> int:
    """Write frames (iterable of Frame or (h,w,3) arrays) to the raw container:
    16-byte header (magic, u32 width, u32 height, u32 count, little-endian),
    then packed RGB24. Returns the frame count."""
    frames = list(frames)
    if not frames:
        raise ValueError("cannot write an empty video")
    arrays = [f.pixels if isinstance(f, Frame) else np.asarray(f) for f in frames]
    h, w, _ = arrays[0].shape
    with open(path, "wb") as fh:
        fh.write(RAW_VIDEO_MAGIC)
        fh.write(struct.pack("<III", w, h, len(arrays)))
        for a in arrays:
            if a.shape != (h, w, 3) or a.dtype != np.uint8:
                raise ValueError("all frames must be uint8 (h, w, 3) of one size")
            fh.write(a.tobytes())
    return len(arrays)


class RawVideoSource:
    """Pull-based reader for the raw RGB24 container."""

    def __init__(self, path: str):
        self._fh = open(path, "rb")
        header = self._fh.read(16)
        if len(header) != 16 or header[:4] != RAW_VIDEO_MAGIC:
            self._fh.close()
            raise ValueError(f"{path}: not a raw video file")
        self.width, self.height, self.frame_count = struct.unpack("<III", header[4:])
        self._index = 0

    def next_frame(self) -> Frame | None:
        if self._index >= self.frame_count:
            return None
        n = self.width * self.height * 3
        data = self._fh.read(n)
        if len(data) != n:
            raise ValueError("truncated raw video")
        pixels = np.frombuffer(data, dtype=np.uint8).reshape(
            self.height, self.width, 3
        )
        frame = Frame(
            pixels.copy(),
            timestamp_us=self._index * NOMINAL_FRAME_INTERVAL_US,
            frame_index=self._index,
        )
        self._index += 1
        return frame

    def close(self):
        self._fh.close()


class ImageDirectorySource:
    """PNG (or any Pillow-readable) files from one directory, sorted by name."""

    def __init__(self, path: str):
        from PIL import Image  # noqa: F401  (fail fast if unavailable)

        names = sorted(
            n
            for n in os.listdir(path)
            if n.lower().endswith((".png", ".bmp", ".jpg", ".jpeg"))
        )
        if not names:
            raise ValueError(f"{path}: no image files")
        self._paths = [os.path.join(path, n) for n in names]
        self._index = 0

    def next_frame(self) -> Frame | None:
        from PIL import Image

        if self._index >= len(self._paths):
            return None
        img = Image.open(self._paths[self._index]).convert("RGB")
        pixels = np.asarray(img, dtype=np.uint8)
        frame = Frame(
            pixels,
            timestamp_us=self._index * NOMINAL_FRAME_INTERVAL_US,
            frame_index=self._index,
        )
        self._index += 1
        return frame


class SyntheticSource:
    """Renders a SceneScript on demand."""

    def __init__(self, script):
        self._script = script
        self._index = 0

    def next_frame(self) -> Frame | None:
        from .synthetic import render_frame

        if self._index >= self._script.frame_count:
            return None
        frame, _ = render_frame(self._script, self._index)
        self._index += 1
        return frame


def capture_background(source, n: int) -> Frame:
    """Per-pixel, per-channel arithmetic mean of the next n frames, rounded to
    the nearest byte (half rounds up). n=1 returns the frame verbatim."""
    if n < 1:
        raise ValueError("n must be >= 1")
    first = source.next_frame()
    if first is None:
        raise SourceExhaustedError("no frames available for background capture")
    if n == 1:
        return first
    acc = first.pixels.astype(np.uint64)
    for _ in range(n - 1):
        frame = source.next_frame()
        if frame is None:
            raise SourceExhaustedError("source exhausted during background capture")
        acc += frame.pixels
    mean = np.floor(acc / n + 0.5)
    return Frame(
        mean.astype(np.uint8),
        timestamp_us=first.timestamp_us,
        frame_index=first.frame_index,
    )


# ---------------------------------------------------------------------------
# records and rates


@dataclass(frozen=True)
class DetectionRecord:
    frame_index: int
    timestamp_us: int
    object_id: str
    kind: str  # "binary" | "colored"
    pose: Pose
    rms_error: float  # pixels
    ambiguous: bool


class DetectionRateTracker:
    """Sliding 60-frame detected/not-detected window for one object."""

    __slots__ = ("window", "frames_seen")

    def __init__(self):
        self.window = []
        self.frames_seen = 0

    def update(self, detected: bool):
        self.window.append(bool(detected))
        if len(self.window) > RATE_WINDOW:
            self.window.pop(0)
        self.frames_seen += 1

    @property
    def rate(self) -> float:
        if self.frames_seen == 0:
            return 0.0
        return sum(self.window) / min(self.frames_seen, RATE_WINDOW)


def detection_rate(trackers: dict, object_id: str) -> float:
    """Rolling detection probability for one object over the last 60 frames
    (divides by frames seen during warm-up)."""
    if object_id not in trackers:
        raise UnknownObjectError(object_id)
    return trackers[object_id].rate


# ---------------------------------------------------------------------------
# runtime


class TrackerRuntime:
    """Owns all mutable pipeline state for one stream.

    Thread contract: process_frame runs on the single pipeline thread.
    Configuration and background-capture requests may arrive from other
    threads; they are queued and applied between frames.
    """

    def __init__(self, config: TrackerConfig, background: Frame | None = None):
        self.config = config
        self.background = background
        self._prev_masses = []
        self.rates = {oid: DetectionRateTracker() for oid in config.object_ids()}
        self._config_queue = queue.Queue()
        self._capture_request = 0  # frames still to accumulate
        self._capture_acc = None
        self._capture_n = 0
        self.frames_processed = 0
        self.last_records = []
        self.last_masses = []
        self.last_markers = []
        self.last_frame = None
        self.stage_seconds = {"background": 0.0, "binary": 0.0, "colored": 0.0}
        self.lock = threading.Lock()

    # -- cross-thread requests ------------------------------------------------

    def submit_config(self, config: TrackerConfig):
        """Queue a config to be applied before the next frame."""
        self._config_queue.put(config)

    def request_background_capture(self, frames: int | None = None):
        if not self.config.background.enabled:
            raise ConfigError(["background subtraction is disabled"])
        n = frames if frames is not None else self.config.background.capture_frames
        if n < 1:
            raise ConfigError(["capture frame count must be >= 1"])
        with self.lock:
            self._capture_request = n
            self._capture_n = n
            self._capture_acc = None

    # -- pipeline -------------------------------------------------------------

    def _apply_pending_config(self):
        applied = False
        while True:
            try:
                cfg = self._config_queue.get_nowait()
            except queue.Empty:
                break
            self.config = cfg
            applied = True
        if applied:
            wanted = self.config.object_ids()
            self.rates = {
                oid: self.rates.get(oid, DetectionRateTracker()) for oid in wanted
            }
            self._prev_masses = []

    def _accumulate_background(self, frame: Frame):
        if self._capture_acc is None:
            self._capture_acc = frame.pixels.astype(np.uint64).copy()
        else:
            self._capture_acc += frame.pixels
        self._capture_request -= 1
        if self._capture_request == 0:
            mean = np.floor(self._capture_acc / self._capture_n + 0.5)
            self.background = Frame(
                mean.astype(np.uint8),
                timestamp_us=frame.timestamp_us,
                frame_index=frame.frame_index,
            )
            self._capture_acc = None

    def process_frame(self, frame: Frame) -> list[DetectionRecord]:
        """Run the full per-frame pipeline; every configured object either
        yields a record or counts as not detected. Stage errors demote the
        affected object to not-detected, never abort the frame."""
        self._apply_pending_config()
        cfg = self.config
        with self.lock:
            if self._capture_request > 0:
                self._accumulate_background(frame)

        t0 = time.perf_counter()
        work = frame
        if cfg.background.enabled and self.background is not None:
            try:
                mask = background_mask(frame, self.background, cfg.background.tau)
                work = apply_mask(frame, mask)
            except Exception:
                work = frame

        t1 = time.perf_counter()
        records = []
        detected_ids = set()
        markers_out = []

        # binary markers: detect on the masked grayscale, refine against the
        # raw grayscale (masking zeroes the quiet zone, which the pattern
        # refinement's outer-border samples need intact)
        if cfg.binary.dictionary is not None:
            gray_masked = to_gray(work)
            gray_raw = to_gray(frame)
            try:
                detections = detect_markers(gray_masked, cfg.binary.dictionary)
            except Exception:
                detections = []
            dark = gray_raw.pixels < 128
            for det in detections:
                size = cfg._binary_size(det.id)
                if size <= 0:
                    continue
                oid = f"binary:{det.id}"
                if oid not in self.rates:
                    continue
                try:
                    result = solve_planar_pose(
                        det.corners, size, cfg.camera, cfg.distortion
                    )
                    pose = refine_pose_on_pattern(
                        result.best.pose,
                        cfg.binary.dictionary.codes[det.id],
                        size,
                        dark,
                        cfg.camera,
                        cfg.distortion,
                    )
                    pose = chebyshev_polish(
                        pose,
                        cfg.binary.dictionary.codes[det.id],
                        size,
                        dark,
                        cfg.camera,
                        cfg.distortion,
                    )
                    rms = _corner_rms(pose, size, det.corners, cfg)
                except Exception:
                    continue
                records.append(
                    DetectionRecord(
                        frame_index=frame.frame_index,
                        timestamp_us=frame.timestamp_us,
                        object_id=oid,
                        kind="binary",
                        pose=pose,
                        rms_error=rms,
                        ambiguous=result.ambiguous,
                    )
                )
                detected_ids.add(oid)
                markers_out.append(det)

        t2 = time.perf_counter()
        # colored points
        masses = []
        if cfg.colored.classes:
            try:
                masses = classify_and_cluster(
                    work, list(cfg.colored.classes), cfg.colored.params
                )
                masses = smooth_masses(self._prev_masses, masses, cfg.colored.params)
                self._prev_masses = masses
            except Exception:
                masses = []
                self._prev_masses = []
            for topo in cfg.colored.objects:
                try:
                    points = resolve_topology(masses, topo)
                    if points is None:
                        continue
                    result = solve_planar_pose(
                        points, topo.marker_size, cfg.camera, cfg.distortion
                    )
                except Exception:
                    continue
                records.append(
                    DetectionRecord(
                        frame_index=frame.frame_index,
                        timestamp_us=frame.timestamp_us,
                        object_id=topo.object_id,
                        kind="colored",
                        pose=result.best.pose,
                        rms_error=result.best.rms_error,
                        ambiguous=result.ambiguous,
                    )
                )
                detected_ids.add(topo.object_id)

        t3 = time.perf_counter()
        for oid, tracker in self.rates.items():
            tracker.update(oid in detected_ids)

        records.sort(key=lambda r: r.object_id)
        with self.lock:
            self.frames_processed += 1
            self.last_records = records
            self.last_masses = masses
            self.last_markers = markers_out
            self.last_frame = frame
            self.stage_seconds["background"] += t1 - t0
            self.stage_seconds["binary"] += t2 - t1
            self.stage_seconds["colored"] += t3 - t2
        return records

    def state_snapshot(self) -> dict:
        with self.lock:
            return {
                "frames_processed": self.frames_processed,
                "background_captured": self.background is not None,
                "capture_in_progress": self._capture_request > 0,
                "rates": {oid: t.rate for oid, t in sorted(self.rates.items())},
            }


def _corner_rms(pose: Pose, size: float, corners: np.ndarray, cfg: TrackerConfig):
    proj = project_points(pose, square_model_points(size), cfg.camera, cfg.distortion)
    return float(np.sqrt(np.mean(np.sum((proj - corners) ** 2, axis=1))))
