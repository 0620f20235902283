"""fidtrack: fiducial-marker tracking.

Detects colored-point constellations and binary square markers in video,
estimates 6-DoF planar poses, and streams pose records to consumers over a
local socket, with an HTTP control API for live configuration.
"""

from .binary_marker import (
    DetectedMarker,
    MarkerDictionary,
    decode,
    detect_markers,
    generate_dictionary,
    rotation_aware_hamming,
)
from .colored_points import (
    ColorClass,
    ColoredPointsConfig,
    ColorMass,
    HsvRange,
    ObjectTopology,
    classify_and_cluster,
    resolve_topology,
    smooth_masses,
)
from .engine import (
    DetectionRecord,
    TrackerConfig,
    TrackerRuntime,
    capture_background,
    config_from_dict,
    config_to_dict,
    detection_rate,
    dump_config,
    load_config,
    validate_config_dict,
)
from .geometry import CameraIntrinsics, DistortionCoeffs, Pose, project_points
from .imaging import Frame, apply_mask, background_mask, to_gray
from .pattern_refine import chebyshev_polish, refine_pose_on_pattern
from .pose_solver import PoseResult, solve_planar_pose
from .streaming import (
    ControlApiServer,
    PoseStreamServer,
    encode_record,
    parse_record,
)
from .synthetic import (
    Placement,
    SceneScript,
    facing_pose,
    load_scene,
    render_frame,
    size_sweep,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
