"""Camera model, rotation representations and point projection.

Conventions (used everywhere in this package):
  camera frame : x right, y down, z forward along the optical axis
  marker frame : the marker lies in its own z=0 plane, y up
  pose         : rigid transform marker -> camera (R, t), t in meters
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EPS_Z = 1e-9


class GeometryError(ValueError):
    pass


class PointBehindCameraError(GeometryError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the sensor")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class DistortionCoeffs:
    """Brown-Conrady radial (k1,k2,k3) + tangential (p1,p2) distortion."""

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        for v in (self.k1, self.k2, self.k3, self.p1, self.p2):
            if not math.isfinite(v):
                raise GeometryError("distortion coefficients must be finite")

    @property
    def is_zero(self) -> bool:
        return self.k1 == self.k2 == self.k3 == self.p1 == self.p2 == 0.0


@dataclass(frozen=True)
class Pose:
    """Rigid transform marker -> camera."""

    rotation: np.ndarray  # 3x3 orthonormal, det +1
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if R.shape != (3, 3):
            raise GeometryError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise GeometryError("rotation must be orthonormal")
        if np.linalg.det(R) < 0:
            raise GeometryError("rotation must be proper (det +1)")

    def transform(self, pts: np.ndarray) -> np.ndarray:
        """Map marker-frame points (N,3) or (3,) into the camera frame."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + self.translation

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


def distort_normalized(xy: np.ndarray, d: DistortionCoeffs) -> np.ndarray:
    """Apply Brown-Conrady distortion to normalized image coordinates (...,2)."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2 * r2 * r2
    xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y
    return np.stack([xd, yd], axis=-1)


def undistort_normalized(
    xy: np.ndarray, d: DistortionCoeffs, iterations: int = 20
) -> np.ndarray:
    """Invert distort_normalized by fixed-point iteration."""
    xy = np.asarray(xy, dtype=float)
    if d.is_zero:
        return xy.copy()
    und = xy.copy()
    for _ in range(iterations):
        delta = distort_normalized(und, d) - und
        und = xy - delta
    return und


def project_point(
    pose: Pose, model_point: np.ndarray, K: CameraIntrinsics, d: DistortionCoeffs
) -> np.ndarray:
    """Project one marker-frame 3D point to pixel coordinates."""
    p = pose.transform(np.asarray(model_point, dtype=float).reshape(3))
    if p[2] <= EPS_Z:
        raise PointBehindCameraError(f"point has non-positive depth z={p[2]:.3g}")
    xy = p[:2] / p[2]
    xd, yd = distort_normalized(xy, d)
    return np.array([K.fx * xd + K.cx, K.fy * yd + K.cy])


def project_points(
    pose: Pose, model_points: np.ndarray, K: CameraIntrinsics, d: DistortionCoeffs
) -> np.ndarray:
    """Vectorized projection of (N,3) marker-frame points to (N,2) pixels."""
    p = pose.transform(np.asarray(model_points, dtype=float).reshape(-1, 3))
    z = p[:, 2]
    if np.any(z <= EPS_Z):
        raise PointBehindCameraError("point has non-positive depth")
    xy = p[:, :2] / z[:, None]
    dxy = distort_normalized(xy, d)
    out = np.empty_like(dxy)
    out[:, 0] = K.fx * dxy[:, 0] + K.cx
    out[:, 1] = K.fy * dxy[:, 1] + K.cy
    return out


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues formula; the zero vector maps to the identity."""
    aa = np.asarray(aa, dtype=float).reshape(3)
    theta = np.linalg.norm(aa)
    if theta < 1e-12:
        return np.eye(3)
    k = aa / theta
    K = np.array(
        [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]]
    )
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Inverse of axis_angle_to_matrix, canonical angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_t = (np.trace(R) - 1.0) / 2.0
    cos_t = min(1.0, max(-1.0, cos_t))
    theta = math.acos(cos_t)
    if theta < 1e-12:
        return np.zeros(3)
    if theta > math.pi - 1e-6:
        # near pi: axis from the dominant diagonal of (R + I)/2
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        k = int(np.argmax(axis))
        if axis[k] < 1e-12:
            return np.zeros(3)
        axis[(k + 1) % 3] = A[k, (k + 1) % 3] / axis[k]
        axis[(k + 2) % 3] = A[k, (k + 2) % 3] / axis[k]
        axis /= np.linalg.norm(axis)
        # fix overall sign using the off-diagonal skew part when available
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w, axis) < 0:
            axis = -axis
        return axis * theta
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w / (2.0 * math.sin(theta)) * theta


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w,x,y,z) with canonical w >= 0."""
    R = np.asarray(R, dtype=float)
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
        raise GeometryError("matrix is not orthonormal")
    tr = np.trace(R)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [
                0.25 * s,
                (R[2, 1] - R[1, 2]) / s,
                (R[0, 2] - R[2, 0]) / s,
                (R[1, 0] - R[0, 1]) / s,
            ]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def nearest_rotation(A: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (closest in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(A)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_angle_between(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotations."""
    cos_t = (np.trace(Ra @ Rb.T) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, cos_t)))
