"""Planar pose estimation from 4 ordered coplanar correspondences.

Pipeline: normalized DLT homography -> extraction of the two planar pose
candidates -> damped Gauss-Newton reprojection refinement -> selection by
reprojection rms with an ambiguity flag when the two minima are comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    CameraIntrinsics,
    DistortionCoeffs,
    Pose,
    axis_angle_to_matrix,
    distort_normalized,
    nearest_rotation,
    project_points,
    undistort_normalized,
)

AMBIGUITY_RATIO = 2.0
GN_MAX_ITERS = 50
GN_STEP_TOL = 1e-10


class DegenerateConfigurationError(ValueError):
    pass


class NoValidCandidateError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


def square_model_points(marker_size: float) -> np.ndarray:
    """Marker-frame corners TL, TR, BR, BL on the z=0 plane (y up)."""
    h = marker_size / 2.0
    return np.array(
        [[-h, h, 0.0], [h, h, 0.0], [h, -h, 0.0], [-h, -h, 0.0]]
    )


@dataclass(frozen=True)
class Correspondences:
    """Four model points on z=0 paired with image pixels, both TL,TR,BR,BL."""

    model_points: np.ndarray  # (4,3), z = 0
    image_points: np.ndarray  # (4,2) pixels

    def __post_init__(self):
        mp = np.asarray(self.model_points, dtype=float).reshape(4, 3)
        ip = np.asarray(self.image_points, dtype=float).reshape(4, 2)
        object.__setattr__(self, "model_points", mp)
        object.__setattr__(self, "image_points", ip)
        if np.any(np.abs(mp[:, 2]) > 1e-12):
            raise ValueError("model points must lie on z=0")
        if _any_three_collinear(mp[:, :2]):
            raise DegenerateConfigurationError("model points are collinear")


@dataclass(frozen=True)
class PoseCandidate:
    pose: Pose
    rms_error: float  # pixels


@dataclass(frozen=True)
class PoseResult:
    best: PoseCandidate
    ambiguous: bool
    alternate: PoseCandidate | None = None


def _any_three_collinear(pts: np.ndarray, tol: float = 1e-9) -> bool:
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            for k in range(j + 1, len(pts)):
                a, b, c = pts[i], pts[j], pts[k]
                cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if abs(cross) <= tol:
                    return True
    return False


def _normalization_transform(pts: np.ndarray) -> np.ndarray:
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    if d < 1e-15:
        raise DegenerateConfigurationError("coincident points")
    s = math.sqrt(2.0) / d
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized DLT mapping src (N,2) to dst (N,2), N >= 4."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    Ts = _normalization_transform(src)
    Td = _normalization_transform(dst)
    sh = np.column_stack([src, np.ones(len(src))]) @ Ts.T
    dh = np.column_stack([dst, np.ones(len(dst))]) @ Td.T
    rows = []
    for (x, y, _), (u, v, _) in zip(sh, dh):
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
    A = np.asarray(rows)
    _, _, Vt = np.linalg.svd(A)
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    H /= np.linalg.norm(H)
    if H[2, 2] < 0:
        H = -H
    return H


def estimate_homography(c: Correspondences) -> np.ndarray:
    """Homography mapping model-plane xy (meters) to image pixels, unit
    Frobenius norm, bottom-right entry >= 0."""
    if _any_three_collinear(c.image_points):
        raise DegenerateConfigurationError("three image points are collinear")
    H = dlt_homography(c.model_points[:, :2], c.image_points)
    if abs(np.linalg.det(H)) <= 1e-12:
        raise DegenerateConfigurationError("homography is rank deficient")
    return H


def _reproj_rms(pose: Pose, c: Correspondences, K, d) -> float:
    proj = project_points(pose, c.model_points, K, d)
    return float(np.sqrt(np.mean(np.sum((proj - c.image_points) ** 2, axis=1))))


def poses_from_homography(
    H: np.ndarray, K: CameraIntrinsics
) -> list[PoseCandidate]:
    """Extract the (up to two) planar pose candidates from a model->image
    homography. Candidates with non-positive depth are discarded; rms is
    evaluated on the homography-transferred unit square."""
    H = np.asarray(H, dtype=float)
    if abs(np.linalg.det(H)) <= 1e-12:
        raise DegenerateConfigurationError("homography is rank deficient")
    M = np.linalg.inv(K.K) @ H
    lam = (np.linalg.norm(M[:, 0]) + np.linalg.norm(M[:, 1])) / 2.0
    if lam < 1e-15:
        raise DegenerateConfigurationError("degenerate homography scale")
    M = M / lam
    if M[2, 2] < 0:  # choose the sign that puts the plane in front of the camera
        M = -M
    r1, r2, t = M[:, 0], M[:, 1], M[:, 2]
    R1 = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))

    # reference correspondences implied by H: a plane square sized well below
    # the recovered depth so it can never reach behind the camera
    half = 0.1 * abs(t[2]) if t[2] != 0 else 0.05
    sq = np.array([[-half, half], [half, half], [half, -half], [-half, -half]])
    sq_h = np.column_stack([sq, np.ones(4)]) @ H.T
    img = sq_h[:, :2] / sq_h[:, 2:3]
    corr = Correspondences(np.column_stack([sq, np.zeros(4)]), img)
    d0 = DistortionCoeffs()

    def _try_add(candidates, R):
        if t[2] <= 0:
            return
        pose = Pose(R, t)
        try:
            rms = _reproj_rms(pose, corr, K, d0)
        except Exception:
            return
        candidates.append(PoseCandidate(pose, rms))

    candidates: list[PoseCandidate] = []
    _try_add(candidates, R1)

    # second planar solution: reflect the plane normal about the viewing ray
    n = R1[:, 2]
    v = t / np.linalg.norm(t)
    axis = np.cross(v, n)
    sin_t = np.linalg.norm(axis)
    if sin_t > 1e-6:
        axis = axis / sin_t
        theta = math.atan2(sin_t, float(np.dot(v, n)))
        Q = axis_angle_to_matrix(axis * (-2.0 * theta))
        _try_add(candidates, Q @ R1)

    if not candidates:
        raise NoValidCandidateError("no candidate with positive depth")
    candidates.sort(key=lambda c: c.rms_error)
    return candidates


def _residuals(pose: Pose, c: Correspondences, K, d) -> np.ndarray:
    proj = project_points(pose, c.model_points, K, d)
    return (proj - c.image_points).ravel()


def residual_jacobian(
    pose: Pose, c: Correspondences, K: CameraIntrinsics, d: DistortionCoeffs
) -> np.ndarray:
    """Analytic Jacobian of the stacked reprojection residuals w.r.t. the local
    6-parameter update (axis-angle increment, translation increment).

    The rotation is updated as R * exp([delta]x), so d(R exp([delta]) X)/d delta
    at delta = 0 is -R [X]x.
    """
    R, t = pose.rotation, pose.translation
    J = np.zeros((8, 6))
    for i, X in enumerate(c.model_points):
        p = R @ X + t
        x, y = p[0] / p[2], p[1] / p[2]
        Z = p[2]
        # d(x,y)/dp
        A = np.array([[1.0 / Z, 0.0, -p[0] / Z**2], [0.0, 1.0 / Z, -p[1] / Z**2]])
        # d(xd,yd)/d(x,y) through Brown-Conrady
        r2 = x * x + y * y
        rad = 1.0 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2**3
        g = d.k1 + 2.0 * d.k2 * r2 + 3.0 * d.k3 * r2 * r2
        B = np.array(
            [
                [
                    rad + 2.0 * x * x * g + 2.0 * d.p1 * y + 6.0 * d.p2 * x,
                    2.0 * x * y * g + 2.0 * d.p1 * x + 2.0 * d.p2 * y,
                ],
                [
                    2.0 * x * y * g + 2.0 * d.p1 * x + 2.0 * d.p2 * y,
                    rad + 2.0 * y * y * g + 6.0 * d.p1 * y + 2.0 * d.p2 * x,
                ],
            ]
        )
        F = np.diag([K.fx, K.fy]) @ B @ A  # d(u,v)/dp, (2,3)
        Xx = np.array(
            [[0.0, -X[2], X[1]], [X[2], 0.0, -X[0]], [-X[1], X[0], 0.0]]
        )
        J[2 * i : 2 * i + 2, 0:3] = F @ (-R @ Xx)
        J[2 * i : 2 * i + 2, 3:6] = F
    return J


def apply_update(pose: Pose, delta: np.ndarray) -> Pose:
    """Right-multiplicative pose update matching residual_jacobian."""
    R = pose.rotation @ axis_angle_to_matrix(delta[:3])
    return Pose(nearest_rotation(R), pose.translation + delta[3:])


def refine_pose(
    initial: PoseCandidate,
    c: Correspondences,
    K: CameraIntrinsics,
    d: DistortionCoeffs,
) -> PoseCandidate:
    """Damped Gauss-Newton over 6 pose parameters; only improving steps are
    accepted, so the refined rms never exceeds the initial rms."""
    if initial.pose.translation[2] <= 0:
        raise ValueError("initial pose must have positive depth")
    pose = initial.pose
    res = _residuals(pose, c, K, d)
    cost = float(res @ res)
    lam = 1e-6
    rejects = 0
    for _ in range(GN_MAX_ITERS):
        J = residual_jacobian(pose, c, K, d)
        JtJ = J.T @ J
        g = J.T @ res
        try:
            delta = np.linalg.solve(JtJ + lam * np.eye(6), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        if np.linalg.norm(delta) < GN_STEP_TOL:
            break
        trial = apply_update(pose, delta)
        if trial.translation[2] > 0:
            try:
                trial_res = _residuals(trial, c, K, d)
                trial_cost = float(trial_res @ trial_res)
            except Exception:
                trial_cost = math.inf
        else:
            trial_cost = math.inf
        if trial_cost < cost:
            pose, res, cost = trial, trial_res, trial_cost
            lam = max(lam / 10.0, 1e-12)
            rejects = 0
        else:
            lam *= 10.0
            rejects += 1
            if rejects >= 5:
                raise DivergenceError("refinement failed to reduce rms")
    rms = math.sqrt(cost / 4.0)
    return PoseCandidate(pose, rms)


def solve_planar_pose(
    image_points: np.ndarray,
    marker_size: float,
    K: CameraIntrinsics,
    d: DistortionCoeffs,
) -> PoseResult:
    """Full planar solve from 4 image points ordered TL, TR, BR, BL."""
    image_points = np.asarray(image_points, dtype=float).reshape(4, 2)
    model = square_model_points(marker_size)
    corr = Correspondences(model, image_points)

    # undistort to ideal pixel coordinates so the DLT stays linear
    xy = (image_points - [K.cx, K.cy]) / [K.fx, K.fy]
    und = undistort_normalized(xy, d)
    ideal = und * [K.fx, K.fy] + [K.cx, K.cy]
    ideal_corr = Correspondences(model, ideal)

    H = estimate_homography(ideal_corr)
    candidates = poses_from_homography(H, K)

    refined = []
    for cand in candidates:
        start = PoseCandidate(cand.pose, _reproj_rms(cand.pose, corr, K, d))
        try:
            refined.append(refine_pose(start, corr, K, d))
        except DivergenceError:
            refined.append(start)
    refined.sort(key=lambda c: c.rms_error)
    best = refined[0]
    alternate = refined[1] if len(refined) > 1 else None
    ambiguous = alternate is not None and alternate.rms_error < AMBIGUITY_RATIO * best.rms_error
    return PoseResult(best=best, ambiguous=ambiguous, alternate=alternate)
