"""Pose polish for binary markers: align the full predicted cell pattern with
the binarized image.

Corner-only solves are limited by the four line fits; the marker interior
contains many more dark/light boundaries at diverse sub-pixel phases, so
fitting the pose against every predicted edge is substantially more accurate.
For each sample point on a model edge the binarized image is scanned along the
edge normal for the dark-to-light transition, and damped Gauss-Newton moves
the 6 pose parameters to put the predicted edges on the observed transitions.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import CameraIntrinsics, DistortionCoeffs, Pose
from .pose_solver import apply_update


def pattern_grid(code: np.ndarray) -> np.ndarray:
    """Full (n+2)x(n+2) darkness grid for a code: black border plus the bits."""
    n = code.shape[0]
    grid = np.zeros((n + 2, n + 2), dtype=bool)
    grid[0, :] = grid[-1, :] = grid[:, 0] = grid[:, -1] = True
    grid[1:-1, 1:-1] = code.astype(bool)
    return grid


def model_edge_samples(
    grid: np.ndarray, size: float, spacing_frac: float = 0.12, trim_frac: float = 0.15
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample points on every dark/light boundary of the pattern.

    Returns (points (N,2) marker-plane meters, normals (N,2) unit, pointing
    from the dark side toward the light side, end_dist (N,) meters to the
    nearest segment endpoint). Cells outside the marker count as light.
    Segment ends are trimmed by trim_frac to stay away from corner junctions.
    """
    G = grid.shape[0]
    cell = size / G
    h = size / 2.0
    pts, nrm, ends = [], [], []

    def dark(r, c):
        if 0 <= r < G and 0 <= c < G:
            return bool(grid[r, c])
        return False

    def add_segment(p0, p1, normal):
        length = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
        k = max(2, int(length / (spacing_frac * cell)))
        for i in range(k):
            a = (i + 0.5) / k
            a = trim_frac + (1.0 - 2.0 * trim_frac) * a
            pts.append((p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])))
            nrm.append(normal)
            ends.append(min(a, 1.0 - a) * length)

    # vertical boundaries: between columns c-1 and c, per cell row
    for c in range(G + 1):
        x = -h + c * cell
        for r in range(G):
            left, right = dark(r, c - 1), dark(r, c)
            if left == right:
                continue
            y_top = h - r * cell
            y_bot = h - (r + 1) * cell
            normal = (1.0, 0.0) if left else (-1.0, 0.0)
            add_segment((x, y_top), (x, y_bot), normal)
    # horizontal boundaries: between rows r-1 and r, per cell column
    for r in range(G + 1):
        y = h - r * cell
        for c in range(G):
            above, below = dark(r - 1, c), dark(r, c)
            if above == below:
                continue
            x_lo = -h + c * cell
            x_hi = -h + (c + 1) * cell
            # above is at larger y; normal points from the dark toward the light side
            normal = (0.0, -1.0) if above else (0.0, 1.0)
            add_segment((x_lo, y), (x_hi, y), normal)
    return np.array(pts), np.array(nrm), np.array(ends)


def _project_batch(pose: Pose, X: np.ndarray, K: CameraIntrinsics, d: DistortionCoeffs):
    """Project (N,3) points; returns pixels (N,2), camera pts (N,3), and the
    per-point Jacobian (N,2,6) w.r.t. the local (rotation, translation) update."""
    R, t = pose.rotation, pose.translation
    p = X @ R.T + t
    z = p[:, 2]
    x = p[:, 0] / z
    y = p[:, 1] / z
    r2 = x * x + y * y
    rad = 1.0 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2**3
    g = d.k1 + 2.0 * d.k2 * r2 + 3.0 * d.k3 * r2 * r2
    xd = x * rad + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x)
    yd = y * rad + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y
    uv = np.stack([K.fx * xd + K.cx, K.fy * yd + K.cy], axis=1)

    N = len(X)
    A = np.zeros((N, 2, 3))
    A[:, 0, 0] = 1.0 / z
    A[:, 0, 2] = -p[:, 0] / z**2
    A[:, 1, 1] = 1.0 / z
    A[:, 1, 2] = -p[:, 1] / z**2
    B = np.empty((N, 2, 2))
    B[:, 0, 0] = rad + 2.0 * x * x * g + 2.0 * d.p1 * y + 6.0 * d.p2 * x
    B[:, 0, 1] = 2.0 * x * y * g + 2.0 * d.p1 * x + 2.0 * d.p2 * y
    B[:, 1, 0] = B[:, 0, 1]
    B[:, 1, 1] = rad + 2.0 * y * y * g + 6.0 * d.p1 * y + 2.0 * d.p2 * x
    F = np.einsum("ab,nbc,ncd->nad", np.diag([K.fx, K.fy]), B, A)

    Xx = np.zeros((N, 3, 3))
    Xx[:, 0, 1] = -X[:, 2]
    Xx[:, 0, 2] = X[:, 1]
    Xx[:, 1, 0] = X[:, 2]
    Xx[:, 1, 2] = -X[:, 0]
    Xx[:, 2, 0] = -X[:, 1]
    Xx[:, 2, 1] = X[:, 0]
    J = np.empty((N, 2, 6))
    J[:, :, 0:3] = -np.einsum("nab,bc,ncd->nad", F, R, Xx)
    J[:, :, 3:6] = F
    return uv, p, J


def _observed_offsets(
    mask_bits: np.ndarray,
    uv: np.ndarray,
    n_img: np.ndarray,
    scan_range: float,
    step: float = 0.25,
) -> tuple[np.ndarray, np.ndarray]:
    """Scan the mask along each normal (dark -> light) and locate the
    transition nearest the predicted edge. Returns (offsets, valid)."""
    offs = np.arange(-scan_range, scan_range + step / 2, step)
    pos = uv[:, None, :] + offs[None, :, None] * n_img[:, None, :]
    h, w = mask_bits.shape
    u = np.clip(np.rint(pos[..., 0]).astype(int), 0, w - 1)
    v = np.clip(np.rint(pos[..., 1]).astype(int), 0, h - 1)
    vals = mask_bits[v, u]  # True where dark
    trans = vals[:, :-1] & ~vals[:, 1:]  # dark followed by light
    mid = (offs[:-1] + offs[1:]) / 2.0
    big = 1e9
    cost = np.where(trans, np.abs(mid)[None, :], big)
    best = cost.argmin(axis=1)
    rows = np.arange(len(uv))
    valid = cost[rows, best] < big

    # refine each transition to the exact crossing of the scan line with the
    # pixel boundary separating the dark and light sample pixels
    u1, v1 = u[rows, best], v[rows, best]
    u2, v2 = u[rows, best + 1], v[rows, best + 1]
    t_lo, t_hi = offs[best], offs[best + 1]
    t_exact = mid[best].astype(float).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = ((u1 + u2) / 2.0 - uv[:, 0]) / n_img[:, 0]
        ty = ((v1 + v2) / 2.0 - uv[:, 1]) / n_img[:, 1]
    cand = np.full(len(uv), -np.inf)
    ux = u1 != u2
    vy = v1 != v2
    cand = np.where(ux, np.maximum(cand, tx), cand)
    cand = np.where(vy, np.maximum(cand, ty), cand)
    good = np.isfinite(cand) & (cand >= t_lo - 1e-9) & (cand <= t_hi + 1e-9)
    t_exact = np.where(good, cand, t_exact)
    return t_exact, valid


def _interval_constraints(
    dark_bits: np.ndarray,
    uv: np.ndarray,
    n_scan: np.ndarray,
    n_perp: np.ndarray,
    scan_range: float,
    step: float = 0.25,
):
    """For each edge sample, bounds (a, b) on the edge's signed perpendicular
    offset: the last dark pixel center along the scan projects to a (the edge
    must lie beyond it) and the first light center to b.

    The scan walks along n_scan, but the bounds are measured along n_perp, the
    true image perpendicular of the projected edge: the straddling pixel
    centers sit up to half a pixel off the scan line, and under perspective
    n_scan is not perpendicular to the edge, so projecting them onto n_scan
    would leak that tangential offset into the interval. Returns (a, b, valid).
    """
    offs = np.arange(-scan_range, scan_range + step / 2, step)
    pos = uv[:, None, :] + offs[None, :, None] * n_scan[:, None, :]
    h, w = dark_bits.shape
    u = np.clip(np.rint(pos[..., 0]).astype(int), 0, w - 1)
    v = np.clip(np.rint(pos[..., 1]).astype(int), 0, h - 1)
    vals = dark_bits[v, u]
    trans = vals[:, :-1] & ~vals[:, 1:]
    mid = (offs[:-1] + offs[1:]) / 2.0
    big = 1e9
    cost = np.where(trans, np.abs(mid)[None, :], big)
    best = cost.argmin(axis=1)
    rows = np.arange(len(uv))
    valid = cost[rows, best] < big
    p_dark = np.stack([u[rows, best], v[rows, best]], axis=1).astype(float)
    p_light = np.stack([u[rows, best + 1], v[rows, best + 1]], axis=1).astype(float)
    a = np.einsum("na,na->n", n_perp, p_dark - uv)
    b = np.einsum("na,na->n", n_perp, p_light - uv)
    return a, b, valid


def _pixel_window_intervals(
    dark_bits: np.ndarray,
    uv: np.ndarray,
    t_img: np.ndarray,
    n_perp: np.ndarray,
    tau_max: np.ndarray,
    d_lim: np.ndarray,
):
    """Tightest per-sample bounds (a, b) on the edge's perpendicular offset
    from every pixel center near the sample, not just a straddling scan pair.

    Each sample owns the pixels whose center lies within tau_max of it along
    the projected edge tangent and within d_lim across it; a dark center at
    signed perpendicular distance d forces the edge beyond it (offset >= d),
    a light center caps it (offset <= d). Taking max over dark and min over
    light per sample yields the binding pair. tau_max must keep owned pixels
    tangentially inside the sample's boundary segment — inside the segment
    span a pixel's color is decided by this edge alone, so any perpendicular
    distance up to the neighboring parallel boundary is safe, including the
    staircase pixels right next to cell-corner junctions that a normal-scan
    search has to skip. Returns (a, b, valid)."""
    h, w = dark_bits.shape
    du = np.arange(-3, 4)
    off = np.stack(np.meshgrid(du, du, indexing="ij"), axis=-1).reshape(-1, 2)  # (49,2)
    base = np.rint(uv).astype(int)  # (N,2)
    cand = base[:, None, :] + off[None, :, :]  # (N,49,2)
    cu = np.clip(cand[..., 0], 0, w - 1)
    cv = np.clip(cand[..., 1], 0, h - 1)
    inb = (cand[..., 0] == cu) & (cand[..., 1] == cv)
    centers = cand.astype(float)
    rel = centers - uv[:, None, :]
    tau = np.einsum("na,nka->nk", t_img, rel)
    d = np.einsum("na,nka->nk", n_perp, rel)
    near = inb & (np.abs(tau) <= tau_max[:, None]) & (np.abs(d) <= d_lim[:, None])
    is_dark = dark_bits[cv, cu]
    neg = -1e9
    pos = 1e9
    a = np.where(near & is_dark, d, neg).max(axis=1)
    b = np.where(near & ~is_dark, d, pos).min(axis=1)
    valid = (a > neg / 2) & (b < pos / 2)
    return a, b, valid


def chebyshev_polish(
    pose: Pose,
    code: np.ndarray,
    size: float,
    dark_bits: np.ndarray,
    K: CameraIntrinsics,
    d: DistortionCoeffs,
    iterations: int = 2,
) -> Pose:
    """Sharpen a pattern-refined pose by intersecting the per-sample interval
    constraints (edge between the last dark and first light pixel center) and
    centering the pose update inside the feasible polytope.

    The aliased renderer classifies a pixel dark exactly when its center is
    inside a dark region, so the intervals are hard bounds on where each
    projected edge can lie. Per iteration the feasible set of 6-dof updates is
    boxed with 12 small LPs (min/max of each component) and the box midpoint is
    applied; the polytope is close to symmetric about the true pose, so the
    midpoint lands far closer to it than any least-squares fit of the interval
    midpoints would."""
    from scipy.optimize import linprog

    grid = pattern_grid(np.asarray(code))
    cell = size / grid.shape[0]
    # pick sampling density so neighboring samples sit ~0.5 px apart in the
    # image and the end trim keeps owned pixels off the corner junctions
    cell_px0 = cell * K.fx / max(float(pose.translation[2]), 1e-9)
    # ~0.5 px between samples, but keep the total LP size bounded: the grid has
    # at most ~G^2 boundary segments of one cell each
    G = grid.shape[0]
    min_spacing = (2.0 * G * G) / 2500.0
    spacing_frac = float(np.clip(0.5 / max(cell_px0, 1e-9), min_spacing, 0.12))
    trim_frac = float(np.clip(0.35 / max(cell_px0, 1e-9), 0.01, 0.15))
    pts2, normals, end_dist = model_edge_samples(
        grid, size, spacing_frac=spacing_frac, trim_frac=trim_frac
    )
    X = np.column_stack([pts2, np.zeros(len(pts2))])
    tangents = np.stack([-normals[:, 1], normals[:, 0]], axis=1)
    current = pose
    for it in range(iterations):
        try:
            uv, p, J = _project_batch(current, X, K, d)
        except Exception:
            return current
        if np.any(p[:, 2] <= 1e-9):
            return current
        eps = 0.05 * cell
        Xn = X.copy()
        Xn[:, 0] += eps * normals[:, 0]
        Xn[:, 1] += eps * normals[:, 1]
        uv_n, _, _ = _project_batch(current, Xn, K, d)
        n_scan = uv_n - uv
        norms = np.linalg.norm(n_scan, axis=1)
        ok = norms > 1e-9
        n_scan[ok] = n_scan[ok] / norms[ok][:, None]
        # true image perpendicular of the projected edge, oriented dark -> light
        Xt = X.copy()
        Xt[:, 0] += eps * tangents[:, 0]
        Xt[:, 1] += eps * tangents[:, 1]
        uv_t, _, _ = _project_batch(current, Xt, K, d)
        t_img = uv_t - uv
        tnorms = np.linalg.norm(t_img, axis=1)
        ok &= tnorms > 1e-9
        t_img[ok] = t_img[ok] / tnorms[ok][:, None]
        n_perp = np.stack([-t_img[:, 1], t_img[:, 0]], axis=1)
        flip = np.einsum("na,na->n", n_perp, n_scan) < 0
        n_perp[flip] = -n_perp[flip]

        cell_px = cell * K.fx / np.maximum(p[:, 2], 1e-9)
        # per-sample tangential reach: stay 0.3 px clear of the segment ends
        # (junctions); perpendicular reach: stay inside the local cell
        px_per_m = tnorms / eps
        tau_max = np.clip(end_dist * px_per_m - 0.3, 0.0, 1.5)
        d_lim = np.clip(0.45 * cell_px, 0.6, 2.5)
        a, b, valid = _pixel_window_intervals(
            dark_bits, uv, t_img, n_perp, tau_max, d_lim
        )
        valid &= ok & (a <= b)
        if valid.sum() < 24:
            return current
        Jn = np.einsum("na,naf->nf", n_perp[valid], J[valid])
        av, bv = a[valid], b[valid]
        z = float(current.translation[2])
        bounds = [(-0.05, 0.05)] * 3 + [(-0.01 * z, 0.01 * z)] * 3
        last = it == iterations - 1

        if not last:
            # cheap recentering step: maximize the worst constraint margin.
            # Linearization error at the incoming pose can leave the thin
            # polytope slightly inconsistent (negative margin); this step is
            # feasible regardless and moves the linearization point inside.
            A_ub = np.vstack(
                [
                    np.hstack([Jn, np.ones((len(Jn), 1))]),
                    np.hstack([-Jn, np.ones((len(Jn), 1))]),
                ]
            )
            b_ub = np.concatenate([bv, -av])
            c = np.zeros(7)
            c[6] = -1.0
            sol = linprog(
                c, A_ub=A_ub, b_ub=b_ub, bounds=bounds + [(None, 1.0)], method="highs"
            )
            if not sol.success or not np.all(np.isfinite(sol.x[:6])):
                return current
            current = apply_update(current, sol.x[:6])
            continue

        # final step: box the feasible set per axis and take the midpoint;
        # a small symmetric slack absorbs any residual linearization error
        slack = 5e-3
        A_ub = np.vstack([Jn, -Jn])
        b_ub = np.concatenate([bv + slack, -(av - slack)])
        lo = np.empty(6)
        hi = np.empty(6)
        failed = False
        for k in range(6):
            c = np.zeros(6)
            c[k] = 1.0
            s_lo = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
            s_hi = linprog(-c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
            if not (s_lo.success and s_hi.success):
                failed = True
                break
            lo[k] = s_lo.x[k]
            hi[k] = s_hi.x[k]
        if failed:
            return current
        delta = (lo + hi) / 2.0
        if not np.all(np.isfinite(delta)):
            return current
        current = apply_update(current, delta)
    return current


def refine_pose_on_pattern(
    pose: Pose,
    code: np.ndarray,
    size: float,
    dark_bits: np.ndarray,
    K: CameraIntrinsics,
    d: DistortionCoeffs,
    iterations: int = 6,
) -> Pose:
    """Refine a marker pose against a dark/light classified image (True where
    dark, e.g. gray < intensity threshold); returns the initial pose unchanged
    when too few edge observations survive.

    Note: the adaptive quad-extraction mask is unsuitable here because it
    hollows out the interior of large dark regions."""
    grid = pattern_grid(np.asarray(code))
    pts2, normals, _ = model_edge_samples(grid, size)
    X = np.column_stack([pts2, np.zeros(len(pts2))])
    cell = size / grid.shape[0]

    current = pose
    for _ in range(iterations):
        try:
            uv, p, J = _project_batch(current, X, K, d)
        except Exception:
            return pose
        if np.any(p[:, 2] <= 1e-9):
            return pose
        # image-space edge normal: project a point nudged toward the light side
        eps = 0.05 * cell
        Xn = X.copy()
        Xn[:, 0] += eps * normals[:, 0]
        Xn[:, 1] += eps * normals[:, 1]
        uv_n, _, _ = _project_batch(current, Xn, K, d)
        n_img = uv_n - uv
        norms = np.linalg.norm(n_img, axis=1)
        ok = norms > 1e-9
        n_img[ok] = n_img[ok] / norms[ok][:, None]

        # keep the scan inside the local cell so neighbours cannot interfere
        cell_px = cell * K.fx / np.maximum(p[:, 2], 1e-9)
        scan = float(np.clip(np.median(cell_px) * 0.4, 0.75, 2.5))
        t_off, valid = _observed_offsets(dark_bits, uv, n_img, scan)
        valid &= ok
        if valid.sum() < 12:
            return pose
        res = -t_off[valid]
        Jn = np.einsum("na,naf->nf", n_img[valid], J[valid])
        JtJ = Jn.T @ Jn + 1e-9 * np.eye(6)
        g = Jn.T @ res
        try:
            delta = np.linalg.solve(JtJ, -g)
        except np.linalg.LinAlgError:
            return current
        if not np.all(np.isfinite(delta)):
            return current
        current = apply_update(current, delta)
        if np.linalg.norm(delta) < 1e-12:
            break
    return current
