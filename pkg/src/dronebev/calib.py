"""Per-frame camera pose recovery from checkerboard corners.

A pose solve runs in two stages. A linear estimate comes from a
Hartley-normalized DLT: the full 3x4 projection matrix for points in
general position, or a plane-to-image homography when the points are
coplanar (the usual case, since the boards lie on the ground). The linear
pose is then refined by Levenberg-Marquardt on the reprojection error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ColdStartFailure, Degenerate, NoConvergence
from .geometry import CameraIntrinsics, CameraPose, projection_matrix

MIN_CORRESPONDENCES = 6
CONDITION_LIMIT = 1e12
PLANE_TOL = 1e-6
MAX_ITERATIONS = 50
REL_TOL = 1e-10
NO_CONVERGENCE_RMS = 10.0


@dataclass(frozen=True)
class Correspondence3D2D:
    world: tuple
    image: tuple
    corner_id: int = -1


@dataclass(frozen=True)
class CalibrationResult:
    pose: CameraPose
    projection: np.ndarray
    rms: float
    count: int
    held_over: bool = False
    iterations: int = 0


def update_projection(K: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Projection matrix for the current frame, ``K [R | t]``."""
    return projection_matrix(K, pose)


# ---------------------------------------------------------------- linear stage


def _normalizer(pts):
    """Similarity moving the centroid to the origin with mean distance sqrt(dim)."""
    dim = pts.shape[1]
    c = pts.mean(axis=0)
    d = np.linalg.norm(pts - c, axis=1).mean()
    s = math.sqrt(dim) / d if d > 0 else 1.0
    T = np.eye(dim + 1)
    T[:dim, :dim] *= s
    T[:dim, dim] = -s * c
    return T


def _null_vector(A):
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    cond = s[0] / s[-2] if s[-2] > 0 else math.inf
    return Vt[-1], cond


def dlt_homography(src, dst):
    """Normalized DLT homography mapping ``src`` (n, 2) onto ``dst`` (n, 2).

    Returns ``(H, condition_ratio)``.
    """
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    Ts, Td = _normalizer(src), _normalizer(dst)
    a = src @ Ts[:2, :2].T + Ts[:2, 2]
    b = dst @ Td[:2, :2].T + Td[:2, 2]
    n = len(a)
    A = np.zeros((2 * n, 9))
    one = np.ones(n)
    A[0::2, 0:3] = np.column_stack([a, one])
    A[0::2, 6:9] = -b[:, :1] * np.column_stack([a, one])
    A[1::2, 3:6] = np.column_stack([a, one])
    A[1::2, 6:9] = -b[:, 1:] * np.column_stack([a, one])
    h, cond = _null_vector(A)
    H = np.linalg.inv(Td) @ h.reshape(3, 3) @ Ts
    return H, cond


def dlt_projection(X, x):
    """Normalized DLT for a 3x4 projection from points in general position."""
    X = np.asarray(X, float)
    x = np.asarray(x, float)
    U, T = _normalizer(X), _normalizer(x)
    Xn = X @ U[:3, :3].T + U[:3, 3]
    xn = x @ T[:2, :2].T + T[:2, 2]
    n = len(X)
    Xh = np.column_stack([Xn, np.ones(n)])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:] * Xh
    p, cond = _null_vector(A)
    P = np.linalg.inv(T) @ p.reshape(3, 4) @ U
    return P, cond


def nearest_rotation(M):
    """Orthogonal polar factor of ``M`` with determinant forced to +1."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def decompose_projection(P, K):
    M = np.linalg.solve(K, P)
    A, b = M[:, :3], M[:, 3]
    if np.linalg.det(A) < 0:
        A, b = -A, -b
    scale = np.prod(np.linalg.svd(A, compute_uv=False)) ** (1.0 / 3.0)
    return nearest_rotation(A / scale), b / scale


def decompose_homography(H, K):
    """Pose of the plane frame (points ``(a, b, 0)``) from its homography."""
    M = np.linalg.solve(K, H)
    scale = 0.5 * (np.linalg.norm(M[:, 0]) + np.linalg.norm(M[:, 1]))
    if M[2, 2] < 0:
        scale = -scale
    r1, r2, t = M[:, 0] / scale, M[:, 1] / scale, M[:, 2] / scale
    R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return R, t


def plane_frame(X):
    """Centroid, right-handed basis (columns e1, e2, normal) and max off-plane residual."""
    c = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - c)
    e1, e2 = Vt[0], Vt[1]
    B = np.column_stack([e1, e2, np.cross(e1, e2)])
    resid = np.abs((X - c) @ B[:, 2]).max()
    return c, B, resid


def linear_pose(X, x, K: CameraIntrinsics):
    Kmat = K.matrix
    c, B, resid = plane_frame(X)
    if resid < PLANE_TOL:
        ab = (X - c) @ B[:, :2]
        H, cond = dlt_homography(ab, x)
        if cond > CONDITION_LIMIT:
            raise Degenerate(f"homography DLT condition ratio {cond:.3g}")
        Rp, tp = decompose_homography(H, Kmat)
        R = Rp @ B.T
        return R, tp - R @ c
    P, cond = dlt_projection(X, x)
    if cond > CONDITION_LIMIT:
        raise Degenerate(f"projection DLT condition ratio {cond:.3g}")
    return decompose_projection(P, Kmat)


# ---------------------------------------------------------------- refinement


def _rotvec_to_matrix(w):
    theta = float(np.linalg.norm(w))
    if theta < 1e-15:
        return np.eye(3)
    k = w / theta
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * Kx + (1 - math.cos(theta)) * (Kx @ Kx)


def _residuals(R, t, X, x, K):
    Xc = X @ R.T + t
    z = Xc[:, 2]
    if np.any(z <= 0):
        return None, Xc
    u = K.focal_x * Xc[:, 0] / z + K.principal_x
    v = K.focal_y * Xc[:, 1] / z + K.principal_y
    return np.column_stack([u - x[:, 0], v - x[:, 1]]).ravel(), Xc


def _jacobian(R, t, X, Xc, K):
    n = len(X)
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    dp = np.zeros((n, 2, 3))
    dp[:, 0, 0] = K.focal_x / z
    dp[:, 0, 2] = -K.focal_x * x / z**2
    dp[:, 1, 1] = K.focal_y / z
    dp[:, 1, 2] = -K.focal_y * y / z**2
    Y = Xc - t
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1], skew[:, 0, 2] = -Y[:, 2], Y[:, 1]
    skew[:, 1, 0], skew[:, 1, 2] = Y[:, 2], -Y[:, 0]
    skew[:, 2, 0], skew[:, 2, 1] = -Y[:, 1], Y[:, 0]
    J = np.empty((n, 2, 6))
    J[:, :, :3] = -dp @ skew
    J[:, :, 3:] = dp
    return J.reshape(2 * n, 6)


def refine_pose(R, t, X, x, K: CameraIntrinsics, max_iter=MAX_ITERATIONS, rel_tol=REL_TOL):
    """Levenberg-Marquardt on (rotation increment, translation).

    Returns ``(R, t, cost, iterations, converged)`` where cost is the sum
    of squared pixel residuals.
    """
    r, Xc = _residuals(R, t, X, x, K)
    if r is None:
        raise Degenerate("initial pose puts points behind the camera")
    cost = float(r @ r)
    mu = 1e-3
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        if cost < 1e-28:
            converged = True
            break
        J = _jacobian(R, t, X, Xc, K)
        A = J.T @ J
        g = J.T @ r
        accepted = False
        for _ in range(30):
            step = np.linalg.solve(A + mu * np.diag(np.diag(A) + 1e-12), -g)
            R_new = _rotvec_to_matrix(step[:3]) @ R
            t_new = t + step[3:]
            r_new, Xc_new = _residuals(R_new, t_new, X, x, K)
            if r_new is not None:
                c_new = float(r_new @ r_new)
                if c_new <= cost:
                    accepted = True
                    break
            mu *= 10.0
        if not accepted:
            converged = True  # no descent direction left
            break
        rel = (cost - c_new) / cost if cost > 0 else 0.0
        R, t, r, Xc, cost = R_new, t_new, r_new, Xc_new, c_new
        mu = max(mu / 10.0, 1e-12)
        if rel < rel_tol:
            converged = True
            break
    return nearest_rotation(R), t, cost, it, converged


def solve_pose(world, image, K: CameraIntrinsics) -> CalibrationResult:
    """Recover the camera pose from 3D-2D correspondences with known intrinsics."""
    X = np.asarray(world, float).reshape(-1, 3)
    x = np.asarray(image, float).reshape(-1, 2)
    n = len(X)
    if n < MIN_CORRESPONDENCES:
        raise Degenerate(f"{n} correspondences, need {MIN_CORRESPONDENCES}")
    R0, t0 = linear_pose(X, x, K)
    R, t, cost, it, converged = refine_pose(R0, t0, X, x, K)
    rms = math.sqrt(cost / n)
    if not converged and rms > NO_CONVERGENCE_RMS:
        raise NoConvergence(f"rms {rms:.2f} px after {it} iterations")
    pose = CameraPose(R, t)
    return CalibrationResult(pose, update_projection(K, pose), rms, n, False, it)


def solve_correspondences(corrs, K: CameraIntrinsics) -> CalibrationResult:
    return solve_pose([c.world for c in corrs], [c.image for c in corrs], K)


def calibrate_frame(captures, intrinsics, previous=None, frame=None, solver=solve_pose):
    """Calibrate every drone of one frame.

    ``captures`` is a list of :class:`FrameCapture`; ``intrinsics`` maps a
    drone id to its intrinsics (or is one shared instance); ``previous``
    maps drone id to its last accepted result. A failed solve falls back to
    the previous result flagged as held over. Frame 0 failures raise
    :class:`ColdStartFailure`; later failures with no history yield ``None``.
    """
    previous = previous or {}
    out = {}
    for cap in captures:
        K = intrinsics if isinstance(intrinsics, CameraIntrinsics) else intrinsics[cap.drone]
        f = cap.frame if frame is None else frame
        try:
            out[cap.drone] = solver(cap.corner_world, cap.corner_pixels, K)
        except (Degenerate, NoConvergence) as exc:
            if f == 0:
                raise ColdStartFailure(f"frame 0, drone {cap.drone}: {exc}") from exc
            prev = previous.get(cap.drone)
            out[cap.drone] = None if prev is None else replace(prev, held_over=True)
    return out
