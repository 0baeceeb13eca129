"""Pinhole projection, ground-plane homographies and the BEV grid.

Conventions
-----------
World frame is right-handed with z up; the ground is the plane z = 0.
Camera frame follows the usual computer-vision layout (x right, y down,
z forward). A pose ``(R, t)`` maps world to camera: ``X_c = R @ X_w + t``.
Image coordinates are pixels with the origin at the top-left corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AtInfinity, BehindCamera, DegenerateView, OutOfBounds

# homography normalization switches to Frobenius norm below this |h33|
H33_EPS = 1e-9
DET_EPS = 1e-12
W_EPS = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if not (self.focal_x > 0 and self.focal_y > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.principal_x < self.image_width):
            raise ValueError("principal_x outside image")
        if not (0 < self.principal_y < self.image_height):
            raise ValueError("principal_y outside image")

    @classmethod
    def from_fov(cls, width: int = 1920, height: int = 1080, hfov_deg: float = 70.0):
        """Square-pixel camera with the principal point at the image center."""
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.focal_x, 0.0, self.principal_x],
                [0.0, self.focal_y, self.principal_y],
                [0.0, 0.0, 1.0],
            ]
        )

    def contains(self, uv) -> np.ndarray:
        """Boolean mask of pixels inside ``[0, W) x [0, H)``."""
        uv = np.asarray(uv, dtype=float)
        return (
            (uv[..., 0] >= 0)
            & (uv[..., 0] < self.image_width)
            & (uv[..., 1] >= 0)
            & (uv[..., 1] < self.image_height)
        )


@dataclass(frozen=True, eq=False)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) >= 1e-9:
            raise ValueError("rotation must have det = +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def from_center(cls, R, C):
        R = np.asarray(R, dtype=float)
        return cls(R, -R @ np.asarray(C, dtype=float))


def look_rotation(yaw: float, pitch: float) -> np.ndarray:
    """World-to-camera rotation for a level camera (zero roll).

    ``yaw`` is the heading of the boresight measured from +x towards +y and
    ``pitch`` its depression below the horizon, both in radians. Pitch must
    stay strictly inside (-pi/2, pi/2).
    """
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    forward = np.array([cp * cy, cp * sy, -sp])
    right = np.array([sy, -cy, 0.0])  # forward x up, already unit length
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def rotation_geodesic(Ra, Rb) -> float:
    """Angle in radians of the relative rotation ``Ra^T Rb``."""
    M = np.asarray(Ra).T @ np.asarray(Rb)
    # atan2 keeps precision for tiny angles where acos(trace) does not
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    c = (np.trace(M) - 1.0) / 2.0
    return float(math.atan2(s, c))


def projection_matrix(K: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """3x4 matrix ``K [R | t]``."""
    Rt = np.hstack([pose.rotation, pose.translation[:, None]])
    return K.matrix @ Rt


def project_point(P, X) -> np.ndarray:
    """Project one world point; raises :class:`BehindCamera` for w <= 0."""
    P = np.asarray(P, dtype=float)
    Xh = np.append(np.asarray(X, dtype=float), 1.0)
    x = P @ Xh
    if not x[2] > 0:
        raise BehindCamera(f"depth {x[2]:.3g} <= 0")
    return x[:2] / x[2]


def project_points(P, X):
    """Vectorized projection of ``(n, 3)`` points.

    Returns ``(uv, in_front)``; rows with ``in_front == False`` hold NaN.
    """
    P = np.asarray(P, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x = X @ P[:, :3].T + P[:, 3]
    w = x[:, 2]
    front = w > 0
    uv = np.full((len(X), 2), np.nan)
    uv[front] = x[front, :2] / w[front, None]
    return uv, front


def normalize_homography(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if abs(H[2, 2]) > H33_EPS:
        return H / H[2, 2]
    return H / np.linalg.norm(H)


def ground_homography(P) -> np.ndarray:
    """Ground-plane (z = 0) to image homography: P with its z column dropped."""
    P = np.asarray(P, dtype=float)
    H = normalize_homography(P[:, [0, 1, 3]])
    if abs(np.linalg.det(H)) <= DET_EPS:
        raise DegenerateView("ground homography is singular")
    return H


def apply_homography(H, pts) -> np.ndarray:
    """Map ``(n, 2)`` points through ``H``; points at infinity become NaN."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    q = pts @ H[:, :2].T + H[:, 2]
    w = q[:, 2]
    out = np.full((len(pts), 2), np.nan)
    ok = np.abs(w) >= W_EPS
    out[ok] = q[ok, :2] / w[ok, None]
    return out


def image_to_ground(H, p) -> np.ndarray:
    """Back-project one pixel onto the ground plane."""
    q = np.linalg.solve(np.asarray(H, dtype=float), np.array([p[0], p[1], 1.0]))
    if abs(q[2]) < W_EPS:
        raise AtInfinity("pixel maps to the horizon")
    return q[:2] / q[2]


def image_to_ground_many(H, pts) -> np.ndarray:
    return apply_homography(np.linalg.inv(np.asarray(H, dtype=float)), pts)


@dataclass(frozen=True)
class WorldGrid:
    """Regular ground grid; cell ``(i, j)`` covers x in bin i and y in bin j."""

    origin_x: float
    origin_y: float
    cell_size: float
    height_cells: int
    width_cells: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.height_cells < 1 or self.width_cells < 1:
            raise ValueError("grid needs at least one cell")

    @classmethod
    def covering(cls, half_extent: float, cell_size: float):
        """Square grid centered on the origin spanning +-half_extent."""
        n = int(math.ceil(2 * half_extent / cell_size - 1e-9))
        return cls(-half_extent, -half_extent, cell_size, n, n)

    @property
    def shape(self):
        return (self.height_cells, self.width_cells)

    def world_to_cell(self, x: float, y: float):
        i = math.floor((x - self.origin_x) / self.cell_size)
        j = math.floor((y - self.origin_y) / self.cell_size)
        if not (0 <= i < self.height_cells and 0 <= j < self.width_cells):
            raise OutOfBounds(f"({x:.3f}, {y:.3f}) outside grid")
        return i, j

    def world_to_cells(self, xy):
        """Vectorized binning: returns ``(ij, inside)`` with ij of shape (n, 2)."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        with np.errstate(invalid="ignore"):
            ij = np.floor((xy - [self.origin_x, self.origin_y]) / self.cell_size)
            inside = (
                (ij[:, 0] >= 0)
                & (ij[:, 0] < self.height_cells)
                & (ij[:, 1] >= 0)
                & (ij[:, 1] < self.width_cells)
            )
        ij = np.where(inside[:, None], ij, -1).astype(int)
        return ij, inside

    def cell_center(self, i, j):
        return np.array(
            [
                self.origin_x + (np.asarray(i) + 0.5) * self.cell_size,
                self.origin_y + (np.asarray(j) + 0.5) * self.cell_size,
            ]
        ).T

    def cell_centers(self) -> np.ndarray:
        """Array of shape ``(H_g, W_g, 2)`` with every cell center."""
        xs = self.origin_x + (np.arange(self.height_cells) + 0.5) * self.cell_size
        ys = self.origin_y + (np.arange(self.width_cells) + 0.5) * self.cell_size
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def contains(self, x: float, y: float) -> bool:
        return (
            self.origin_x <= x < self.origin_x + self.height_cells * self.cell_size
            and self.origin_y <= y < self.origin_y + self.width_cells * self.cell_size
        )
