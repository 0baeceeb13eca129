"""Multi-view occupancy fusion on the ground grid.

Each usable view lifts its pedestrian foot pixels onto the ground and
splats a truncated Gaussian per observation. Layers are averaged over the
number of usable views, optionally blended with the previous map, and
reduced to point detections by greedy non-maximum suppression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GridMismatch, NoUsableViews
from .geometry import WorldGrid, image_to_ground_many, project_points

KERNEL_CUTOFF = 3.0  # truncate splats at this many sigmas


@dataclass(frozen=True)
class ViewEvidence:
    """One view's contribution: splat layer, observable cells, dropped count."""

    values: np.ndarray
    coverage: np.ndarray
    dropped: int = 0


@dataclass(frozen=True, eq=False)
class OccupancyMap:
    grid: WorldGrid
    scores: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        s = np.array(self.scores, dtype=float)
        c = np.array(self.counts, dtype=np.int64)
        if s.shape != self.grid.shape or c.shape != self.grid.shape:
            raise GridMismatch(f"map shape {s.shape} does not match grid {self.grid.shape}")
        s.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "counts", c)

    @classmethod
    def empty(cls, grid: WorldGrid):
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape, np.int64))


@dataclass(frozen=True)
class BevDetection:
    x: float
    y: float
    score: float
    frame: int = 0


def view_coverage(P, intrinsics, grid: WorldGrid) -> np.ndarray:
    """Cells whose centers project in front of the camera and inside the image."""
    c = grid.cell_centers().reshape(-1, 2)
    X = np.column_stack([c, np.zeros(len(c))])
    uv, front = project_points(P, X)
    inside = np.zeros(len(c), bool)
    inside[front] = intrinsics.contains(uv[front])
    return inside.reshape(grid.shape)


def _kernels(grid: WorldGrid, ground, sigma):
    """Truncated kernels around each ground point, each scaled to peak 1.

    Returns flat cell indices and values; entries outside the grid or beyond
    the cutoff radius are removed.
    """
    reach = KERNEL_CUTOFF * sigma
    cs = grid.cell_size
    w = int(np.ceil(2 * reach / cs)) + 1
    i0 = np.floor((ground[:, 0] - reach - grid.origin_x) / cs).astype(int)
    j0 = np.floor((ground[:, 1] - reach - grid.origin_y) / cs).astype(int)
    off = np.arange(w)
    ii = i0[:, None, None] + off[None, :, None]
    jj = j0[:, None, None] + off[None, None, :]
    dx = grid.origin_x + (ii + 0.5) * cs - ground[:, 0, None, None]
    dy = grid.origin_y + (jj + 0.5) * cs - ground[:, 1, None, None]
    d2 = dx * dx + dy * dy
    ok = (d2 <= reach * reach) & (ii >= 0) & (ii < grid.height_cells) & (jj >= 0) & (jj < grid.width_cells)
    k = np.where(ok, np.exp(-0.5 * d2 / (sigma * sigma)), 0.0)
    peak = k.max(axis=(1, 2), keepdims=True)
    k = np.divide(k, peak, out=np.zeros_like(k), where=peak > 0)
    flat = ii * grid.width_cells + jj
    return flat[ok], k[ok]


def splat_view(foot_pixels, H_view, grid: WorldGrid, sigma: float = 0.3, coverage=None) -> ViewEvidence:
    """Lift foot pixels through ``H_view`` (ground to image) and splat them.

    Each observation contributes a kernel whose sampled maximum is exactly 1;
    overlapping kernels combine by elementwise maximum so the layer stays in
    [0, 1]. Observations whose lifted point misses the grid, or lands on the
    horizon, are dropped and counted.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    layer = np.zeros(grid.shape)
    if coverage is None:
        coverage = np.ones(grid.shape, bool)
    pts = np.asarray(foot_pixels, float).reshape(-1, 2)
    if len(pts) == 0:
        return ViewEvidence(layer, coverage, 0)
    ground = image_to_ground_many(H_view, pts)
    _, inside = grid.world_to_cells(ground)
    dropped = int((~inside).sum())
    if inside.any():
        flat, k = _kernels(grid, ground[inside], sigma)
        np.maximum.at(layer.reshape(-1), flat, k)
    return ViewEvidence(layer, coverage, dropped)


def fuse_views(layers, s_frame=None, grid: WorldGrid = None) -> OccupancyMap:
    """Average view layers over the usable-view count ``s_frame``.

    ``layers`` holds :class:`ViewEvidence` values (or bare arrays, treated
    as fully covering). Scores are clamped to [0, 1] and forced to 0 where no
    view sees the cell.
    """
    layers = list(layers)
    s = len(layers) if s_frame is None else int(s_frame)
    if s <= 0 or not layers:
        raise NoUsableViews("no usable views in this frame")
    ev = [l if isinstance(l, ViewEvidence) else ViewEvidence(np.asarray(l, float), np.ones(np.shape(l), bool)) for l in layers]
    shape = ev[0].values.shape
    if any(e.values.shape != shape for e in ev):
        raise GridMismatch("view layers have different shapes")
    vals = np.stack([np.where(e.coverage, e.values, 0.0) for e in ev])
    # summing each cell in sorted order makes the result independent of view order
    total = np.sort(vals, axis=0).sum(axis=0)
    counts = np.sum([e.coverage for e in ev], axis=0, dtype=np.int64)
    scores = np.clip(total / s, 0.0, 1.0)
    scores[counts == 0] = 0.0
    if grid is None:
        grid = WorldGrid(0.0, 0.0, 1.0, shape[0], shape[1])
    return OccupancyMap(grid, scores, counts)


def temporal_smooth(current: OccupancyMap, previous, alpha: float) -> OccupancyMap:
    """Exponential blend ``alpha * current + (1 - alpha) * previous``.

    With no previous map the current one passes through unchanged. The
    contributing count of the blend is the larger of the two inputs, so a
    cell that carries history is never reported as unobserved.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if previous is None:
        return current
    if previous.grid != current.grid:
        raise GridMismatch("smoothing maps on different grids")
    scores = alpha * current.scores + (1.0 - alpha) * previous.scores
    counts = np.maximum(current.counts, previous.counts)
    return OccupancyMap(current.grid, np.clip(scores, 0.0, 1.0), counts)


def _centroid(scores, grid: WorldGrid, i, j):
    i0, i1 = max(i - 1, 0), min(i + 2, grid.height_cells)
    j0, j1 = max(j - 1, 0), min(j + 2, grid.width_cells)
    w = scores[i0:i1, j0:j1]
    xs = grid.origin_x + (np.arange(i0, i1) + 0.5) * grid.cell_size
    ys = grid.origin_y + (np.arange(j0, j1) + 0.5) * grid.cell_size
    s = w.sum()
    return float((w.sum(axis=1) @ xs) / s), float((w.sum(axis=0) @ ys) / s)


def detect_peaks(occ: OccupancyMap, threshold: float = 0.25, nms_radius: float = 0.8, frame: int = 0):
    """Greedy NMS over 3x3 local maxima at or above ``threshold``.

    Candidates are visited in descending score (ties by row-major cell
    order); each is placed at the score-weighted centroid of its 3x3
    neighbourhood and suppressed if an accepted detection lies within
    ``nms_radius``.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    if not nms_radius > 0:
        raise ValueError("nms_radius must be positive")
    s = occ.scores
    local = s >= ndimage.maximum_filter(s, size=3, mode="constant", cval=0.0)
    cand = np.flatnonzero(local & (s >= threshold))
    order = cand[np.argsort(-s.ravel()[cand], kind="stable")]
    out = []
    r2 = nms_radius * nms_radius
    for flat in order:
        i, j = divmod(int(flat), occ.grid.width_cells)
        x, y = _centroid(s, occ.grid, i, j)
        if any((x - d.x) ** 2 + (y - d.y) ** 2 <= r2 for d in out):
            continue
        out.append(BevDetection(x, y, float(s[i, j]), frame))
    return out
