"""End-to-end processing of a captured sequence for one pipeline seed.

Per frame: drop cameras, calibrate the survivors, register each against its
reference view, splat and fuse the usable views, blend with the previous
map, and extract peaks. The tracker then runs over the whole detection
sequence and the result is scored against ground truth.

Work that does not depend on the pipeline seed (pose solves, descriptor
matches, view footprints) is memoized in a :class:`SequenceCache` so that
multi-seed runs and dropout sweeps only redo the seeded stages.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import calib, fuse, register
from .errors import (
    ColdStartFailure,
    Degenerate,
    DegenerateConsensus,
    DegenerateView,
    InsufficientMatches,
    NoConvergence,
    NoUsableViews,
    SchemaError,
)
from .evalmetrics import MetricsReport, evaluate
from .geometry import WorldGrid, ground_homography
from .track import TrackerParams, run_tracker

_REG_STREAM, _DROPOUT_STREAM = 3, 4
DROPOUT_MODES = ("per_frame", "per_sequence")


@dataclass(frozen=True)
class PipelineParams:
    # fusion
    sigma_g: float = 0.3
    cell_size: float = 0.5
    threshold: float = 0.25
    nms_radius: float = 0.8
    alpha: float = 1.0
    # tracking
    gate: float = 1.5
    confirm_hits: int = 2
    max_misses: int = 4
    beta: float = 0.7
    emit_coasting: bool = True
    # registration
    ratio: float = 0.8
    ransac_iterations: int = 1000
    ransac_threshold: float = 2.0
    adaptive: bool = False
    min_confidence: float = 0.5
    reference: str = "fixed"  # or "sliding"
    lift: str = "calibrated"  # or "registered"
    # scoring and dropout
    radius: float = 0.5
    dropout: float = 0.0
    dropout_mode: str = "per_frame"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.dropout_mode not in DROPOUT_MODES:
            raise ValueError(f"dropout_mode must be one of {DROPOUT_MODES}")
        if self.reference not in ("fixed", "sliding"):
            raise ValueError("reference must be 'fixed' or 'sliding'")
        if self.lift not in ("calibrated", "registered"):
            raise ValueError("lift must be 'calibrated' or 'registered'")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not (self.radius > 0 and self.cell_size > 0 and self.sigma_g > 0):
            raise ValueError("radius, cell_size and sigma_g must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, path=None):
        known = {f.name for f in fields(cls)}
        extra = sorted(set(data) - known)
        if extra:
            raise SchemaError(f"unknown key(s) in pipeline: {', '.join(extra)}", path)
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"pipeline: {exc}", path) from exc

    def tracker(self, dt: float) -> TrackerParams:
        return TrackerParams(self.gate, self.confirm_hits, self.max_misses, self.beta, dt, self.emit_coasting)


def derived_seed(seed: int, *path) -> int:
    """32-bit seed for a named sub-stream of a pipeline seed."""
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1)[0])


def dropout_masks(seed: int, frames: int, drones: int, rate: float, mode: str = "per_frame") -> np.ndarray:
    """Boolean (frames, drones) array, True where the camera is active."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), _DROPOUT_STREAM])))
    if mode == "per_frame":
        return ~(rng.random((frames, drones)) < rate)
    if mode == "per_sequence":
        return np.broadcast_to(~(rng.random(drones) < rate), (frames, drones)).copy()
    raise ValueError(f"unknown dropout mode {mode!r}")


class SequenceCache:
    """Seed-independent intermediate results for one captured sequence."""

    def __init__(self, seq):
        self.seq = seq
        self.solves = {}
        self.matches = {}
        self.coverage = {}
        self.registrations = {}

    def solve(self, f, d):
        key = (f, d)
        if key not in self.solves:
            cap = self.seq.captures[f][d]
            try:
                self.solves[key] = calib.solve_pose(cap.corner_world, cap.corner_pixels, self.seq.intrinsics)
            except (Degenerate, NoConvergence) as exc:
                self.solves[key] = exc
        return self.solves[key]

    def match(self, f, d, ref, ratio):
        key = (f, d, ref, ratio)
        if key not in self.matches:
            a, b = self.seq.captures[f][d], self.seq.captures[ref][d]
            self.matches[key] = register.match_descriptors(a.descriptors, b.descriptors, ratio)
        return self.matches[key]

    def register(self, seed, f, d, ref, p: PipelineParams):
        key = (seed, f, d, ref, p.ratio, p.ransac_iterations, p.ransac_threshold, p.adaptive)
        if key not in self.registrations:
            rp = register.RegistrationParams(p.ratio, p.ransac_iterations, p.ransac_threshold, derived_seed(seed, _REG_STREAM, f, d), p.adaptive)
            try:
                ms = self.match(f, d, ref, p.ratio)
                r = register.estimate_homography_ransac(self.seq.captures[f][d].keypoints, self.seq.captures[ref][d].keypoints, ms, rp)
                out = r
            except (InsufficientMatches, DegenerateConsensus) as exc:
                out = (exc, rp.seed)
            self.registrations[key] = out
        return self.registrations[key]

    def view_coverage(self, src_frame, d, P, grid):
        key = (src_frame, d, grid)
        if key not in self.coverage:
            self.coverage[key] = fuse.view_coverage(P, self.seq.intrinsics, grid)
        return self.coverage[key]


@dataclass
class ViewRecord:
    """Bookkeeping for one (frame, drone) of a run."""

    calibration: object = None  # CalibrationResult or None
    calib_frame: int = -1  # frame whose solve produced the calibration
    registration: object = None  # RegistrationResult, (error, seed) or None
    reference: int = -1
    usable: bool = False


@dataclass
class RunResult:
    seed: int
    detections: list  # per frame list of BevDetection
    tracks: list  # TrackRecord list
    views: dict  # (frame, drone) -> ViewRecord
    active: np.ndarray
    report: MetricsReport = None
    maps: list = None  # smoothed OccupancyMap per frame when kept


def _self_registration(seed, m):
    """Registration of a reference capture against itself."""
    return register.RegistrationResult(np.eye(3), np.ones(m, bool), 1.0, seed, m, m)


def grid_for(config, cell_size) -> WorldGrid:
    return WorldGrid.covering(config.arena_half_extent, cell_size)


def run_sequence(seq, seed: int, params: PipelineParams = PipelineParams(), cache: SequenceCache = None, keep_maps=False) -> RunResult:
    """Process one sequence for one pipeline seed and score it."""
    cache = cache or SequenceCache(seq)
    cfg = seq.config
    F, D = seq.frame_count, seq.drone_count
    grid = grid_for(cfg, params.cell_size)
    active = dropout_masks(seed, F, D, params.dropout, params.dropout_mode)
    last_calib = {}
    last_seen = {}
    views = {}
    detections = []
    maps = [] if keep_maps else None
    smoothed = None
    for f in range(F):
        layers = []
        for d in range(D):
            if not active[f, d]:
                continue
            v = ViewRecord()
            views[(f, d)] = v
            res = cache.solve(f, d)
            if isinstance(res, Exception):
                if f == 0:
                    raise ColdStartFailure(f"frame 0, drone {d}: {res}") from res
                prev = last_calib.get(d)
                if prev is not None:
                    v.calibration = replace(prev[0], held_over=True)
                    v.calib_frame = prev[1]
            else:
                v.calibration, v.calib_frame = res, f
                last_calib[d] = (res, f)
            # the fixed reference is the drone's frame-0 view, stored before the
            # live stream starts, so dropout never removes it
            ref = 0 if params.reference == "fixed" else last_seen.get(d, f)
            last_seen[d] = f
            v.reference = ref
            if v.calibration is None:
                continue
            if ref == f:
                n = len(seq.captures[f][d].keypoints)
                v.registration = _self_registration(derived_seed(seed, _REG_STREAM, f, d), n)
            else:
                v.registration = cache.register(seed, f, d, ref, params)
            reg = v.registration
            if not isinstance(reg, register.RegistrationResult) or reg.confidence < params.min_confidence:
                continue
            P = v.calibration.projection
            try:
                if params.lift == "registered" and ref != f:
                    ref_cal = cache.solve(ref, d)
                    if isinstance(ref_cal, Exception):
                        continue
                    H = np.linalg.solve(reg.homography, ground_homography(ref_cal.projection))
                else:
                    H = ground_homography(P)
            except (DegenerateView, np.linalg.LinAlgError):
                continue
            cov = cache.view_coverage(v.calib_frame, d, P, grid)
            layers.append(fuse.splat_view(seq.captures[f][d].ped_pixels, H, grid, params.sigma_g, cov))
            v.usable = True
        try:
            occ = fuse.fuse_views(layers, len(layers), grid)
        except NoUsableViews:
            detections.append([])
            if keep_maps:
                maps.append(fuse.OccupancyMap.empty(grid))
            continue
        smoothed = fuse.temporal_smooth(occ, smoothed, params.alpha)
        if keep_maps:
            maps.append(smoothed)
        detections.append(fuse.detect_peaks(smoothed, params.threshold, params.nms_radius, f))
    det_xy = [np.array([[q.x, q.y] for q in dets]).reshape(-1, 2) for dets in detections]
    tracks = run_tracker(det_xy, params.tracker(cfg.capture_interval))
    result = RunResult(seed, detections, tracks, views, active, None, maps)
    result.report = score(seq, result, params.radius)
    return result


def gt_frames(positions) -> dict:
    return {f: {i: tuple(p) for i, p in enumerate(row)} for f, row in enumerate(positions)}


def pred_frames(tracks) -> dict:
    out = {}
    for t in tracks:
        out.setdefault(t.frame, {})[t.id] = (t.x, t.y)
    return out


def score(seq, result: RunResult, radius: float) -> MetricsReport:
    gt = gt_frames(seq.positions)
    pred = pred_frames(result.tracks)
    dets = {f: np.array([[q.x, q.y] for q in row]).reshape(-1, 2) for f, row in enumerate(result.detections)}
    return evaluate(gt, pred, radius, dets)
