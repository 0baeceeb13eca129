"""Seeded simulation of drones filming pedestrians over a flat arena.

The world is a square arena on the ground plane with optional box
obstructions, ground-level checkerboards for calibration and a field of
static ground landmarks that stand in for image features. Drones patrol a
small airspace box around a home station on a ring outside the arena and
keep their gimbal pointed at the arena center.

Randomness comes from independent ``numpy`` PCG64 streams derived from the
scenario seed, so a given config always produces the same world regardless
of the order in which drones are captured.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import SchemaError
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    look_rotation,
    project_points,
    projection_matrix,
)

ARRIVAL_RADIUS = 0.2
VELOCITY_EPS = 1e-6
INTEGRAL_CLAMP = 1e4
PEDESTRIAN_HEIGHT = 1.7
PEDESTRIAN_HALF_WIDTH = 0.25

# RNG stream tags
_SCENE, _WORLD, _CAPTURE = 0, 1, 2


# ---------------------------------------------------------------- config


@dataclass
class Box:
    """Axis-aligned box given by center and half extents (meters)."""

    center: tuple
    half_extents: tuple

    @property
    def lo(self):
        return np.asarray(self.center, float) - np.asarray(self.half_extents, float)

    @property
    def hi(self):
        return np.asarray(self.center, float) + np.asarray(self.half_extents, float)

    def footprint_contains(self, xy) -> np.ndarray:
        """Strict containment of ground points in the box footprint."""
        xy = np.atleast_2d(xy)
        lo, hi = self.lo, self.hi
        return (
            (xy[:, 0] > lo[0]) & (xy[:, 0] < hi[0]) & (xy[:, 1] > lo[1]) & (xy[:, 1] < hi[1])
        )


@dataclass
class Checkerboard:
    """Planar board of ``rows x cols`` inner corners.

    The board lies in its local xy plane, rotated by ``yaw`` about the
    world z axis and tilted by ``tilt`` about its own x axis, centered
    at ``center``.
    """

    center: tuple
    rows: int = 5
    cols: int = 7
    square_size: float = 0.5
    yaw: float = 0.0
    tilt: float = 0.0

    def corners(self) -> np.ndarray:
        c = (np.arange(self.cols) - (self.cols - 1) / 2) * self.square_size
        r = (np.arange(self.rows) - (self.rows - 1) / 2) * self.square_size
        gx, gy = np.meshgrid(c, r)
        local = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
        ct, st = math.cos(self.tilt), math.sin(self.tilt)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        Rx = np.array([[1, 0, 0], [0, ct, -st], [0, st, ct]])
        Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        return local @ (Rz @ Rx).T + np.asarray(self.center, float)


@dataclass
class Airspace:
    """Per-drone patrol box: +-xy_bound around the home station, z in [z_min, z_max]."""

    xy_bound: float = 3.0
    z_min: float = 7.0
    z_max: float = 8.0
    station_radius: float = 10.0


@dataclass
class PidGains:
    k_p: float = 0.0002
    k_i: float = 0.00002
    k_d: float = 0.0001


@dataclass
class CameraSpec:
    width: int = 1920
    height: int = 1080
    hfov_deg: float = 70.0

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, self.hfov_deg)


def _default_boards(half_extent: float):
    # one board per quadrant, halfway between the center and the corner
    d = half_extent / 2.0
    return [Checkerboard(center=(sx * d, sy * d, 0.0)) for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))]


@dataclass
class ScenarioConfig:
    name: str = "custom"
    arena_half_extent: float = 7.5
    pedestrian_count: int = 10
    obstruction: Box | None = None
    drone_count: int = 8
    capture_interval: float = 0.5
    frame_count: int = 1000
    airspace: Airspace = field(default_factory=Airspace)
    v_max: float = 1.5
    pid_gains: PidGains = field(default_factory=PidGains)
    pixel_noise_sigma: float = 0.5
    checkerboards: list = field(default_factory=lambda: _default_boards(7.5))
    rng_seed: int = 0
    camera: CameraSpec = field(default_factory=CameraSpec)
    pedestrian_speed: tuple = (0.8, 1.6)
    landmark_count: int = 400
    descriptor_dim: int = 32
    descriptor_sigma: float = 0.05

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.capture_interval > 0:
            raise ValueError("capture_interval must be positive")
        if self.frame_count < 2:
            raise ValueError("frame_count must be at least 2")
        if self.drone_count < 1:
            raise ValueError("drone_count must be at least 1")
        if not self.airspace.z_min <= self.airspace.z_max:
            raise ValueError("airspace z range is empty")
        if self.obstruction is not None:
            lo, hi = self.obstruction.lo, self.obstruction.hi
            h = self.arena_half_extent
            if lo[0] < -h or lo[1] < -h or hi[0] > h or hi[1] > h:
                raise ValueError("obstruction must lie inside the arena")

    # -- serialization --

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pedestrian_speed"] = list(self.pedestrian_speed)
        return _listify(d)

    @classmethod
    def from_dict(cls, data: dict, path=None) -> "ScenarioConfig":
        """Strict parse; unknown keys raise :class:`SchemaError`."""
        data = dict(data)
        _reject_unknown(cls, data, path, "scenario")
        kw = {}
        for k, v in data.items():
            if k == "obstruction":
                kw[k] = None if v is None else _build(Box, v, path, k)
            elif k == "airspace":
                kw[k] = _build(Airspace, v, path, k)
            elif k == "pid_gains":
                kw[k] = _build(PidGains, v, path, k)
            elif k == "camera":
                kw[k] = _build(CameraSpec, v, path, k)
            elif k == "checkerboards":
                kw[k] = [_build(Checkerboard, b, path, k) for b in v]
            elif k == "pedestrian_speed":
                kw[k] = tuple(v)
            else:
                kw[k] = v
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc), path) from exc


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def _reject_unknown(cls, data, path, where):
    known = {f.name for f in fields(cls)}
    extra = sorted(set(data) - known)
    if extra:
        raise SchemaError(f"unknown key(s) in {where}: {', '.join(extra)}", path)


def _build(cls, data, path, where):
    if not isinstance(data, dict):
        raise SchemaError(f"{where} must be an object", path)
    _reject_unknown(cls, data, path, where)
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()}
    try:
        return cls(**kw)
    except TypeError as exc:
        raise SchemaError(f"{where}: {exc}", path) from exc


def preset(name: str, **overrides) -> ScenarioConfig:
    """Named scenarios: ``simple`` (open 15x15 m, 10 people) or ``complex``.

    The complex scene is 30x30 m with 40 pedestrians and a central column.
    """
    if name == "simple":
        base = dict(
            name="simple",
            arena_half_extent=7.5,
            pedestrian_count=10,
            obstruction=None,
            airspace=Airspace(station_radius=10.0),
            checkerboards=_default_boards(7.5),
        )
    elif name == "complex":
        base = dict(
            name="complex",
            arena_half_extent=15.0,
            pedestrian_count=40,
            obstruction=Box(center=(0.0, 0.0, 5.0), half_extents=(2.5, 2.5, 5.0)),
            airspace=Airspace(station_radius=18.0),
            checkerboards=_default_boards(15.0),
        )
    else:
        raise ValueError(f"unknown preset {name!r}")
    base.update(overrides)
    return ScenarioConfig(**base)


# ---------------------------------------------------------------- state


@dataclass
class Pedestrian:
    id: int
    position: np.ndarray
    speed: float
    waypoints: list


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0


@dataclass
class DroneState:
    id: int
    position: np.ndarray
    target: np.ndarray
    home: np.ndarray
    yaw: float
    pitch: float
    yaw_pid: PidState = field(default_factory=PidState)
    pitch_pid: PidState = field(default_factory=PidState)

    def camera_pose(self) -> CameraPose:
        return CameraPose.from_center(look_rotation(self.yaw, self.pitch), self.position)


@dataclass
class WorldState:
    time: float
    pedestrians: list
    drones: list
    rng: np.random.Generator


@dataclass
class Scene:
    """Static parts of a scenario, fixed once per seed."""

    config: ScenarioConfig
    intrinsics: CameraIntrinsics
    corner_world: np.ndarray
    landmarks: np.ndarray
    descriptors: np.ndarray

    @property
    def boxes(self):
        return [] if self.config.obstruction is None else [self.config.obstruction]


# ---------------------------------------------------------------- control laws


def pid_step(error, dt, gains: PidGains, acc: PidState, clamp=INTEGRAL_CLAMP):
    """One discrete PID update; returns ``(u, new_accumulators)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    integral = min(clamp, max(-clamp, acc.integral + error * dt))
    u = gains.k_p * error + gains.k_i * integral + gains.k_d * (error - acc.prev_error) / dt
    return u, PidState(integral, error)


def velocity_command(p_current, p_target, v_max) -> np.ndarray:
    d = np.asarray(p_target, float) - np.asarray(p_current, float)
    n = float(np.linalg.norm(d))
    if n <= VELOCITY_EPS:
        return np.zeros_like(d)
    return v_max * d / n


# ---------------------------------------------------------------- visibility


def segment_box_interval(C, P, lo, hi):
    """Slab clipping of ``C + t (P - C)`` against a box, t in [0, 1].

    Works on arrays: ``P`` may be ``(n, 3)``. Returns a boolean hit mask.
    """
    C = np.asarray(C, float)
    P = np.atleast_2d(np.asarray(P, float))
    d = P - C
    t0 = np.zeros(len(P))
    t1 = np.ones(len(P))
    for k in range(3):
        dk = d[:, k]
        par = np.abs(dk) < 1e-15
        outside = par & ((C[k] < lo[k]) | (C[k] > hi[k]))
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[k] - C[k]) / dk
            tb = (hi[k] - C[k]) / dk
        tmin = np.where(par, -np.inf, np.minimum(ta, tb))
        tmax = np.where(par, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, tmin)
        t1 = np.minimum(t1, tmax)
        t1 = np.where(outside, -np.inf, t1)
    return t0 <= t1


def visibility_flags(C, P, boxes) -> np.ndarray:
    """Line-of-sight flags (1 = clear) from camera ``C`` to each row of ``P``."""
    P = np.atleast_2d(np.asarray(P, float))
    clear = np.ones(len(P), dtype=bool)
    for b in boxes:
        clear &= ~segment_box_interval(C, P, b.lo, b.hi)
    return clear.astype(np.int8)


def line_of_sight(C, P, boxes) -> int:
    if np.allclose(C, P):
        raise ValueError("camera and target coincide")
    return int(visibility_flags(C, np.asarray(P, float)[None], boxes)[0])


# ---------------------------------------------------------------- world


def _rng(seed, *path):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *path])))


def _sample_ground(rng, half, boxes, n=1):
    """Uniform ground points inside the arena and outside every footprint."""
    out = np.empty((0, 2))
    while len(out) < n:
        cand = rng.uniform(-half, half, size=(max(n - len(out), 1), 2))
        ok = np.ones(len(cand), bool)
        for b in boxes:
            ok &= ~b.footprint_contains(cand)
        out = np.vstack([out, cand[ok]])
    return out[:n]


def _sample_airspace(rng, home, air: Airspace):
    xy = home[:2] + rng.uniform(-air.xy_bound, air.xy_bound, size=2)
    z = rng.uniform(air.z_min, air.z_max)
    return np.array([xy[0], xy[1], z])


def _aim_angles(position, focus=(0.0, 0.0, 0.0)):
    d = np.asarray(focus, float) - position
    yaw = math.atan2(d[1], d[0])
    pitch = math.atan2(-d[2], math.hypot(d[0], d[1]))
    return yaw, pitch


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def build_scene(config: ScenarioConfig) -> Scene:
    rng = _rng(config.rng_seed, _SCENE)
    K = config.camera.intrinsics()
    boxes = [] if config.obstruction is None else [config.obstruction]
    corners = [b.corners() for b in config.checkerboards]
    corner_world = np.vstack(corners) if corners else np.empty((0, 3))
    lm = _sample_ground(rng, config.arena_half_extent, boxes, config.landmark_count)
    landmarks = np.hstack([lm, np.zeros((len(lm), 1))])
    desc = rng.standard_normal((config.landmark_count, config.descriptor_dim))
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    return Scene(config, K, corner_world, landmarks, desc)


def initial_state(scene: Scene) -> WorldState:
    cfg = scene.config
    rng = _rng(cfg.rng_seed, _WORLD)
    pos = _sample_ground(rng, cfg.arena_half_extent, scene.boxes, cfg.pedestrian_count)
    lo, hi = cfg.pedestrian_speed
    peds = []
    for i in range(cfg.pedestrian_count):
        wp = _sample_ground(rng, cfg.arena_half_extent, scene.boxes)[0]
        peds.append(Pedestrian(i, pos[i].copy(), float(rng.uniform(lo, hi)), [wp]))
    drones = []
    air = cfg.airspace
    for d in range(cfg.drone_count):
        a = 2 * math.pi * d / cfg.drone_count
        home = np.array(
            [air.station_radius * math.cos(a), air.station_radius * math.sin(a), 0.5 * (air.z_min + air.z_max)]
        )
        target = _sample_airspace(rng, home, air)
        yaw, pitch = _aim_angles(home)
        drones.append(DroneState(d, home.copy(), target, home, yaw, pitch))
    return WorldState(0.0, peds, drones, rng)


def _step_pedestrian(p: Pedestrian, dt, half, boxes, rng):
    wp = p.waypoints[0]
    d = wp - p.position
    dist = float(np.linalg.norm(d))
    step = min(p.speed * dt, dist)
    new = p.position + (d / dist) * step if dist > 0 else p.position.copy()
    blocked = False
    for b in boxes:
        if b.footprint_contains(new)[0] or _crosses_footprint(p.position, new, b):
            # stop just short of the wall, then pick somewhere else to go
            new = _clip_to_footprint(p.position, new, b)
            blocked = True
    p.position = np.clip(new, -half, half)
    if blocked or np.linalg.norm(wp - p.position) <= ARRIVAL_RADIUS:
        p.waypoints = [_sample_ground(rng, half, boxes)[0]]


def _crosses_footprint(a, b, box):
    lo, hi = box.lo, box.hi
    A = np.array([a[0], a[1], 0.5 * (lo[2] + hi[2])])
    B = np.array([b[0], b[1], A[2]])
    return bool(segment_box_interval(A, B[None], lo, hi)[0])


def _clip_to_footprint(a, b, box):
    lo, hi = box.lo[:2], box.hi[:2]
    d = b - a
    t_enter = 0.0
    for k in range(2):
        if abs(d[k]) < 1e-15:
            continue
        ta, tb = (lo[k] - a[k]) / d[k], (hi[k] - a[k]) / d[k]
        t_enter = max(t_enter, min(ta, tb))
    t = max(0.0, t_enter - 1e-6 / max(np.linalg.norm(d), 1e-12))
    out = a + t * d
    if box.footprint_contains(out)[0]:
        return a.copy()
    return out


def _step_drone(dr: DroneState, dt, cfg: ScenarioConfig, rng, focal):
    air = cfg.airspace
    to_target = dr.target - dr.position
    dist = float(np.linalg.norm(to_target))
    v = velocity_command(dr.position, dr.target, cfg.v_max)
    if dist <= cfg.v_max * dt:
        dr.position = dr.target.copy()
    else:
        dr.position = dr.position + v * dt
    if np.linalg.norm(dr.target - dr.position) <= ARRIVAL_RADIUS:
        dr.target = _sample_airspace(rng, dr.home, air)
    # gimbal: pixel-equivalent angular error towards the arena center
    want_yaw, want_pitch = _aim_angles(dr.position)
    e_yaw = focal * _wrap(want_yaw - dr.yaw)
    e_pitch = focal * (want_pitch - dr.pitch)
    u_yaw, dr.yaw_pid = pid_step(e_yaw, dt, cfg.pid_gains, dr.yaw_pid)
    u_pitch, dr.pitch_pid = pid_step(e_pitch, dt, cfg.pid_gains, dr.pitch_pid)
    dr.yaw = _wrap(dr.yaw + u_yaw)
    dr.pitch = min(1.5, max(-1.5, dr.pitch + u_pitch))


def step_world(state: WorldState, dt: float, scene: Scene) -> WorldState:
    """Advance pedestrians and drones by ``dt`` seconds (mutates and returns ``state``)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cfg = scene.config
    for p in state.pedestrians:
        _step_pedestrian(p, dt, cfg.arena_half_extent, scene.boxes, state.rng)
    for dr in state.drones:
        _step_drone(dr, dt, cfg, state.rng, scene.intrinsics.focal_x)
    state.time += dt
    return state


# ---------------------------------------------------------------- capture


@dataclass
class FrameCapture:
    """What one drone reports for one frame.

    ``ped_ids`` and ``landmark_ids`` are simulator truth kept for testing;
    they are never written to observation files.
    """

    frame: int
    drone: int
    timestamp: float
    corner_ids: np.ndarray
    corner_world: np.ndarray
    corner_pixels: np.ndarray
    ped_pixels: np.ndarray
    ped_boxes: np.ndarray
    keypoints: np.ndarray
    descriptors: np.ndarray
    ped_ids: np.ndarray = None
    landmark_ids: np.ndarray = None

    @property
    def ped_visible(self):
        return np.ones(len(self.ped_pixels), dtype=np.int8)


@dataclass
class CaptureTruth:
    pose: CameraPose
    visibility: np.ndarray  # (N,) flags per pedestrian
    boxes: np.ndarray  # (N, 4); NaN rows where not visible


def _ped_box(P, K, xy):
    """Image box of a pedestrian modeled as an upright 0.5 x 0.5 x 1.7 m block."""
    w, h = PEDESTRIAN_HALF_WIDTH, PEDESTRIAN_HEIGHT
    corners = np.array(
        [[xy[0] + sx * w, xy[1] + sy * w, z] for sx in (-1, 1) for sy in (-1, 1) for z in (0.0, h)]
    )
    uv, front = project_points(P, corners)
    if not front.all():
        return np.full(4, np.nan)
    x0, y0 = uv.min(axis=0)
    x1, y1 = uv.max(axis=0)
    W, H = K.image_width, K.image_height
    return np.array([max(0.0, x0), max(0.0, y0), min(W - 1e-6, x1), min(H - 1e-6, y1)])


def _clamp_pixels(uv, K):
    return np.column_stack(
        [np.clip(uv[:, 0], 0.0, K.image_width - 1e-6), np.clip(uv[:, 1], 0.0, K.image_height - 1e-6)]
    )


def capture_frame(state: WorldState, drone: DroneState, scene: Scene, frame: int, noise_sigma=None, rng=None):
    """Observe the world from one drone; returns ``(FrameCapture, CaptureTruth)``."""
    cfg = scene.config
    K = scene.intrinsics
    sigma = cfg.pixel_noise_sigma if noise_sigma is None else noise_sigma
    if rng is None:
        rng = _rng(cfg.rng_seed, _CAPTURE, frame, drone.id)
    pose = drone.camera_pose()
    P = projection_matrix(K, pose)
    C = pose.center

    def observe(points):
        uv, front = project_points(P, points)
        ok = front & K.contains(np.nan_to_num(uv, nan=-1.0))
        if len(points):
            ok &= visibility_flags(C, points, scene.boxes).astype(bool)
        return uv, ok

    # checkerboard corners
    uv, ok = observe(scene.corner_world)
    ids = np.flatnonzero(ok)
    noisy = uv[ok] + sigma * rng.standard_normal((len(ids), 2))
    keep = K.contains(noisy)
    corner_ids, corner_px = ids[keep], noisy[keep]

    # pedestrians
    feet = np.array([np.append(p.position, 0.0) for p in state.pedestrians]).reshape(-1, 3)
    uv, vis = observe(feet)
    boxes = np.full((len(feet), 4), np.nan)
    for i in np.flatnonzero(vis):
        boxes[i] = _ped_box(P, K, feet[i])
    vid = np.flatnonzero(vis)
    ped_px = _clamp_pixels(uv[vid] + sigma * rng.standard_normal((len(vid), 2)), K)

    # landmarks
    uv, ok = observe(scene.landmarks)
    lid = np.flatnonzero(ok)
    lid = lid[rng.permutation(len(lid))]
    kp = uv[lid] + sigma * rng.standard_normal((len(lid), 2))
    keep = K.contains(kp)
    lid, kp = lid[keep], kp[keep]
    desc = scene.descriptors[lid] + cfg.descriptor_sigma * rng.standard_normal((len(lid), cfg.descriptor_dim))
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)

    cap = FrameCapture(
        frame=frame,
        drone=drone.id,
        timestamp=frame * cfg.capture_interval,
        corner_ids=corner_ids,
        corner_world=scene.corner_world[corner_ids],
        corner_pixels=corner_px,
        ped_pixels=ped_px,
        ped_boxes=boxes[vid],
        keypoints=kp,
        descriptors=desc,
        ped_ids=vid,
        landmark_ids=lid,
    )
    return cap, CaptureTruth(pose, vis.astype(np.int8), boxes)


# ---------------------------------------------------------------- sequences


@dataclass
class SimulatedSequence:
    """Full simulator output held in memory."""

    config: ScenarioConfig
    intrinsics: CameraIntrinsics
    captures: list  # [frame][drone] -> FrameCapture
    poses: list  # [frame][drone] -> CameraPose
    positions: np.ndarray  # (F, N, 2)
    visibility: np.ndarray  # (F, D, N) int8
    boxes: np.ndarray  # (F, D, N, 4)
    drone_positions: np.ndarray  # (F, D, 3)

    @property
    def frame_count(self):
        return len(self.captures)

    @property
    def drone_count(self):
        return self.config.drone_count


def simulate(config: ScenarioConfig) -> SimulatedSequence:
    """Run the scenario for ``frame_count`` synchronized captures."""
    scene = build_scene(config)
    state = initial_state(scene)
    F, D, N = config.frame_count, config.drone_count, config.pedestrian_count
    captures, poses = [], []
    positions = np.zeros((F, N, 2))
    visibility = np.zeros((F, D, N), dtype=np.int8)
    boxes = np.full((F, D, N, 4), np.nan)
    drone_pos = np.zeros((F, D, 3))
    for f in range(F):
        if f > 0:
            step_world(state, config.capture_interval, scene)
        positions[f] = [p.position for p in state.pedestrians] if N else np.empty((0, 2))
        row_c, row_p = [], []
        for dr in state.drones:
            cap, truth = capture_frame(state, dr, scene, f)
            row_c.append(cap)
            row_p.append(truth.pose)
            visibility[f, dr.id] = truth.visibility
            boxes[f, dr.id] = truth.boxes
            drone_pos[f, dr.id] = dr.position
        captures.append(row_c)
        poses.append(row_p)
    return SimulatedSequence(config, scene.intrinsics, captures, poses, positions, visibility, boxes, drone_pos)


def with_overrides(config: ScenarioConfig, **kw) -> ScenarioConfig:
    new = copy.deepcopy(config)
    for k, v in kw.items():
        setattr(new, k, v)
    new.validate()
    return new
