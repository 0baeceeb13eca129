"""Motion-only multi-object tracking on the ground plane.

A constant-velocity prediction is matched to the frame's detections by a
gated minimum-distance assignment. Tracks are born tentative, confirmed
after a few hits and removed after too many consecutive misses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

TENTATIVE, CONFIRMED, DEAD = "tentative", "confirmed", "dead"
_TRANSITIONS = {(TENTATIVE, CONFIRMED), (TENTATIVE, DEAD), (CONFIRMED, DEAD)}


@dataclass(frozen=True)
class TrackerParams:
    gate: float = 1.5
    confirm_hits: int = 2
    max_misses: int = 4
    beta: float = 0.7  # weight on the previous velocity
    dt: float = 0.5
    emit_coasting: bool = True

    def __post_init__(self):
        if not self.gate > 0 or not self.dt > 0:
            raise ValueError("gate and dt must be positive")
        if self.confirm_hits < 1 or self.max_misses < 0:
            raise ValueError("invalid lifecycle constants")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


@dataclass
class Track:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    history: list = field(default_factory=list)
    misses: int = 0
    hits: int = 1
    status: str = TENTATIVE

    def set_status(self, new: str):
        if new == self.status:
            return
        if (self.status, new) not in _TRANSITIONS:
            raise ValueError(f"illegal transition {self.status} -> {new}")
        self.status = new


@dataclass(frozen=True)
class Association:
    pairs: np.ndarray  # rows (track index, detection index)
    unmatched_tracks: np.ndarray
    unmatched_detections: np.ndarray
    cost: float


def predict(tracks, dt: float) -> np.ndarray:
    """Constant-velocity positions after ``dt`` seconds, shape (n, 2)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not tracks:
        return np.empty((0, 2))
    p = np.array([t.position for t in tracks], float)
    v = np.array([t.velocity for t in tracks], float)
    return p + v * dt


def gated_assignment(A, B, gate: float):
    """Largest one-to-one set of pairs within ``gate``, then least total distance.

    Pairs beyond the gate get a penalty larger than any feasible total, so
    the solver first maximizes the number of gated pairs and then minimizes
    their summed distance. Returns ``(pairs, distances)``.
    """
    A = np.asarray(A, float).reshape(-1, 2)
    B = np.asarray(B, float).reshape(-1, 2)
    if len(A) == 0 or len(B) == 0:
        return np.empty((0, 2), int), np.empty(0)
    D = np.hypot(A[:, None, 0] - B[None, :, 0], A[:, None, 1] - B[None, :, 1])
    ok = D <= gate
    big = (min(len(A), len(B)) + 1) * gate + 1.0
    r, c = linear_sum_assignment(np.where(ok, D, big))
    keep = ok[r, c]
    pairs = np.column_stack([r[keep], c[keep]])
    return pairs, D[r[keep], c[keep]]


def associate(predicted, detections, gate_radius: float) -> Association:
    if not gate_radius > 0:
        raise ValueError("gate_radius must be positive")
    predicted = np.asarray(predicted, float).reshape(-1, 2)
    detections = np.asarray(detections, float).reshape(-1, 2)
    pairs, d = gated_assignment(predicted, detections, gate_radius)
    ut = np.setdiff1d(np.arange(len(predicted)), pairs[:, 0])
    ud = np.setdiff1d(np.arange(len(detections)), pairs[:, 1])
    return Association(pairs, ut, ud, float(d.sum()))


class IdSource:
    """Monotonic id counter; ids are never reused."""

    def __init__(self, start: int = 0):
        self.next = start

    def __call__(self) -> int:
        i = self.next
        self.next += 1
        return i


def update_tracks(tracks, predicted, detections, assoc: Association, frame: int, params: TrackerParams, ids: IdSource):
    """Apply one association step and return the surviving tracks.

    ``predicted`` are the constant-velocity positions the association used.
    Dead tracks are dropped from the returned list.
    """
    detections = np.asarray(detections, float).reshape(-1, 2)
    matched = dict(zip(assoc.pairs[:, 0].tolist(), assoc.pairs[:, 1].tolist()))
    out = []
    for k, t in enumerate(tracks):
        if k in matched:
            new = detections[matched[k]]
            v_obs = (new - t.position) / params.dt
            t.velocity = params.beta * t.velocity + (1.0 - params.beta) * v_obs
            t.position = new.copy()
            t.misses = 0
            t.hits += 1
            if t.status == TENTATIVE and t.hits >= params.confirm_hits:
                t.set_status(CONFIRMED)
        else:
            t.position = np.asarray(predicted[k], float).copy()
            t.misses += 1
            if t.misses > params.max_misses:
                t.set_status(DEAD)
                continue
        t.history.append((frame, t.position.copy()))
        out.append(t)
    for j in assoc.unmatched_detections:
        t = Track(ids(), detections[j].copy(), np.zeros(2))
        if params.confirm_hits <= 1:
            t.set_status(CONFIRMED)
        t.history.append((frame, t.position.copy()))
        out.append(t)
    return out


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    id: int
    x: float
    y: float


def run_tracker(detections_per_frame, params: TrackerParams = TrackerParams()):
    """Track a sequence of per-frame detection arrays (frame index = list index).

    Returns the emitted records of confirmed tracks. Frames with no
    detections simply coast every track.
    """
    ids = IdSource()
    tracks = []
    records = []
    for f, dets in enumerate(detections_per_frame):
        dets = np.asarray(dets, float).reshape(-1, 2)
        pred = predict(tracks, params.dt)
        assoc = associate(pred, dets, params.gate)
        tracks = update_tracks(tracks, pred, dets, assoc, f, params, ids)
        for t in tracks:
            if t.status != CONFIRMED:
                continue
            if t.misses and not params.emit_coasting:
                continue
            records.append(TrackRecord(f, t.id, float(t.position[0]), float(t.position[1])))
    return records
