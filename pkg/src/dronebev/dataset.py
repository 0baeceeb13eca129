"""Reading and writing the on-disk dataset layout.

::

    scenario.json                      full ScenarioConfig including seed
    calib/frame_<F>_drone_<D>.json     intrinsics + true pose (evaluation only)
    obs/frame_<F>_drone_<D>.jsonl      one observation per line
    gt/positions.jsonl                 frame, pedestrian id, x, y
    gt/visibility.jsonl                frame, drone, pedestrian, flag, box

Floats are written with 9 significant digits and keys in a fixed order, so
the same scenario always produces byte-identical files.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import IoFailure, SchemaError
from .geometry import CameraIntrinsics, CameraPose
from .simworld import FrameCapture, ScenarioConfig, SimulatedSequence, simulate


def fmt(x) -> str:
    """Number to JSON text with 9 significant digits."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    s = format(float(x), ".9g")
    if s in ("nan", "inf", "-inf"):
        raise ValueError(f"cannot serialize {s}")
    return s


def fmt_list(xs) -> str:
    return "[" + ",".join(fmt(x) for x in xs) + "]"


def dumps(obj) -> str:
    """Compact JSON with every float formatted by :func:`fmt`."""
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(k) + ":" + dumps(v) for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    return fmt(obj)


def write_text(path, text: str):
    """Atomic write through a sibling temp file and rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_", suffix=path.suffix)
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_jsonl(path, records):
    write_text(path, "".join(dumps(r) + "\n" for r in records))


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read: {exc}", path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc


def read_jsonl(path, required=()):
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise SchemaError(f"cannot read: {exc}", path) from exc
    out = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", path, n) from exc
        if not isinstance(rec, dict):
            raise SchemaError("record must be an object", path, n)
        missing = [k for k in required if k not in rec]
        if missing:
            raise SchemaError(f"missing key(s) {missing}", path, n)
        out.append((n, rec))
    return out


# ---------------------------------------------------------------- writing


def calib_record(K: CameraIntrinsics, pose: CameraPose, **extra) -> dict:
    rec = {
        "fx": K.focal_x,
        "fy": K.focal_y,
        "cx": K.principal_x,
        "cy": K.principal_y,
        "width": int(K.image_width),
        "height": int(K.image_height),
        "R": [float(v) for v in pose.rotation.ravel()],
        "t": [float(v) for v in pose.translation],
    }
    rec.update(extra)
    return rec


def _obs_lines(cap: FrameCapture):
    lines = []
    for cid, X, uv in zip(cap.corner_ids, cap.corner_world, cap.corner_pixels):
        lines.append(
            '{"kind":"checkerboard_corner","pixel":%s,"corner_id":%d,"world":%s}\n'
            % (fmt_list(uv), int(cid), fmt_list(X))
        )
    for uv, box in zip(cap.ped_pixels, cap.ped_boxes):
        b = "null" if np.isnan(box).any() else fmt_list(box)
        lines.append('{"kind":"pedestrian","pixel":%s,"box":%s}\n' % (fmt_list(uv), b))
    for uv, d in zip(cap.keypoints, cap.descriptors):
        lines.append('{"kind":"landmark","pixel":%s,"descriptor":%s}\n' % (fmt_list(uv), fmt_list(d)))
    return "".join(lines)


def write_dataset(seq: SimulatedSequence, out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    write_text(out / "scenario.json", json.dumps(seq.config.to_dict(), indent=2, sort_keys=True) + "\n")
    K = seq.intrinsics
    for f, row in enumerate(seq.captures):
        for cap in row:
            d = cap.drone
            write_text(out / "calib" / f"frame_{f}_drone_{d}.json", dumps(calib_record(K, seq.poses[f][d])) + "\n")
            write_text(out / "obs" / f"frame_{f}_drone_{d}.jsonl", _obs_lines(cap))
    pos = []
    for f in range(seq.frame_count):
        for pid, (x, y) in enumerate(seq.positions[f]):
            pos.append({"frame": f, "id": pid, "x": x, "y": y})
    write_jsonl(out / "gt" / "positions.jsonl", pos)
    vis = []
    F, D, N = seq.visibility.shape
    for f in range(F):
        for d in range(D):
            for pid in range(N):
                flag = int(seq.visibility[f, d, pid])
                rec = {"frame": f, "drone": d, "id": pid, "flag": flag}
                box = seq.boxes[f, d, pid]
                if flag and not np.isnan(box).any():
                    rec["box"] = [float(v) for v in box]
                vis.append(rec)
    write_jsonl(out / "gt" / "visibility.jsonl", vis)
    return out


def generate_dataset(config: ScenarioConfig, out) -> Path:
    """Simulate ``config`` and write the dataset tree to ``out``."""
    return write_dataset(simulate(config), out)


# ---------------------------------------------------------------- reading


def read_calib(path):
    rec = read_json(path)
    for k in ("fx", "fy", "cx", "cy", "width", "height", "R", "t"):
        if k not in rec:
            raise SchemaError(f"missing key {k!r}", path)
    K = CameraIntrinsics(rec["fx"], rec["fy"], rec["cx"], rec["cy"], rec["width"], rec["height"])
    R = np.array(rec["R"], float).reshape(3, 3)
    # 9-digit rounding breaks exact orthonormality; snap back to SO(3)
    U, _, Vt = np.linalg.svd(R)
    pose = CameraPose(U @ Vt, np.array(rec["t"], float))
    return K, pose, rec


def read_obs(path, frame, drone, timestamp) -> FrameCapture:
    cids, cw, cpx, ppx, pbox, kp, desc = [], [], [], [], [], [], []
    for n, rec in read_jsonl(path, required=("kind", "pixel")):
        kind = rec["kind"]
        px = rec["pixel"]
        if len(px) != 2:
            raise SchemaError("pixel must have two entries", path, n)
        if kind == "checkerboard_corner":
            if "corner_id" not in rec or "world" not in rec:
                raise SchemaError("corner record needs corner_id and world", path, n)
            cids.append(rec["corner_id"])
            cw.append(rec["world"])
            cpx.append(px)
        elif kind == "pedestrian":
            ppx.append(px)
            box = rec.get("box")
            pbox.append([np.nan] * 4 if box is None else box)
        elif kind == "landmark":
            if "descriptor" not in rec:
                raise SchemaError("landmark record needs descriptor", path, n)
            kp.append(px)
            desc.append(rec["descriptor"])
        else:
            raise SchemaError(f"unknown kind {kind!r}", path, n)

    def arr(x, w):
        return np.array(x, float).reshape(-1, w)

    dim = len(desc[0]) if desc else 0
    return FrameCapture(
        frame=frame,
        drone=drone,
        timestamp=timestamp,
        corner_ids=np.array(cids, int),
        corner_world=arr(cw, 3),
        corner_pixels=arr(cpx, 2),
        ped_pixels=arr(ppx, 2),
        ped_boxes=arr(pbox, 4),
        keypoints=arr(kp, 2),
        descriptors=arr(desc, dim) if dim else np.empty((0, 0)),
    )


def load_config(root) -> ScenarioConfig:
    path = Path(root) / "scenario.json"
    return ScenarioConfig.from_dict(read_json(path), path)


def load_dataset(root) -> SimulatedSequence:
    """Read a dataset tree back into memory (simulator truth ids stay unknown)."""
    root = Path(root)
    if not root.is_dir():
        raise SchemaError("dataset directory not found", root)
    cfg = load_config(root)
    F, D, N = cfg.frame_count, cfg.drone_count, cfg.pedestrian_count
    captures, poses = [], []
    drone_pos = np.zeros((F, D, 3))
    K = None
    for f in range(F):
        row_c, row_p = [], []
        for d in range(D):
            K, pose, _ = read_calib(root / "calib" / f"frame_{f}_drone_{d}.json")
            row_p.append(pose)
            drone_pos[f, d] = pose.center
            row_c.append(read_obs(root / "obs" / f"frame_{f}_drone_{d}.jsonl", f, d, f * cfg.capture_interval))
        captures.append(row_c)
        poses.append(row_p)
    positions = np.full((F, N, 2), np.nan)
    ppath = root / "gt" / "positions.jsonl"
    for n, rec in read_jsonl(ppath, required=("frame", "id", "x", "y")):
        f, i = rec["frame"], rec["id"]
        if not (0 <= f < F and 0 <= i < N):
            raise SchemaError("frame or id out of range", ppath, n)
        positions[f, i] = rec["x"], rec["y"]
    if np.isnan(positions).any():
        raise SchemaError("missing ground-truth positions", ppath)
    visibility = np.zeros((F, D, N), np.int8)
    boxes = np.full((F, D, N, 4), np.nan)
    vpath = root / "gt" / "visibility.jsonl"
    for n, rec in read_jsonl(vpath, required=("frame", "drone", "id", "flag")):
        f, d, i = rec["frame"], rec["drone"], rec["id"]
        if not (0 <= f < F and 0 <= d < D and 0 <= i < N):
            raise SchemaError("index out of range", vpath, n)
        visibility[f, d, i] = rec["flag"]
        if "box" in rec:
            boxes[f, d, i] = rec["box"]
    if K is None:
        K = cfg.camera.intrinsics()
    return SimulatedSequence(cfg, K, captures, poses, positions, visibility, boxes, drone_pos)


def validate_dataset(root) -> dict:
    """Schema check only; returns a small summary or raises :class:`SchemaError`."""
    seq = load_dataset(root)
    n_obs = sum(len(c.ped_pixels) for row in seq.captures for c in row)
    return {
        "frames": seq.frame_count,
        "drones": seq.drone_count,
        "pedestrians": seq.config.pedestrian_count,
        "pedestrian_observations": n_obs,
    }
