"""Files written by pipeline runs, sweeps and dumps.

::

    <out>/run_config.json                 dataset, pipeline parameters, seeds
    <out>/report.json, report.csv         per-seed metrics plus mean and std
    <out>/seed_<S>/calib_est/frame_<F>_drone_<D>.json
    <out>/seed_<S>/reg/frame_<F>_drone_<D>.json
    <out>/seed_<S>/det/frame_<F>.jsonl    x, y, score per detection
    <out>/seed_<S>/tracks/pred.jsonl      frame, id, x, y

Rasters are plain (ASCII) portable graymaps.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .dataset import calib_record, dumps, fmt, read_jsonl, write_jsonl, write_text
from .evalmetrics import METRIC_NAMES, MetricsReport
from .register import RegistrationResult

TOTAL_NAMES = ("FP", "FN", "IDSW", "GT", "TP")
CSV_COLUMNS = ("seed",) + METRIC_NAMES + TOTAL_NAMES + ("det_MODA", "det_MODP")


def _round(obj):
    """Floats to 9 significant digits so JSON text is stable."""
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, obj):
    write_text(path, json.dumps(_round(obj), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- per seed


def write_seed_outputs(root, seq, result):
    """Estimated calibrations, registrations, detections and tracks for one seed."""
    root = Path(root)
    K = seq.intrinsics
    for (f, d), v in sorted(result.views.items()):
        name = f"frame_{f}_drone_{d}.json"
        c = v.calibration
        if c is not None:
            rec = calib_record(K, c.pose, rms=c.rms, count=c.count, held_over=bool(c.held_over), source_frame=v.calib_frame)
            write_text(root / "calib_est" / name, dumps(rec) + "\n")
        r = v.registration
        if isinstance(r, RegistrationResult):
            rec = {
                "H": [float(x) for x in r.homography.ravel()],
                "confidence": r.confidence,
                "inliers": int(r.inlier_count),
                "matches": int(r.match_count),
                "seed": int(r.seed),
                "reference_frame": v.reference,
            }
            write_text(root / "reg" / name, dumps(rec) + "\n")
        elif r is not None:
            exc, seed = r
            rec = {"error": type(exc).__name__, "message": str(exc), "seed": int(seed), "reference_frame": v.reference}
            write_text(root / "reg" / name, dumps(rec) + "\n")
    for f, dets in enumerate(result.detections):
        write_jsonl(root / "det" / f"frame_{f}.jsonl", [{"x": q.x, "y": q.y, "score": q.score} for q in dets])
    write_jsonl(root / "tracks" / "pred.jsonl", [{"frame": t.frame, "id": t.id, "x": t.x, "y": t.y} for t in result.tracks])


def read_tracks(path) -> dict:
    """``tracks/pred.jsonl`` or ``gt/positions.jsonl`` as frame -> {id: (x, y)}."""
    out = {}
    for _, rec in read_jsonl(path, required=("frame", "id", "x", "y")):
        out.setdefault(int(rec["frame"]), {})[int(rec["id"])] = (float(rec["x"]), float(rec["y"]))
    return out


def read_detections(det_dir, frames) -> dict:
    out = {}
    for f in range(frames):
        rows = read_jsonl(Path(det_dir) / f"frame_{f}.jsonl", required=("x", "y", "score"))
        out[f] = np.array([[r["x"], r["y"]] for _, r in rows], float).reshape(-1, 2)
    return out


# ---------------------------------------------------------------- reports


def _row(seed, rep: MetricsReport):
    det = rep.extra.get("detector", {})
    row = {"seed": seed}
    row.update({k: getattr(rep, k) for k in METRIC_NAMES + TOTAL_NAMES})
    row["det_MODA"] = det.get("MODA", rep.extra.get("detector_MODA"))
    row["det_MODP"] = det.get("MODP", rep.extra.get("detector_MODP"))
    return row


def _std_row(agg: MetricsReport, reports):
    row = {"seed": "std"}
    row.update(agg.std)
    n = len(reports)
    for k in TOTAL_NAMES:
        v = np.array([getattr(r, k) for r in reports], float)
        row[k] = float(v.std(ddof=1)) if n > 1 else 0.0
    for k in ("det_MODA", "det_MODP"):
        row[k] = agg.extra.get(f"detector_{k[4:]}_std")
    return row


def _mean_row(agg: MetricsReport, reports):
    row = {"seed": "mean"}
    row.update(agg.metrics())
    for k in TOTAL_NAMES:
        row[k] = float(np.mean([getattr(r, k) for r in reports]))
    for k in ("det_MODA", "det_MODP"):
        row[k] = agg.extra.get(f"detector_{k[4:]}")
    return row


def report_rows(seeds, reports, agg):
    rows = [_row(s, r) for s, r in zip(seeds, reports)]
    return rows + [_mean_row(agg, reports), _std_row(agg, reports)]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return fmt(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def write_reports(root, seeds, reports, agg, meta=None):
    root = Path(root)
    rows = report_rows(seeds, reports, agg)
    write_text(root / "report.csv", csv_text(CSV_COLUMNS, rows))
    doc = {
        "seeds": list(seeds),
        "mean": agg.metrics(),
        "std": agg.std,
        "totals": agg.totals(),
        "per_seed": [
            {"seed": s, "metrics": r.metrics(), "totals": r.totals(), "extra": r.extra} for s, r in zip(seeds, reports)
        ],
    }
    if meta:
        doc.update(meta)
    write_json(root / "report.json", doc)


SWEEP_METRICS = ("MODA", "MODP", "MOTA", "MOTP")


def sweep_rows(rates, aggs):
    rows = []
    for rate, agg in zip(rates, aggs):
        row = {"rate": rate}
        for k in SWEEP_METRICS:
            row[f"{k}_mean"] = getattr(agg, k)
            row[f"{k}_std"] = agg.std[k]
        rows.append(row)
    return rows


def sweep_columns():
    return ("rate",) + tuple(f"{k}_{s}" for k in SWEEP_METRICS for s in ("mean", "std"))


# ---------------------------------------------------------------- rasters


def pgm_text(img, maxval: int = 255) -> str:
    img = np.asarray(img, int)
    h, w = img.shape
    lines = [f"P2\n{w} {h}\n{maxval}\n"]
    lines.extend(" ".join(map(str, row)) + "\n" for row in img)
    return "".join(lines)


def read_pgm(path):
    tok = Path(path).read_text().split()
    if tok[0] != "P2":
        raise ValueError("not a plain graymap")
    w, h, maxval = int(tok[1]), int(tok[2]), int(tok[3])
    return np.array(tok[4:], int).reshape(h, w), maxval


def occupancy_raster(scores, scale: int = 4) -> np.ndarray:
    """Grid scores (x along rows of the grid) to an image with y pointing up."""
    img = np.rint(np.clip(np.asarray(scores, float), 0.0, 1.0) * 255).astype(int)
    img = img.T[::-1]
    return np.kron(img, np.ones((scale, scale), int))


def gray_levels(n: int, maxval: int = 255):
    """``n`` distinct gray levels in ``[lo, maxval]``, brightest last."""
    if n == 0:
        return []
    if n == 1:
        return [maxval]
    lo = 64 if maxval == 255 else 1
    return [int(v) for v in np.linspace(lo, maxval, n).round()]


def trajectory_image(gt: dict, pred: dict, half_extent: float, px_per_m: float = 10.0):
    """Side-by-side trajectories (ground truth left, prediction right).

    Returns ``(image, maxval, legend rows)``; within a panel each id gets its
    own gray level on a black background.
    """
    size = int(np.ceil(2 * half_extent * px_per_m)) + 1
    gap = 4
    ids = {label: sorted({i for row in frames.values() for i in row}) for label, frames in (("gt", gt), ("pred", pred))}
    maxval = 255 if max(len(v) for v in ids.values()) <= 191 else 65535
    panels = []
    legend = []
    for label, frames in (("gt", gt), ("pred", pred)):
        img = np.zeros((size, size), int)
        for i, lv in zip(ids[label], gray_levels(len(ids[label]), maxval)):
            pts = np.array([row[i] for row in frames.values() if i in row], float).reshape(-1, 2)
            c = np.rint((pts[:, 0] + half_extent) * px_per_m).astype(int)
            r = np.rint((half_extent - pts[:, 1]) * px_per_m).astype(int)
            ok = (c >= 0) & (c < size) & (r >= 0) & (r < size)
            img[r[ok], c[ok]] = lv
            legend.append((label, i, lv))
        panels.append(img)
    out = np.concatenate([panels[0], np.zeros((size, gap), int), panels[1]], axis=1)
    return out, maxval, legend
