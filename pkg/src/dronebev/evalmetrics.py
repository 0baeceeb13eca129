"""CLEAR-MOT style detection and tracking scores on the ground plane.

Predictions are matched to ground truth per frame by the same gated
assignment the tracker uses, with the match radius as the gate. Precision
scores are ``1 - d / r`` averaged over true positives, in percent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NoGroundTruth
from .track import gated_assignment

METRIC_NAMES = ("MODA", "MODP", "MOTA", "MOTP", "IDF1", "MT")


@dataclass(frozen=True)
class FrameMatchResult:
    frame: int
    tp: tuple  # (gt id, pred id, distance) triples
    fp: int
    fn: int
    gt_count: int
    pred_count: int = 0


def _as_points(items):
    """Accept ``{id: (x, y)}`` or an (n, 2) array; returns (ids, xy)."""
    if isinstance(items, dict):
        ids = list(items.keys())
        xy = np.array([items[k] for k in ids], float).reshape(-1, 2)
        return ids, xy
    xy = np.asarray(items, float).reshape(-1, 2)
    return list(range(len(xy))), xy


def match_frame(gt, pred, r: float = 0.5, frame: int = 0) -> FrameMatchResult:
    if not r > 0:
        raise ValueError("match radius must be positive")
    gid, G = _as_points(gt)
    pid, P = _as_points(pred)
    pairs, d = gated_assignment(G, P, r)
    tp = tuple((gid[a], pid[b], float(x)) for (a, b), x in zip(pairs.tolist(), d))
    return FrameMatchResult(frame, tp, len(P) - len(tp), len(G) - len(tp), len(G), len(P))


def _totals(results):
    gt = sum(r.gt_count for r in results)
    tp = sum(len(r.tp) for r in results)
    fp = sum(r.fp for r in results)
    fn = sum(r.fn for r in results)
    return gt, tp, fp, fn


def _precision(results, r):
    d = [x for res in results for _, _, x in res.tp]
    if not d:
        return 0.0
    return 100.0 * float(np.mean(1.0 - np.asarray(d) / r))


def detection_metrics(results, r: float = 0.5):
    """Returns ``(MODA, MODP)`` in percent."""
    gt, _, fp, fn = _totals(results)
    if gt == 0:
        raise NoGroundTruth("no ground-truth objects")
    return 100.0 * (1.0 - (fp + fn) / gt), _precision(results, r)


def count_switches(results) -> int:
    """Changes of a gt id's matched pred id against its last matched frame."""
    last = {}
    n = 0
    for res in sorted(results, key=lambda x: x.frame):
        for g, p, _ in res.tp:
            if g in last and last[g] != p:
                n += 1
            last[g] = p
    return n


def identity_scores(frames):
    """Global identity matching over :class:`TrackFrame` rows; returns ``(IDTP, IDFP, IDFN)``.

    A gt/pred identity pair earns one point per frame in which the two are
    within the match radius. Identities are paired one-to-one to maximize
    the total, which is the usual IDF1 construction.
    """
    gt_ids = sorted({g for r in frames for g in r.gt_ids})
    pr_ids = sorted({p for r in frames for p in r.pred_ids})
    n_gt = sum(r.gt_count for r in frames)
    n_pr = sum(r.pred_count for r in frames)
    if not gt_ids or not pr_ids:
        return 0, n_pr, n_gt
    gi = {g: k for k, g in enumerate(gt_ids)}
    pi = {p: k for k, p in enumerate(pr_ids)}
    W = np.zeros((len(gt_ids), len(pr_ids)))
    for r in frames:
        for g, p in r.near:
            W[gi[g], pi[p]] += 1
    a, b = linear_sum_assignment(-W)
    idtp = int(W[a, b].sum())
    return idtp, n_pr - idtp, n_gt - idtp


@dataclass(frozen=True)
class TrackFrame:
    """Per-frame input to identity scoring: ids present and all pairs within r."""

    frame: int
    gt_ids: tuple
    pred_ids: tuple
    near: tuple
    gt_count: int
    pred_count: int


def track_frames(gt_frames, pred_frames, r: float = 0.5):
    """Match a whole sequence; returns ``(FrameMatchResult list, TrackFrame list)``.

    ``gt_frames`` and ``pred_frames`` map frame index to ``{id: (x, y)}``.
    """
    frames = sorted(set(gt_frames) | set(pred_frames))
    res, tf = [], []
    for f in frames:
        g = gt_frames.get(f, {})
        p = pred_frames.get(f, {})
        res.append(match_frame(g, p, r, f))
        gid, G = _as_points(g)
        pid, P = _as_points(p)
        near = ()
        if len(G) and len(P):
            D = np.hypot(G[:, None, 0] - P[None, :, 0], G[:, None, 1] - P[None, :, 1])
            near = tuple((gid[a], pid[b]) for a, b in zip(*np.nonzero(D <= r)))
        tf.append(TrackFrame(f, tuple(gid), tuple(pid), near, len(G), len(P)))
    return res, tf


def mostly_tracked(results, gt_frames) -> float:
    """Percent of gt ids matched in at least 80% of the frames they appear in."""
    present = {}
    for f, g in gt_frames.items():
        for k in g:
            present[k] = present.get(k, 0) + 1
    if not present:
        return 0.0
    hit = {}
    for r in results:
        for g, _, _ in r.tp:
            hit[g] = hit.get(g, 0) + 1
    # integer comparison keeps the 80% boundary exact
    mt = sum(1 for k, n in present.items() if 5 * hit.get(k, 0) >= 4 * n)
    return 100.0 * mt / len(present)


def tracking_metrics(gt_frames, pred_frames, r: float = 0.5) -> dict:
    """MOTA, MOTP, IDSW, IDF1 and MT for id-labelled sequences."""
    res, tf = track_frames(gt_frames, pred_frames, r)
    gt, tp, fp, fn = _totals(res)
    if gt == 0:
        raise NoGroundTruth("no ground-truth objects")
    idsw = count_switches(res)
    idtp, idfp, idfn = identity_scores(tf)
    denom = 2 * idtp + idfp + idfn
    return {
        "MOTA": 100.0 * (1.0 - (fp + fn + idsw) / gt),
        "MOTP": _precision(res, r),
        "IDSW": idsw,
        "IDF1": 100.0 * 2 * idtp / denom if denom else 0.0,
        "MT": mostly_tracked(res, gt_frames),
        "IDTP": idtp,
        "IDFP": idfp,
        "IDFN": idfn,
        "results": res,
    }


@dataclass(frozen=True)
class MetricsReport:
    """Scores in percent plus the integer totals they derive from.

    ``MODA`` and ``MOTA`` are recomputable from ``FP``, ``FN``, ``IDSW`` and
    ``GT`` exactly. ``extra`` carries auxiliary blocks such as the raw
    detector scores.
    """

    MODA: float
    MODP: float
    MOTA: float
    MOTP: float
    IDF1: float
    MT: float
    FP: int
    FN: int
    IDSW: int
    GT: int
    TP: int
    extra: dict = field(default_factory=dict)
    per_seed: tuple = ()
    std: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def totals(self) -> dict:
        return {k: getattr(self, k) for k in ("FP", "FN", "IDSW", "GT", "TP")}


def evaluate(gt_frames, pred_frames, r: float = 0.5, det_frames=None) -> MetricsReport:
    """Score one run.

    Every headline number comes from the tracker output so that the stored
    totals reproduce MODA and MOTA exactly. When ``det_frames`` (frame ->
    (n, 2) detections) is given, the detector's own MODA/MODP are attached
    under ``extra['detector']``.
    """
    tm = tracking_metrics(gt_frames, pred_frames, r)
    res = tm["results"]
    gt, tp, fp, fn = _totals(res)
    moda, modp = detection_metrics(res, r)
    extra = {"IDTP": tm["IDTP"], "IDFP": tm["IDFP"], "IDFN": tm["IDFN"]}
    if det_frames is not None:
        dres = [match_frame(gt_frames.get(f, {}), det_frames.get(f, np.empty((0, 2))), r, f) for f in sorted(set(gt_frames) | set(det_frames))]
        dg, dtp, dfp, dfn = _totals(dres)
        dmoda, dmodp = detection_metrics(dres, r)
        extra["detector"] = {"MODA": dmoda, "MODP": dmodp, "FP": dfp, "FN": dfn, "GT": dg, "TP": dtp}
    return MetricsReport(moda, modp, tm["MOTA"], tm["MOTP"], tm["IDF1"], tm["MT"], fp, fn, tm["IDSW"], gt, tp, extra)


def _mean_std(values):
    v = np.asarray(values, float)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def aggregate_seeds(reports) -> MetricsReport:
    """Sample mean and (n - 1) standard deviation of every metric across seeds.

    Totals in the aggregate are summed over seeds.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    mean, std = {}, {}
    for k in METRIC_NAMES:
        mean[k], std[k] = _mean_std([getattr(r, k) for r in reports])
    tot = {k: int(sum(getattr(r, k) for r in reports)) for k in ("FP", "FN", "IDSW", "GT", "TP")}
    extra = {}
    dets = [r.extra.get("detector") for r in reports]
    if all(d is not None for d in dets):
        for k in ("MODA", "MODP"):
            m, s = _mean_std([d[k] for d in dets])
            extra[f"detector_{k}"] = m
            extra[f"detector_{k}_std"] = s
    return MetricsReport(**mean, **tot, extra=extra, per_seed=tuple(reports), std=std)


def pooled_check(report: MetricsReport) -> bool:
    """True when the stored totals reproduce MODA and MOTA of a single run."""
    if report.GT == 0:
        return False
    moda = 100.0 * (1.0 - (report.FP + report.FN) / report.GT)
    mota = 100.0 * (1.0 - (report.FP + report.FN + report.IDSW) / report.GT)
    return math.isclose(moda, report.MODA, abs_tol=1e-9) and math.isclose(mota, report.MOTA, abs_tol=1e-9)
