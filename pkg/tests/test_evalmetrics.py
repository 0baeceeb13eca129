import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dronebev.errors import NoGroundTruth
from dronebev.evalmetrics import (
    MetricsReport,
    aggregate_seeds,
    detection_metrics,
    evaluate,
    match_frame,
    pooled_check,
    tracking_metrics,
)


# --- exhaustive reference implementation ------------------------------------


def oracle_match(gt, pred, r):
    """Best matching by enumeration: most pairs within r, then least total distance."""
    g, p = list(gt.items()), list(pred.items())
    best = ((), 0, 0.0)
    for k in range(min(len(g), len(p)), 0, -1):
        found = None
        for gs in itertools.combinations(range(len(g)), k):
            for ps in itertools.permutations(range(len(p)), k):
                d = [math.dist(g[a][1], p[b][1]) for a, b in zip(gs, ps)]
                if max(d) <= r and (found is None or sum(d) < found[1] - 1e-12):
                    found = (tuple((g[a][0], p[b][0], x) for a, b, x in zip(gs, ps, d)), sum(d))
        if found:
            return found[0]
    return best[0]


def oracle_metrics(gt_frames, pred_frames, r):
    frames = sorted(set(gt_frames) | set(pred_frames))
    GT = FP = FN = TP = idsw = 0
    prec = []
    last = {}
    hits = {}
    seen = {}
    for f in frames:
        g, p = gt_frames.get(f, {}), pred_frames.get(f, {})
        tp = oracle_match(g, p, r)
        GT += len(g)
        TP += len(tp)
        FP += len(p) - len(tp)
        FN += len(g) - len(tp)
        for a, b, d in tp:
            prec.append(1 - d / r)
            if a in last and last[a] != b:
                idsw += 1
            last[a] = b
            hits[a] = hits.get(a, 0) + 1
        for a in g:
            seen[a] = seen.get(a, 0) + 1
    # identity F1 by trying every injective gt -> pred id map
    gids = sorted({a for f in frames for a in gt_frames.get(f, {})})
    pids = sorted({b for f in frames for b in pred_frames.get(f, {})})
    best = 0
    n_pred = sum(len(pred_frames.get(f, {})) for f in frames)
    for k in range(0, min(len(gids), len(pids)) + 1):
        for gs in itertools.combinations(gids, k):
            for ps in itertools.permutations(pids, k):
                s = 0
                for f in frames:
                    g, p = gt_frames.get(f, {}), pred_frames.get(f, {})
                    s += sum(1 for a, b in zip(gs, ps) if a in g and b in p and math.dist(g[a], p[b]) <= r)
                best = max(best, s)
    idf1 = 200 * best / (2 * best + (n_pred - best) + (GT - best))
    mt = 100 * sum(1 for a, n in seen.items() if hits.get(a, 0) >= 0.8 * n) / len(seen)
    return {
        "MODA": 100 * (1 - (FP + FN) / GT),
        "MODP": 100 * float(np.mean(prec)) if prec else 0.0,
        "MOTA": 100 * (1 - (FP + FN + idsw) / GT),
        "MOTP": 100 * float(np.mean(prec)) if prec else 0.0,
        "IDSW": idsw,
        "IDF1": idf1,
        "MT": mt,
        "totals": (FP, FN, idsw, GT, TP),
    }


def assert_agrees(gt_frames, pred_frames, r=0.5):
    rep = evaluate(gt_frames, pred_frames, r)
    want = oracle_metrics(gt_frames, pred_frames, r)
    assert (rep.FP, rep.FN, rep.IDSW, rep.GT, rep.TP) == want["totals"]
    for k in ("MODA", "MODP", "MOTA", "MOTP", "IDF1", "MT"):
        assert getattr(rep, k) == pytest.approx(want[k], abs=1e-9), k
    return rep


# --- fixtures ---------------------------------------------------------------


def walk(ids, frames, step=1.0, y0=0.0):
    """gt id k walks along y = y0 + 2k, one ``step`` per frame."""
    return {f: {k: (step * f, y0 + 2.0 * k) for k in ids} for f in frames}


class TestMatchFrame:
    def test_within_radius(self):
        m = match_frame({0: (0.0, 0.0)}, {0: (0.3, 0.0)}, 0.5)
        assert len(m.tp) == 1 and m.tp[0][2] == pytest.approx(0.3)
        assert (m.fp, m.fn) == (0, 0)

    def test_outside_radius(self):
        m = match_frame({0: (0.0, 0.0)}, {0: (0.8, 0.0)}, 0.5)
        assert (len(m.tp), m.fp, m.fn) == (0, 1, 1)

    def test_invalid_radius(self):
        with pytest.raises(ValueError):
            match_frame({}, {}, 0.0)

    def test_five_by_five_exhaustive(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            G = rng.uniform(0, 1.5, size=(5, 2))
            P = G + rng.uniform(-0.35, 0.35, size=(5, 2))
            gt, pred = dict(enumerate(map(tuple, G))), dict(enumerate(map(tuple, P)))
            got = match_frame(gt, pred, 0.5)
            want = oracle_match(gt, pred, 0.5)
            assert len(got.tp) == len(want)
            assert sum(x for *_, x in got.tp) == pytest.approx(sum(x for *_, x in want), abs=1e-12)

    @given(st.integers(0, 100_000))
    def test_bookkeeping_and_radius_monotone(self, seed):
        rng = np.random.default_rng(seed)
        G = rng.uniform(0, 3, size=(rng.integers(0, 6), 2))
        P = rng.uniform(0, 3, size=(rng.integers(0, 6), 2))
        prev = -1
        for r in (0.2, 0.5, 1.0, 2.0):
            m = match_frame(G, P, r)
            assert len(m.tp) + m.fn == m.gt_count == len(G)
            assert len(m.tp) + m.fp == len(P)
            assert all(d <= r for *_, d in m.tp)
            assert len(m.tp) >= prev
            prev = len(m.tp)


class TestDetectionMetrics:
    def test_moda_eighty(self):
        gt = {k: (2.0 * k, 0.0) for k in range(10)}
        pred = {k: (2.0 * k, 0.1) for k in range(9)}
        pred[9] = (50.0, 0.0)
        m = match_frame(gt, pred, 0.5)
        assert (m.gt_count, m.fp, m.fn) == (10, 1, 1)
        moda, _ = detection_metrics([m], 0.5)
        assert moda == pytest.approx(80.0, abs=1e-12)

    def test_modp_bounds(self):
        assert detection_metrics([match_frame({0: (0, 0)}, {0: (0, 0)}, 0.5)], 0.5)[1] == 100.0
        assert detection_metrics([match_frame({0: (0, 0)}, {0: (0.5, 0)}, 0.5)], 0.5)[1] == 0.0

    def test_no_ground_truth(self):
        with pytest.raises(NoGroundTruth):
            detection_metrics([match_frame({}, {0: (0, 0)})])


class TestTrackingMetrics:
    def test_perfect_single(self):
        gt = walk([0], range(100), step=0.05)
        t = tracking_metrics(gt, {f: {7: p[0]} for f, p in gt.items()})
        assert (t["MOTA"], t["IDSW"], t["IDF1"], t["MT"]) == (100.0, 0, 100.0, 100.0)

    def test_mota_ninety_eight(self):
        gt = walk(range(10), range(10))
        pred = {f: dict(g) for f, g in gt.items()}
        del pred[3][4]  # one FN
        pred[6][99] = (100.0, 100.0)  # one FP
        rep = evaluate(gt, pred)
        assert (rep.FP, rep.FN, rep.IDSW, rep.GT) == (1, 1, 0, 100)
        assert rep.MOTA == pytest.approx(98.0, abs=1e-12)

    def test_swap(self):
        gt = walk([0, 1], range(100), step=0.05)
        pred = {f: {(0 if f < 50 else 2): g[0], 1: g[1]} for f, g in gt.items()}
        rep = assert_agrees(gt, pred)
        assert rep.IDSW == 1
        assert rep.MOTA == pytest.approx(99.5, abs=1e-12)
        assert rep.IDF1 == pytest.approx(75.0, abs=1e-12)  # IDTP 150, IDFP 50, IDFN 50

    def test_switch_memory_spans_gaps(self):
        gt = walk([0], range(6))
        pred = {f: ({1: gt[f][0]} if f < 2 else {} if f < 4 else {2: gt[f][0]}) for f in gt}
        assert tracking_metrics(gt, pred)["IDSW"] == 1

    @pytest.mark.parametrize("matched,expected", [(8, 80.0), (7, 60.0)])
    def test_mostly_tracked_boundary(self, matched, expected):
        gt = walk(range(5), range(10))
        # five ids is beyond the identity oracle's reach, so check the totals directly
        pred = {f: dict(g) for f, g in gt.items()}
        for f in range(matched, 10):
            del pred[f][0]  # gt 0 matched in `matched` of 10 frames
        for f in range(7, 10):
            del pred[f][1]  # gt 1 matched in 7 of 10 frames
        rep = evaluate(gt, pred)
        assert rep.MT == expected
        assert rep.FN == (10 - matched) + 3 and rep.IDSW == 0

    def test_no_ground_truth(self):
        with pytest.raises(NoGroundTruth):
            tracking_metrics({0: {}}, {0: {1: (0, 0)}})


class TestOracleFixtures:
    @given(st.integers(0, 100_000))
    def test_random_small_sequences(self, seed):
        rng = np.random.default_rng(seed)
        n_frames = int(rng.integers(1, 11))
        gt, pred = {}, {}
        for f in range(n_frames):
            gt[f] = {k: tuple(rng.uniform(0, 1.5, 2)) for k in range(3) if rng.random() < 0.8}
            pred[f] = {k: tuple(rng.uniform(0, 1.5, 2)) for k in range(10, 13) if rng.random() < 0.8}
        if sum(map(len, gt.values())) == 0:
            gt[0] = {0: (0.0, 0.0)}
        rep = assert_agrees(gt, pred)
        assert rep.MODA >= rep.MOTA
        assert pooled_check(rep)


class TestAggregate:
    def _rep(self, v):
        return MetricsReport(v, v, v, v, v, v, 1, 1, 0, 10, 9)

    def test_single(self):
        a = aggregate_seeds([self._rep(80.0)])
        assert a.MODA == 80.0 and a.std["MODA"] == 0.0

    def test_two_point(self):
        a = aggregate_seeds([self._rep(80.0), self._rep(90.0)])
        assert a.MODA == 85.0
        assert a.std["MODA"] == pytest.approx(math.sqrt(50.0), abs=1e-12)
        assert (a.GT, a.FP) == (20, 2)

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_seeds([])

    def test_detector_block(self):
        gt = walk([0, 1], range(4))
        det = {f: np.array(list(g.values())) for f, g in gt.items()}
        rep = evaluate(gt, {f: {} for f in gt}, det_frames=det)
        assert rep.extra["detector"]["MODA"] == 100.0
        assert rep.MODA == 0.0
