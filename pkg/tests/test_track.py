import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dronebev.track import (
    CONFIRMED,
    DEAD,
    TENTATIVE,
    IdSource,
    Track,
    TrackerParams,
    associate,
    predict,
    run_tracker,
    update_tracks,
)


def track(x, y, vx=0.0, vy=0.0, **kw):
    return Track(kw.pop("id", 0), np.array([x, y], float), np.array([vx, vy], float), **kw)


def brute_force(A, B, gate):
    """(cardinality, cost) of the best gated matching by exhaustive search."""
    D = np.hypot(A[:, None, 0] - B[None, :, 0], A[:, None, 1] - B[None, :, 1])
    best = (0, 0.0)
    n, m = len(A), len(B)
    for k in range(min(n, m), 0, -1):
        costs = [
            sum(D[i, j] for i, j in zip(rows, cols))
            for rows in itertools.combinations(range(n), k)
            for cols in itertools.permutations(range(m), k)
            if all(D[i, j] <= gate for i, j in zip(rows, cols))
        ]
        if costs:
            return k, min(costs)
    return best


def by_id(records):
    out = {}
    for r in records:
        out.setdefault(r.id, []).append(r)
    return out


class TestPredict:
    def test_shift(self):
        assert np.allclose(predict([track(1, 2, 1, 0)], 0.5), [[1.5, 2.0]])

    def test_zero_velocity(self):
        assert np.array_equal(predict([track(1, 2)], 0.5), [[1.0, 2.0]])

    def test_linearity(self):
        t = track(0.3, -0.7, 1.3, 0.4)
        half = predict([t], 0.25)[0]
        t2 = track(*half, 1.3, 0.4)
        assert np.abs(predict([t2], 0.25) - predict([t], 0.5)).max() < 1e-12

    def test_empty_and_invalid(self):
        assert predict([], 0.5).shape == (0, 2)
        with pytest.raises(ValueError):
            predict([track(0, 0)], 0.0)


class TestAssociate:
    def test_single_match(self):
        a = associate([[0, 0]], [[0.3, 0]], 1.0)
        assert a.pairs.tolist() == [[0, 0]]

    def test_crossing_free(self):
        a = associate([[0, 0], [2, 0]], [[1.9, 0], [0.1, 0]], 1.0)
        assert sorted(a.pairs.tolist()) == [[0, 1], [1, 0]]
        assert a.cost == pytest.approx(0.2, abs=1e-12)

    def test_beyond_gate(self):
        a = associate([[0, 0]], [[1.5, 0]], 1.0)
        assert len(a.pairs) == 0
        assert a.unmatched_tracks.tolist() == [0] and a.unmatched_detections.tolist() == [0]

    def test_gate_forbids_cheaper_global(self):
        # unrestricted optimum would pair (0,0)-(1.2,0); the gate forbids it
        a = associate([[0, 0], [1.0, 0]], [[1.2, 0]], 1.0)
        assert a.pairs.tolist() == [[1, 0]]

    def test_invalid_gate(self):
        with pytest.raises(ValueError):
            associate([[0, 0]], [[0, 0]], 0.0)

    @given(st.integers(0, 100_000), st.integers(0, 7), st.integers(0, 7))
    def test_brute_force_oracle(self, seed, n, m):
        rng = np.random.default_rng(seed)
        A = rng.uniform(0, 3, size=(n, 2))
        B = rng.uniform(0, 3, size=(m, 2))
        a = associate(A, B, 1.0)
        k, cost = brute_force(A, B, 1.0)
        assert len(a.pairs) == k
        assert a.cost == pytest.approx(cost, abs=1e-9)
        # one-to-one and gated
        assert len(set(a.pairs[:, 0])) == k and len(set(a.pairs[:, 1])) == k
        if k:
            assert (np.linalg.norm(A[a.pairs[:, 0]] - B[a.pairs[:, 1]], axis=1) <= 1.0).all()
        assert len(a.unmatched_tracks) == n - k and len(a.unmatched_detections) == m - k


class TestLifecycle:
    P = TrackerParams()

    def step(self, tracks, dets, frame, ids):
        dets = np.asarray(dets, float).reshape(-1, 2)
        pred = predict(tracks, self.P.dt)
        return update_tracks(tracks, pred, dets, associate(pred, dets, self.P.gate), frame, self.P, ids)

    def test_fresh_detection(self):
        ts = self.step([], [[1.0, 1.0]], 0, IdSource())
        assert len(ts) == 1
        assert (ts[0].hits, ts[0].misses, ts[0].status) == (1, 0, TENTATIVE)

    def test_confirmation_and_velocity(self):
        ids = IdSource()
        ts = self.step([], [[0.0, 0.0]], 0, ids)
        ts = self.step(ts, [[0.5, 0.0]], 1, ids)
        assert ts[0].status == CONFIRMED and ts[0].hits == 2
        # (0.5 / 0.5) m/s observed, blended with zero prior velocity
        assert np.allclose(ts[0].velocity, [0.3, 0.0])

    def test_death_after_max_misses(self):
        ids = IdSource()
        ts = self.step([], [[0.0, 0.0]], 0, ids)
        ts = self.step(ts, [[0.0, 0.0]], 1, ids)
        t = ts[0]
        for f in range(2, 6):
            ts = self.step(ts, [], f, ids)
            assert ts == [t] and t.misses == f - 1
        ts = self.step(ts, [], 6, ids)
        assert ts == [] and t.status == DEAD

    def test_illegal_transition(self):
        t = track(0, 0, status=CONFIRMED)
        with pytest.raises(ValueError):
            t.set_status(TENTATIVE)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            TrackerParams(gate=0)
        with pytest.raises(ValueError):
            TrackerParams(beta=1.5)


class TestRunTracker:
    def test_stationary(self):
        recs = run_tracker([[[1.0, 2.0]]] * 20)
        ids = by_id(recs)
        assert list(ids) == [0] and len(ids[0]) == 19
        assert all((r.x, r.y) == (1.0, 2.0) for r in recs)

    def test_straight_line_exact(self):
        dets = [[[0.5 * f, 0.2 * f]] for f in range(15)]
        recs = run_tracker(dets)
        assert {r.id for r in recs} == {0}
        for r in recs:
            assert (r.x, r.y) == (0.5 * r.frame, 0.2 * r.frame)
        assert [r.frame for r in recs] == list(range(1, 15))

    def test_gap_keeps_id(self):
        dets = [[[0.5 * f, 0.0]] if not 5 <= f < 8 else [] for f in range(14)]
        recs = run_tracker(dets)
        assert {r.id for r in recs} == {0}
        # coasting positions are emitted during the gap
        assert [r.frame for r in recs] == list(range(1, 14))

    def test_gap_longer_than_max_misses_spawns_new_id(self):
        dets = [[[0.0, 0.0]] if not 3 <= f < 9 else [] for f in range(12)]
        recs = run_tracker(dets)
        assert sorted(by_id(recs)) == [0, 1]

    def test_crossing_no_switch(self):
        # 1 m/s in opposite directions on lanes 1.6 m apart
        dets = [[(-6.0 + 0.5 * f, 0.8), (6.0 - 0.5 * f, -0.8)] for f in range(24)]
        recs = run_tracker(dets)
        for rs in by_id(recs).values():
            lanes = {0 if r.y > 0 else 1 for r in rs}
            assert len(lanes) == 1
        assert len(by_id(recs)) == 2

    def test_coasting_suppressed_when_disabled(self):
        dets = [[[0.0, 0.0]] if f != 4 else [] for f in range(8)]
        recs = run_tracker(dets, TrackerParams(emit_coasting=False))
        assert 4 not in [r.frame for r in recs]

    @given(st.integers(0, 10_000))
    def test_ids_monotone_and_never_reused(self, seed):
        rng = np.random.default_rng(seed)
        P = TrackerParams()
        ids = IdSource()
        tracks, issued, dead = [], [], set()
        for f in range(25):
            dets = rng.uniform(0, 6, size=(rng.integers(0, 5), 2))
            pred = predict(tracks, P.dt)
            before = {t.id for t in tracks}
            tracks = update_tracks(tracks, pred, dets, associate(pred, dets, P.gate), f, P, ids)
            now = {t.id for t in tracks}
            born = sorted(now - before)
            assert all(b > max(issued, default=-1) for b in born)
            issued += born
            dead |= before - now
            assert not (now & dead)
            for t in tracks:
                frames = [h[0] for h in t.history]
                assert frames == sorted(set(frames))
