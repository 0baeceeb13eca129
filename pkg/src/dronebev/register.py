"""Feature-based registration of a drone view against its reference view.

Descriptors are matched with a nearest-neighbour ratio test plus a mutual
best-match check, then a homography between the two pixel planes is fitted
with RANSAC. All hypotheses of a RANSAC run are drawn up front from a
seeded generator and scored in vectorized batches, so a result depends
only on its inputs and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .calib import dlt_homography
from .errors import DegenerateConsensus, InsufficientMatches
from .geometry import normalize_homography

COLLINEAR_EPS = 1e-6


@dataclass(frozen=True)
class MatchSet:
    """One-to-one matches as rows ``(current index, reference index)``."""

    pairs: np.ndarray
    ratios: np.ndarray

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class RegistrationParams:
    ratio: float = 0.8
    iterations: int = 1000
    threshold: float = 2.0
    seed: int = 0
    adaptive: bool = False
    adaptive_confidence: float = 0.999


@dataclass(frozen=True)
class RegistrationResult:
    homography: np.ndarray  # maps current pixels to reference pixels
    inliers: np.ndarray
    confidence: float
    seed: int
    inlier_count: int
    match_count: int
    matches: MatchSet = None


def _pairwise_distances(A, B):
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(d2, 0.0))


def _two_nearest(D):
    """Per row: best index, best distance, second-best distance (ties -> lower index)."""
    rows = np.arange(len(D))
    j = D.argmin(axis=1)  # first occurrence, so exact ties pick the lower index
    d1 = D[rows, j]
    saved = D[rows, j].copy()
    D[rows, j] = np.inf
    d2 = D.min(axis=1)
    D[rows, j] = saved
    return j, d1, d2


def _ratio(d1, d2):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(d2 > 0, d1 / d2, 1.0)
    return r


def match_descriptors(D_cur, D_ref, tau: float = 0.8) -> MatchSet:
    """Symmetric nearest-neighbour matching with the ratio test in both directions."""
    D_cur = np.asarray(D_cur, float)
    D_ref = np.asarray(D_ref, float)
    if not 0 < tau < 1:
        raise ValueError("ratio threshold must lie in (0, 1)")
    empty = MatchSet(np.empty((0, 2), int), np.empty(0))
    if len(D_cur) < 2 or len(D_ref) < 2:
        return empty
    if D_cur.shape[1] != D_ref.shape[1]:
        raise ValueError("descriptor dimensions differ")
    D = _pairwise_distances(D_cur, D_ref)
    fwd, f1, f2 = _two_nearest(D)
    bwd, b1, b2 = _two_nearest(D.T)
    rf = _ratio(f1, f2)
    rb = _ratio(b1, b2)
    i = np.arange(len(D_cur))
    mutual = bwd[fwd] == i
    ok = mutual & (rf < tau) & (rb[fwd] < tau)
    pairs = np.column_stack([i[ok], fwd[ok]])
    return MatchSet(pairs, np.maximum(rf[ok], rb[fwd[ok]]))


# ---------------------------------------------------------------- RANSAC


def _normalizing(pts):
    c = pts.mean(axis=0)
    d = np.linalg.norm(pts - c, axis=1).mean()
    s = math.sqrt(2) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _draw_samples(rng, n, iterations):
    idx = rng.integers(0, n, size=(iterations, 4))
    while True:
        s = np.sort(idx, axis=1)
        dup = (np.diff(s, axis=1) == 0).any(axis=1)
        if not dup.any():
            return idx
        idx[dup] = rng.integers(0, n, size=(int(dup.sum()), 4))


def _no_three_collinear(P):
    """``P`` has shape (I, 4, 2); True where every triple spans area > eps."""
    ok = np.ones(len(P), bool)
    for a, b, c in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        u = P[:, b] - P[:, a]
        v = P[:, c] - P[:, a]
        ok &= 0.5 * np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) > COLLINEAR_EPS
    return ok


def _four_point_batch(src, dst):
    """Exact homographies (h33 = 1) for batches of 4 correspondences."""
    I = len(src)
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    A = np.zeros((I, 8, 8))
    b = np.zeros((I, 8))
    A[:, 0::2, 0] = x
    A[:, 0::2, 1] = y
    A[:, 0::2, 2] = 1
    A[:, 0::2, 6] = -u * x
    A[:, 0::2, 7] = -u * y
    A[:, 1::2, 3] = x
    A[:, 1::2, 4] = y
    A[:, 1::2, 5] = 1
    A[:, 1::2, 6] = -v * x
    A[:, 1::2, 7] = -v * y
    b[:, 0::2] = u
    b[:, 1::2] = v
    det = np.linalg.det(A)
    good = np.abs(det) > 1e-12
    A[~good] = np.eye(8)
    h = np.linalg.solve(A, b[..., None])[..., 0]
    H = np.concatenate([h, np.ones((I, 1))], axis=1).reshape(I, 3, 3)
    return H, good


def _adjugate(H):
    c0, c1, c2 = H[:, :, 0], H[:, :, 1], H[:, :, 2]
    return np.stack([np.cross(c1, c2), np.cross(c2, c0), np.cross(c0, c1)], axis=1)


def _transfer_sq(H, Hi, src, dst):
    """Squared forward and backward transfer errors for a batch of homographies."""
    I = len(H)
    sh = np.vstack([src.T, np.ones(len(src))])
    dh = np.vstack([dst.T, np.ones(len(dst))])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (H.reshape(-1, 3) @ sh).reshape(I, 3, -1)
        w = 1.0 / q[:, 2]
        a = q[:, 0] * w - dst[:, 0]
        b = q[:, 1] * w - dst[:, 1]
        f = a * a + b * b
        p = (Hi.reshape(-1, 3) @ dh).reshape(I, 3, -1)
        w = 1.0 / p[:, 2]
        a = p[:, 0] * w - src[:, 0]
        b = p[:, 1] * w - src[:, 1]
        f += a * a + b * b
    return f


def symmetric_transfer_errors(H, src, dst):
    """Errors ``sqrt(|H src - dst|^2 + |H^-1 dst - src|^2)`` for a batch of H.

    ``H`` may be (3, 3) or (I, 3, 3); returns (n,) or (I, n). Points mapped
    to infinity get an infinite error.
    """
    single = H.ndim == 2
    Hb = H[None] if single else H
    e = np.sqrt(_transfer_sq(Hb, _adjugate(Hb), np.asarray(src, float), np.asarray(dst, float)))
    e = np.where(np.isnan(e), np.inf, e)
    return e[0] if single else e


def _score(H, src, dst, thr):
    """Inlier mask and total squared inlier error; NaN errors never count as inliers."""
    single = H.ndim == 2
    Hb = H[None] if single else H
    e2 = _transfer_sq(Hb, _adjugate(Hb), src, dst)
    inl = e2 <= thr * thr
    err = np.where(inl, e2, 0.0).sum(axis=-1)
    return (inl[0], float(err[0])) if single else (inl, err)


@numba.njit(cache=True, nogil=True)
def _solve8(A, b):
    """Gaussian elimination with partial pivoting; returns (x, det)."""
    n = 8
    det = 1.0
    for c in range(n):
        p = c
        for r in range(c + 1, n):
            if abs(A[r, c]) > abs(A[p, c]):
                p = r
        if p != c:
            for k in range(n):
                A[c, k], A[p, k] = A[p, k], A[c, k]
            b[c], b[p] = b[p], b[c]
            det = -det
        piv = A[c, c]
        det *= piv
        if piv == 0.0:
            return b, 0.0
        for r in range(c + 1, n):
            m = A[r, c] / piv
            if m != 0.0:
                for k in range(c, n):
                    A[r, k] -= m * A[c, k]
                b[r] -= m * b[c]
    x = np.empty(n)
    for r in range(n - 1, -1, -1):
        acc = b[r]
        for k in range(r + 1, n):
            acc -= A[r, k] * x[k]
        x[r] = acc / A[r, r]
    return x, det


@numba.njit(cache=True, nogil=True)
def _hypotheses(S, Dd, Ts, Td_inv):
    """Pixel-space homographies from normalized 4-point samples.

    Mirrors :func:`_four_point_batch` followed by denormalization; ``good``
    is False where the 8x8 system is singular (|det| <= 1e-12).
    """
    I = S.shape[0]
    H = np.zeros((I, 3, 3))
    good = np.zeros(I, np.bool_)
    A = np.empty((8, 8))
    b = np.empty(8)
    for k in range(I):
        A[:, :] = 0.0
        for q in range(4):
            x, y = S[k, q, 0], S[k, q, 1]
            u, v = Dd[k, q, 0], Dd[k, q, 1]
            r = 2 * q
            A[r, 0], A[r, 1], A[r, 2] = x, y, 1.0
            A[r, 6], A[r, 7] = -u * x, -u * y
            A[r + 1, 3], A[r + 1, 4], A[r + 1, 5] = x, y, 1.0
            A[r + 1, 6], A[r + 1, 7] = -v * x, -v * y
            b[r], b[r + 1] = u, v
        h, det = _solve8(A, b)
        if not abs(det) > 1e-12:
            continue
        Hn = np.empty((3, 3))
        for r in range(8):
            Hn[r // 3, r % 3] = h[r]
        Hn[2, 2] = 1.0
        H[k] = Td_inv @ Hn @ Ts
        good[k] = True
    return H, good


@numba.njit(cache=True, nogil=True)
def _count_batch(H, src, dst, thr2):
    """Inlier counts and squared-error sums per hypothesis.

    Same arithmetic as :func:`_score`, written as a loop so that a point can
    be rejected on its forward error alone without any division.
    """
    I = H.shape[0]
    n = src.shape[0]
    counts = np.zeros(I, np.int64)
    errs = np.zeros(I)
    g = np.empty((3, 3))
    for k in range(I):
        h = H[k]
        # adjugate: inverse up to scale
        g[0, 0] = h[1, 1] * h[2, 2] - h[1, 2] * h[2, 1]
        g[0, 1] = h[0, 2] * h[2, 1] - h[0, 1] * h[2, 2]
        g[0, 2] = h[0, 1] * h[1, 2] - h[0, 2] * h[1, 1]
        g[1, 0] = h[1, 2] * h[2, 0] - h[1, 0] * h[2, 2]
        g[1, 1] = h[0, 0] * h[2, 2] - h[0, 2] * h[2, 0]
        g[1, 2] = h[0, 2] * h[1, 0] - h[0, 0] * h[1, 2]
        g[2, 0] = h[1, 0] * h[2, 1] - h[1, 1] * h[2, 0]
        g[2, 1] = h[0, 1] * h[2, 0] - h[0, 0] * h[2, 1]
        g[2, 2] = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
        c = 0
        e = 0.0
        for i in range(n):
            x, y = src[i, 0], src[i, 1]
            u, v = dst[i, 0], dst[i, 1]
            w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
            a = h[0, 0] * x + h[0, 1] * y + h[0, 2] - u * w
            b = h[1, 0] * x + h[1, 1] * y + h[1, 2] - v * w
            # forward error alone already over threshold: reject cheaply
            if not (w != 0.0 and a * a + b * b <= thr2 * w * w):
                continue
            a /= w
            b /= w
            f = a * a + b * b
            w = g[2, 0] * u + g[2, 1] * v + g[2, 2]
            a = (g[0, 0] * u + g[0, 1] * v + g[0, 2]) / w - x
            b = (g[1, 0] * u + g[1, 1] * v + g[1, 2]) / w - y
            f += a * a + b * b
            if f <= thr2:
                c += 1
                e += f
        counts[k] = c
        errs[k] = e
    return counts, errs


def _better(count, err, best_count, best_err):
    return count > best_count or (count == best_count and err < best_err)


def estimate_homography_ransac(kp_cur, kp_ref, matches: MatchSet, params: RegistrationParams = RegistrationParams()):
    """Robust homography from current to reference pixels; see :class:`RegistrationResult`."""
    m = len(matches)
    if m < 4:
        raise InsufficientMatches(f"{m} matches, need 4")
    src = np.asarray(kp_cur, float)[matches.pairs[:, 0]]
    dst = np.asarray(kp_ref, float)[matches.pairs[:, 1]]
    thr = params.threshold
    Ts, Td = _normalizing(src), _normalizing(dst)
    sn = src @ Ts[:2, :2].T + Ts[:2, 2]
    dn = dst @ Td[:2, :2].T + Td[:2, 2]
    Td_inv = np.linalg.inv(Td)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(params.seed)))
    samples = _draw_samples(rng, m, params.iterations)

    best_count, best_err, best_H = -1, math.inf, None
    chunk = 250 if params.adaptive else params.iterations
    needed = params.iterations
    done = 0
    while done < min(params.iterations, needed):
        idx = samples[done : done + chunk]
        done += len(idx)
        S, Dd = sn[idx], dn[idx]
        ok = _no_three_collinear(S) & _no_three_collinear(Dd)
        if not ok.any():
            continue
        Hp, good = _hypotheses(S[ok], Dd[ok], Ts, Td_inv)
        Hp = Hp[good]
        if not len(Hp):
            continue
        counts, err = _count_batch(Hp, src, dst, thr * thr)
        # lexicographic: max count, then min error, then earliest hypothesis
        k = np.lexsort((err, -counts))[0]
        if _better(int(counts[k]), float(err[k]), best_count, best_err):
            best_count, best_err, best_H = int(counts[k]), float(err[k]), Hp[k]
        if params.adaptive and best_count > 0:
            w = best_count / m
            if w >= 1.0:
                needed = 0
            else:
                needed = math.ceil(math.log(1 - params.adaptive_confidence) / math.log(1 - w**4 + 1e-300))

    if best_H is None or best_count < 4:
        raise DegenerateConsensus(f"best consensus {max(best_count, 0)} < 4")

    # least-squares refit on the consensus set, keeping it only while it helps
    H = normalize_homography(best_H)
    inl, err = _score(H, src, dst, thr)
    count, total = int(inl.sum()), float(err)
    for _ in range(3):
        if inl.sum() < 4:
            break
        Hr, _ = dlt_homography(src[inl], dst[inl])
        Hr = normalize_homography(Hr)
        inl_r, err_r = _score(Hr, src, dst, thr)
        c_r, e_r = int(inl_r.sum()), float(err_r)
        if c_r < count or (c_r == count and e_r > total):
            break
        same = np.array_equal(inl_r, inl)
        H, inl, count, total = Hr, inl_r, c_r, e_r
        if same:
            break
    if count < 4:
        raise DegenerateConsensus(f"consensus {count} < 4 after refit")
    return RegistrationResult(H, inl, count / m, params.seed, count, m, matches)


def register_view(capture_cur, capture_ref, params: RegistrationParams = RegistrationParams()):
    """Match descriptors and fit the current-to-reference pixel homography."""
    if capture_cur.drone != capture_ref.drone:
        raise ValueError("registration pairs must come from the same drone")
    ms = match_descriptors(capture_cur.descriptors, capture_ref.descriptors, params.ratio)
    return estimate_homography_ransac(capture_cur.keypoints, capture_ref.keypoints, ms, params)
