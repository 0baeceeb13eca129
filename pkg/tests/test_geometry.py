import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dronebev.errors import AtInfinity, BehindCamera, DegenerateView, OutOfBounds
from dronebev.geometry import (
    CameraIntrinsics,
    CameraPose,
    WorldGrid,
    apply_homography,
    ground_homography,
    image_to_ground,
    look_rotation,
    normalize_homography,
    project_point,
    project_points,
    projection_matrix,
    rotation_geodesic,
)
from helpers import aerial_pose, random_rotation

K_DEFAULT = CameraIntrinsics.from_fov()
P_CANON = np.hstack([np.eye(3), np.zeros((3, 1))])
# world-to-camera rotation of a camera looking straight down, image x along +x
R_NADIR = np.diag([1.0, -1.0, -1.0])


def oracle_project(K, R, t, X):
    """K (R X + t), dehomogenized; written independently of the package."""
    c = R @ np.asarray(X, float) + t
    h = K @ c
    return h[:2] / h[2]


def random_camera(rng):
    R, t = aerial_pose(rng)
    return R, t, projection_matrix(K_DEFAULT, CameraPose(R, t))


class TestIntrinsics:
    def test_focal_from_fov(self):
        assert K_DEFAULT.focal_x == pytest.approx(960.0 / math.tan(math.radians(35.0)), abs=1e-12)
        assert K_DEFAULT.focal_y == K_DEFAULT.focal_x
        assert (K_DEFAULT.principal_x, K_DEFAULT.principal_y) == (960.0, 540.0)

    @pytest.mark.parametrize(
        "args",
        [(0.0, 1.0, 5.0, 5.0, 10, 10), (1.0, 1.0, 0.0, 5.0, 10, 10), (1.0, 1.0, 5.0, 10.0, 10, 10)],
    )
    def test_invalid_rejected(self, args):
        with pytest.raises(ValueError):
            CameraIntrinsics(*args)


class TestPose:
    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError):
            CameraPose(np.diag([1.0, 1.0, 1.1]), np.zeros(3))

    def test_reflection_rejected(self):
        with pytest.raises(ValueError):
            CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_center_roundtrip(self):
        rng = np.random.default_rng(0)
        R = random_rotation(rng)
        C = rng.normal(size=3)
        assert np.allclose(CameraPose.from_center(R, C).center, C, atol=1e-12)

    def test_look_rotation_boresight(self):
        R = look_rotation(0.3, 0.6)
        fwd = R[2]
        assert np.allclose(fwd, [math.cos(0.6) * math.cos(0.3), math.cos(0.6) * math.sin(0.3), -math.sin(0.6)])
        assert abs(np.linalg.det(R) - 1) < 1e-12

    def test_geodesic_small_angle(self):
        a = 1e-8
        Rz = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
        assert rotation_geodesic(np.eye(3), Rz) == pytest.approx(a, rel=1e-6)


class TestProjectPoint:
    def test_optical_axis(self):
        assert np.allclose(project_point(P_CANON, [0, 0, 1]), [0, 0])

    def test_division_by_depth(self):
        assert np.allclose(project_point(P_CANON, [2, 3, 2]), [1, 1.5])

    @pytest.mark.parametrize("z", [0.0, -1.0])
    def test_behind_camera(self, z):
        with pytest.raises(BehindCamera):
            project_point(P_CANON, [0.1, 0.2, z])

    def test_matches_matrix_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            R, t, P = random_camera(rng)
            X = np.array([rng.uniform(-7.5, 7.5), rng.uniform(-7.5, 7.5), rng.uniform(0, 2)])
            want = oracle_project(K_DEFAULT.matrix, R, t, X)
            got = project_point(P, X)
            assert np.all(np.abs(got - want) <= 1e-12 * np.maximum(1.0, np.abs(want)))

    def test_vectorized_flags_behind(self):
        uv, front = project_points(P_CANON, [[0, 0, 1], [0, 0, -1]])
        assert front.tolist() == [True, False]
        assert np.isnan(uv[1]).all()

    @given(st.floats(1e-3, 50), st.integers(0, 10_000))
    def test_scale_invariance(self, lam, seed):
        rng = np.random.default_rng(seed)
        _, _, P = random_camera(rng)
        X = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0])
        uv = project_point(P, X)
        # homogeneous division cancels the scale up to rounding
        assert np.all(np.abs(project_point(lam * P, X) - uv) <= 1e-12 * np.maximum(1.0, np.abs(uv)))


class TestGroundHomography:
    def test_column_drop_canonical(self):
        P = np.array([[1.0, 0.0, 0.3, 2.0], [0.0, 1.0, 0.1, -1.0], [0.0, 0.0, 1.0, 4.0]])
        H = ground_homography(P)
        assert np.allclose(H, P[:, [0, 1, 3]] / 4.0)
        for xy in [(0, 0), (1, 2), (-3, 0.5)]:
            assert np.allclose(apply_homography(H, xy)[0], project_point(P, [*xy, 0.0]), atol=1e-12)

    def test_nadir_maps_origin_to_principal_point(self):
        t = -R_NADIR @ np.array([0.0, 0.0, 8.0])
        P_unit = np.hstack([R_NADIR, t[:, None]])  # K = I
        assert np.allclose(apply_homography(ground_homography(P_unit), [0, 0])[0], [0.0, 0.0])
        P = projection_matrix(K_DEFAULT, CameraPose(R_NADIR, t))
        assert np.allclose(apply_homography(ground_homography(P), [0, 0])[0], [960.0, 540.0], atol=1e-12)

    def test_normalized_h33(self):
        rng = np.random.default_rng(2)
        _, _, P = random_camera(rng)
        assert ground_homography(3.7 * P)[2, 2] == 1.0
        assert np.allclose(ground_homography(3.7 * P), ground_homography(P), atol=1e-12)

    def test_frobenius_fallback(self):
        H = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        H[2, 0] = 1.0
        assert np.linalg.norm(normalize_homography(H)) == pytest.approx(1.0)

    def test_degenerate_view(self):
        # camera on the ground looking horizontally: the ground is edge-on
        P = projection_matrix(K_DEFAULT, CameraPose.from_center(look_rotation(0.0, 0.0), [0, 0, 0]))
        with pytest.raises(DegenerateView):
            ground_homography(P)

    def test_consistency_with_full_projection(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            _, _, P = random_camera(rng)
            H = ground_homography(P)
            g = rng.uniform(-7.5, 7.5, size=(100, 2))
            full, front = project_points(P, np.column_stack([g, np.zeros(100)]))
            front[front] = K_DEFAULT.contains(full[front])  # in-image pixels only
            err = np.abs(apply_homography(H, g)[front] - full[front]).max()
            assert err < 1e-9


class TestImageToGround:
    def test_identity(self):
        assert np.allclose(image_to_ground(np.eye(3), (5, 7)), (5, 7))

    def test_nadir_closed_form(self):
        t = -R_NADIR @ np.array([0.0, 0.0, 8.0])
        H = ground_homography(projection_matrix(K_DEFAULT, CameraPose(R_NADIR, t)))
        f = K_DEFAULT.focal_x
        assert np.allclose(image_to_ground(H, (960.0, 540.0)), (0.0, 0.0), atol=1e-12)
        u, v = 1200.0, 300.0
        want = ((u - 960.0) * 8.0 / f, -(v - 540.0) * 8.0 / f)
        assert np.allclose(image_to_ground(H, (u, v)), want, atol=1e-12)

    def test_at_infinity(self):
        # a pixel on the horizon line of a tilted camera has zero weight
        P = projection_matrix(K_DEFAULT, CameraPose.from_center(look_rotation(0.0, 0.0), [0, 0, 5.0]))
        H = ground_homography(P)
        with pytest.raises(AtInfinity):
            image_to_ground(H, (960.0, 540.0))

    @given(st.integers(0, 10_000))
    def test_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        _, _, P = random_camera(rng)
        H = ground_homography(P)
        g = rng.uniform(-7.5, 7.5, size=2)
        p = apply_homography(H, g)[0]
        assert np.allclose(image_to_ground(H, p), g, atol=1e-9)


class TestWorldGrid:
    GRID = WorldGrid(0.0, 0.0, 0.5, 20, 20)

    def test_origin_cell(self):
        assert self.GRID.world_to_cell(0.0, 0.0) == (0, 0)

    def test_floor_binning(self):
        assert self.GRID.world_to_cell(7.49, 7.51) == (14, 15)

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            self.GRID.world_to_cell(-0.01, 0.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            WorldGrid(0, 0, 0.0, 1, 1)
        with pytest.raises(ValueError):
            WorldGrid(0, 0, 1.0, 0, 1)

    def test_covering(self):
        g = WorldGrid.covering(7.5, 0.5)
        assert g.shape == (30, 30)
        assert (g.origin_x, g.origin_y) == (-7.5, -7.5)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-1, 11, size=(500, 2))
        ij, inside = self.GRID.world_to_cells(pts)
        for (x, y), cell, ok in zip(pts, ij, inside):
            if ok:
                assert tuple(cell) == self.GRID.world_to_cell(x, y)
            else:
                with pytest.raises(OutOfBounds):
                    self.GRID.world_to_cell(x, y)

    @given(st.floats(-7.5, 7.4999), st.floats(-7.5, 7.4999), st.sampled_from([0.25, 0.5, 1.0]))
    def test_roundtrip_within_half_cell(self, x, y, cs):
        g = WorldGrid.covering(7.5, cs)
        i, j = g.world_to_cell(x, y)
        c = g.cell_center(i, j)
        assert abs(c[0] - x) <= cs / 2 + 1e-12 and abs(c[1] - y) <= cs / 2 + 1e-12
