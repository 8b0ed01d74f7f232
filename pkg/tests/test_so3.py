import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtnpose import so3
from rtnpose.so3 import EulerZYZ, euler_to_matrix, matrix_to_euler, rot_y, rot_z

TWO_PI = 2 * math.pi

alphas = st.floats(0.0, TWO_PI, exclude_max=True)
betas = st.floats(0.0, math.pi)


def assert_rotation(R, tol=1e-9):
    assert np.max(np.abs(R.T @ R - np.eye(3))) <= tol
    assert abs(np.linalg.det(R) - 1.0) <= tol


class TestEulerToMatrix:
    def test_identity(self):
        np.testing.assert_array_equal(euler_to_matrix(EulerZYZ(0, 0, 0)), np.eye(3))

    def test_pure_z(self):
        R = euler_to_matrix(EulerZYZ(math.pi / 2, 0, 0))
        np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)

    def test_z_then_y(self):
        R = euler_to_matrix(EulerZYZ(math.pi / 2, math.pi / 2, 0))
        # product oracle: Ry(pi/2) @ Rz(pi/2)
        np.testing.assert_allclose(R, rot_y(math.pi / 2) @ rot_z(math.pi / 2), atol=1e-15)
        np.testing.assert_allclose(R, [[0, 0, 1], [1, 0, 0], [0, 1, 0]], atol=1e-15)

    def test_composition_consistency(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a, g = rng.uniform(0, TWO_PI, 2)
            b = rng.uniform(0, math.pi)
            composed = (
                euler_to_matrix(EulerZYZ(0, 0, g))
                @ euler_to_matrix(EulerZYZ(0, b, 0))
                @ euler_to_matrix(EulerZYZ(a, 0, 0))
            )
            np.testing.assert_allclose(euler_to_matrix(EulerZYZ(a, b, g)), composed, rtol=0, atol=1e-12)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(1)
        a, g = rng.uniform(0, TWO_PI, (2, 50))
        b = rng.uniform(0, math.pi, 50)
        many = so3.euler_to_matrix_many(a, b, g)
        for i in range(50):
            np.testing.assert_array_equal(many[i], euler_to_matrix(EulerZYZ(a[i], b[i], g[i])))

    @pytest.mark.parametrize("bad", [(TWO_PI, 0, 0), (0, -0.1, 0), (0, 0, -1e-3), (0, math.pi + 1e-6, 0), (math.nan, 0, 0)])
    def test_invalid_euler_rejected(self, bad):
        with pytest.raises(ValueError):
            EulerZYZ(*bad)


class TestMatrixToEuler:
    def test_identity(self):
        assert matrix_to_euler(np.eye(3)).as_tuple() == (0.0, 0.0, 0.0)

    def test_pure_y(self):
        e = matrix_to_euler([[0, 0, 1], [0, 1, 0], [-1, 0, 0]])
        np.testing.assert_allclose(e.as_tuple(), (0, math.pi / 2, 0), atol=1e-15)

    def test_inverse_of_composite(self):
        e = matrix_to_euler([[0, 0, 1], [1, 0, 0], [0, 1, 0]])
        np.testing.assert_allclose(e.as_tuple(), (math.pi / 2, math.pi / 2, 0), atol=1e-15)

    def test_haar_round_trip(self):
        for R in so3.haar_rotations(2000, 3):
            np.testing.assert_allclose(euler_to_matrix(matrix_to_euler(R)), R, rtol=0, atol=1e-9)

    @pytest.mark.parametrize("beta", [0.0, 1e-10, 5e-10, math.pi, math.pi - 1e-10])
    def test_gimbal_sets_gamma_zero(self, beta):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, g = rng.uniform(0, TWO_PI, 2)
            R = euler_to_matrix(EulerZYZ(a, beta, g))
            e = matrix_to_euler(R)
            assert e.gamma == 0.0
            assert e.beta in (0.0, math.pi)
            np.testing.assert_allclose(euler_to_matrix(e), R, rtol=0, atol=1e-9)

    def test_rejects_non_rotation(self):
        with pytest.raises(so3.RotationError):
            matrix_to_euler(np.diag([1.0, 1.0, -1.0]))
        with pytest.raises(so3.RotationError):
            matrix_to_euler(2 * np.eye(3))

    def test_vectorized_matches_scalar(self):
        Rs = so3.haar_rotations(200, 4)
        Rs[0] = np.eye(3)
        Rs[1] = rot_y(math.pi) @ rot_z(0.3)
        many = so3.matrix_to_euler_many(Rs)
        for R, row in zip(Rs, many):
            np.testing.assert_allclose(row, matrix_to_euler(R).as_tuple(), rtol=0, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(alphas, betas, alphas)
    def test_round_trip_property(self, a, b, g):
        R = euler_to_matrix(EulerZYZ(a, b, g))
        e = matrix_to_euler(R)
        np.testing.assert_allclose(euler_to_matrix(e), R, rtol=0, atol=1e-9)


class TestInverseAndDistance:
    def test_inverse_identity(self):
        np.testing.assert_array_equal(so3.inverse(np.eye(3)), np.eye(3))

    def test_inverse_z(self):
        np.testing.assert_allclose(so3.inverse(rot_z(math.pi / 2)), [[0, 1, 0], [-1, 0, 0], [0, 0, 1]], atol=1e-15)

    def test_inverse_property(self):
        for R in so3.haar_rotations(1000, 5):
            assert np.max(np.abs(R @ so3.inverse(R) - np.eye(3))) < 1e-12

    def test_geodesic_examples(self):
        R = so3.haar_rotations(1, 6)[0]
        assert so3.geodesic_distance(R, R) < 1e-15
        assert so3.geodesic_distance(np.eye(3), rot_z(math.pi)) == pytest.approx(math.pi)
        assert so3.geodesic_distance(np.eye(3), rot_z(math.pi / 6)) == pytest.approx(math.pi / 6, abs=1e-12)

    def test_geodesic_symmetric_and_bounded(self):
        A = so3.haar_rotations(300, 7)
        B = so3.haar_rotations(300, 8)
        d = so3.geodesic_distance_many(A, B)
        np.testing.assert_allclose(d, so3.geodesic_distance_many(B, A), atol=1e-12)
        assert np.all((d >= 0) & (d <= math.pi))


class TestRandomRotation:
    def test_grid_single_class(self):
        class OneClass:
            n = 1

            def class_to_matrix(self, c):
                return np.eye(3)

        R, c = so3.random_rotation(0, "grid", OneClass())
        assert c == 0
        np.testing.assert_array_equal(R, np.eye(3))

    @pytest.mark.parametrize("mode", ["haar", "euler"])
    def test_valid_and_deterministic(self, mode):
        for s in range(50):
            R = so3.random_rotation(s, mode)
            assert_rotation(R)
            np.testing.assert_array_equal(R, so3.random_rotation(s, mode))

    def test_haar_mean_trace(self):
        tr = np.trace(so3.haar_rotations(100_000, 9), axis1=1, axis2=2)
        assert abs(tr.mean()) < 0.02

    def test_euler_uniform_matches_haar_moments(self):
        # Haar: E[tr] = 0, E[tr^2] = 1, and each entry has mean 0, variance 1/3
        Rs = so3.euler_uniform_rotations(100_000, 10)
        tr = np.trace(Rs, axis1=1, axis2=2)
        assert abs(tr.mean()) < 0.02
        assert abs((tr**2).mean() - 1.0) < 0.03
        assert np.max(np.abs((Rs**2).mean(axis=0) - 1 / 3)) < 0.01

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            so3.random_rotation(0, "fibonacci")


class TestRotatePoints:
    def test_identity(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        np.testing.assert_array_equal(so3.rotate_points(np.eye(3), pts), pts)

    def test_quarter_turn(self):
        np.testing.assert_allclose(so3.rotate_points(rot_z(math.pi / 2), [[1.0, 0, 0]]), [[0, 1, 0]], atol=1e-15)

    def test_isometry(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(100, 3))
        R = so3.haar_rotations(1, rng)[0]
        out = so3.rotate_points(R, pts)
        d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        d1 = np.linalg.norm(out[:, None] - out[None], axis=2)
        assert np.max(np.abs(d0 - d1)) < 1e-9
        assert abs(np.linalg.norm(out.mean(0)) - np.linalg.norm(pts.mean(0))) < 1e-9
