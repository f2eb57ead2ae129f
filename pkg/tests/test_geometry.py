import math

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.spatial.transform import Rotation, Slerp

from conftest import random_pose2, random_pose3, random_rotvec
from robustpg.errors import BranchAmbiguityError, InvalidArgumentError
from robustpg.geometry import (Pose2, Pose3, Rot3, between, interpolate, se3_right_jacobian,
                               se3_right_jacobian_inverse, skew, so3_left_jacobian,
                               so3_left_jacobian_inverse, so3_right_jacobian, wrap_angle)


def _se3_hat(xi):
    X = np.zeros((4, 4))
    X[:3, :3] = skew(xi[:3])
    X[:3, 3] = xi[3:]
    return X


def _se2_hat(xi):
    th, vx, vy = xi
    return np.array([[0.0, -th, vx], [th, 0.0, vy], [0.0, 0.0, 0.0]])


def test_rot3_exp_matches_scipy(rng):
    for _ in range(200):
        w = random_rotvec(rng, 3.1)
        R = Rot3.exp(w).matrix()
        np.testing.assert_allclose(R, Rotation.from_rotvec(w).as_matrix(), atol=1e-14)


def test_rodrigues_quarter_turn_about_z():
    R = Rot3.exp([0.0, 0.0, math.pi / 2]).matrix()
    np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_allclose(Rot3.exp([0.0, 0.0, math.pi / 2]).rotate([1.0, 0.0, 0.0]), [0, 1, 0], atol=1e-15)


def test_quaternion_is_canonical(rng):
    for _ in range(100):
        q = Rot3.exp(random_rotvec(rng, 3.1)).quaternion
        assert q[0] >= 0.0
        assert abs(np.linalg.norm(q) - 1.0) < 1e-15
    assert Rot3((-1.0, 0.0, 0.0, 0.0)).quaternion.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_pose3_exp_matches_matrix_exponential(rng):
    for _ in range(100):
        xi = np.concatenate([random_rotvec(rng, 3.0), rng.normal(size=3)])
        np.testing.assert_allclose(Pose3.exp(xi).matrix(), expm(_se3_hat(xi)), atol=1e-12)


def test_pose2_exp_matches_matrix_exponential(rng):
    for _ in range(100):
        xi = np.array([rng.uniform(-3, 3), *rng.normal(size=2)])
        np.testing.assert_allclose(Pose2.exp(xi).matrix(), expm(_se2_hat(xi)), atol=1e-12)


@pytest.mark.parametrize("angle", [0.0, 1e-12, 1e-8, 5e-5, 1e-4, 2e-4, 1e-2, 0.5])
def test_small_angle_round_trip(angle):
    axis = np.array([0.3, -0.4, 0.866])
    axis /= np.linalg.norm(axis)
    xi = np.concatenate([angle * axis, [0.7, -1.2, 0.4]])
    np.testing.assert_allclose(Pose3.exp(xi).log(), xi, atol=1e-15, rtol=1e-12)
    xi2 = np.array([angle, 0.7, -1.2])
    np.testing.assert_allclose(Pose2.exp(xi2).log(), xi2, atol=1e-15, rtol=1e-12)


def test_matrix_oracle_for_compose_inverse_between(rng):
    for make in (random_pose3, random_pose2):
        for _ in range(50):
            a, b = make(rng), make(rng)
            A, B = a.matrix(), b.matrix()
            np.testing.assert_allclose(a.compose(b).matrix(), A @ B, atol=1e-12)
            np.testing.assert_allclose(a.inverse().matrix(), np.linalg.inv(A), atol=1e-12)
            np.testing.assert_allclose(between(a, b).matrix(), np.linalg.inv(A) @ B, atol=1e-12)
            p = rng.normal(size=A.shape[0] - 1)
            np.testing.assert_allclose(a.transform_point(p), (A @ np.append(p, 1.0))[:-1], atol=1e-12)


def test_adjoint_moves_tangent_across(rng):
    # T Exp(xi) T^-1 = Exp(Ad(T) xi)
    for make in (random_pose3, random_pose2):
        for _ in range(50):
            T = make(rng)
            xi = rng.normal(scale=0.3, size=T.dim)
            lhs = T.compose(type(T).exp(xi)).compose(T.inverse())
            rhs = type(T).exp(T.adjoint() @ xi)
            np.testing.assert_allclose(lhs.matrix(), rhs.matrix(), atol=1e-12)


def _num_right_jacobian(pose_type, xi, h=1e-6):
    # Exp(xi + d) ~ Exp(xi) Exp(Jr d)
    n = len(xi)
    J = np.zeros((n, n))
    base_inv = pose_type.exp(xi).inverse()
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        J[:, k] = (base_inv.compose(pose_type.exp(xi + e)).log()
                   - base_inv.compose(pose_type.exp(xi - e)).log()) / (2 * h)
    return J


@pytest.mark.parametrize("scale", [1e-7, 5e-5, 2e-4, 3e-3, 0.3, 2.5])
def test_right_jacobians_against_numerical(rng, scale):
    for _ in range(10):
        xi = np.concatenate([random_rotvec(rng, 1.0) * scale, rng.normal(size=3)])
        np.testing.assert_allclose(se3_right_jacobian(xi), _num_right_jacobian(Pose3, xi), atol=1e-8)
        np.testing.assert_allclose(se3_right_jacobian(xi) @ se3_right_jacobian_inverse(xi), np.eye(6), atol=1e-12)
        xi2 = np.array([rng.choice([-1, 1]) * scale, *rng.normal(size=2)])
        np.testing.assert_allclose(Pose2.right_jacobian(xi2), _num_right_jacobian(Pose2, xi2), atol=1e-8)
        np.testing.assert_allclose(Pose2.right_jacobian(xi2) @ Pose2.right_jacobian_inverse(xi2), np.eye(3), atol=1e-12)


def test_so3_jacobian_identities(rng):
    for _ in range(50):
        w = random_rotvec(rng, 3.0)
        np.testing.assert_allclose(so3_left_jacobian(w) @ so3_left_jacobian_inverse(w), np.eye(3), atol=1e-12)
        np.testing.assert_allclose(so3_right_jacobian(w), so3_left_jacobian(w).T, atol=1e-14)


def test_log_refuses_the_pi_boundary():
    with pytest.raises(BranchAmbiguityError):
        Rot3.exp([math.pi, 0.0, 0.0]).log()
    with pytest.raises(BranchAmbiguityError):
        Pose3.exp([0.0, math.pi, 0.0, 1.0, 0.0, 0.0]).log()
    # just inside the branch is fine
    w = np.array([0.0, 0.0, math.pi - 1e-6])
    np.testing.assert_allclose(Rot3.exp(w).log(), w, atol=1e-9)


def test_slerp_example_yaw_90_to_half():
    a = Pose3.identity()
    b = Pose3(Rot3.from_yaw(math.pi / 2), [2.0, 0.0, 0.0])
    mid = interpolate(a, b, 0.5)
    oracle = Slerp([0, 1], Rotation.from_euler("z", [0.0, 90.0], degrees=True))([0.5])[0]
    np.testing.assert_allclose(mid.rotation.matrix(), oracle.as_matrix(), atol=1e-14)
    assert math.isclose(mid.rotation.angle(), math.pi / 4, abs_tol=1e-14)


def test_interpolation_symmetry(rng):
    for make in (random_pose3, random_pose2):
        for _ in range(100):
            a, b = make(rng), make(rng)
            t = rng.uniform()
            try:
                fwd = interpolate(a, b, t)
                bwd = interpolate(b, a, 1.0 - t)
            except BranchAmbiguityError:
                continue
            np.testing.assert_allclose(fwd.matrix(), bwd.matrix(), atol=1e-12)


def test_interpolate_rejects_fraction_outside_unit_interval():
    with pytest.raises(InvalidArgumentError):
        interpolate(Pose2(), Pose2(1, 0, 0), 1.5)


def test_long_composition_chain_stays_on_manifold(rng):
    step = Pose3.exp(np.concatenate([random_rotvec(rng, 0.3), rng.normal(size=3)]))
    p = Pose3.identity()
    for _ in range(100_000):
        p = p.compose(step)
    R = p.rotation.matrix()
    assert abs(np.linalg.norm(p.rotation.quaternion) - 1.0) < 1e-9
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert math.isclose(wrap_angle(3 * math.pi + 0.1), -math.pi + 0.1, abs_tol=1e-12)
    assert Pose2(0, 0, 7.0).theta == pytest.approx(7.0 - 2 * math.pi)


def test_rejects_non_finite_input():
    with pytest.raises(InvalidArgumentError):
        Pose2(float("nan"), 0, 0)
    with pytest.raises(InvalidArgumentError):
        Pose3.exp([0, 0, 0, float("inf"), 0, 0])
    with pytest.raises(InvalidArgumentError):
        Rot3((0.0, 0.0, 0.0, 0.0))


def test_poses_are_immutable():
    p = Pose3.exp([0.1, 0.2, 0.3, 1, 2, 3])
    with pytest.raises(ValueError):
        p.translation[0] = 5.0
    with pytest.raises(AttributeError):
        Pose2().x = 1.0


def test_from_matrix_round_trip(rng):
    for _ in range(50):
        p = random_pose3(rng)
        q = Pose3.from_matrix(p.matrix())
        np.testing.assert_allclose(q.matrix(), p.matrix(), atol=1e-14)
        p2 = random_pose2(rng)
        np.testing.assert_allclose(Pose2.from_matrix(p2.matrix()).matrix(), p2.matrix(), atol=1e-14)


def test_pose2_lift_to_pose3(rng):
    p = random_pose2(rng)
    M = p.to_pose3().matrix()
    np.testing.assert_allclose(M[:2, :2], p.matrix()[:2, :2], atol=1e-15)
    np.testing.assert_allclose(M[:2, 3], p.translation, atol=1e-15)
    assert M[2, 3] == 0.0
