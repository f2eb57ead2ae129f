import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation, Slerp

from conftest import random_pose3
from robustpg.errors import InvalidArgumentError, InvalidStreamError, OutOfRangeError
from robustpg.factorgraph import FactorKind
from robustpg.geometry import Pose2, Pose3, Rot3
from robustpg.odometry_fusion import (ExternalOdomConfig, OdometrySample, make_between_factors,
                                      sample_at)


def _stream(poses, dt=0.1):
    return [OdometrySample(k * dt, p) for k, p in enumerate(poses)]


def test_exact_timestamp_returns_the_sample(rng):
    poses = [random_pose3(rng) for _ in range(5)]
    s = _stream(poses)
    assert sample_at(s, 0.2) is poses[2]


def test_translation_midpoint():
    s = [OdometrySample(0.0, Pose3.identity()), OdometrySample(1.0, Pose3(Rot3.identity(), [1.0, 0.0, 0.0]))]
    np.testing.assert_allclose(sample_at(s, 0.5).translation, [0.5, 0.0, 0.0], atol=1e-15)


def test_yaw_interpolation_matches_slerp():
    a = Pose3.identity()
    b = Pose3(Rot3.from_yaw(math.pi / 2), [0.0, 0.0, 0.0])
    p = sample_at([OdometrySample(0.0, a), OdometrySample(2.0, b)], 0.5)
    oracle = Slerp([0.0, 1.0], Rotation.from_matrix([np.eye(3), b.rotation.matrix()]))([0.25])
    np.testing.assert_allclose(p.rotation.matrix(), oracle.as_matrix()[0], atol=1e-12)
    assert Rotation.from_matrix(p.rotation.matrix()).magnitude() == pytest.approx(math.radians(22.5))


def test_range_and_extrapolation():
    poses = [Pose3.identity(), Pose3(Rot3.identity(), [1.0, 0.0, 0.0])]
    s = _stream(poses, 1.0)
    cfg = ExternalOdomConfig(max_extrapolation=0.05)
    assert sample_at(s, -0.05, cfg) is poses[0]
    assert sample_at(s, 1.04, cfg) is poses[1]
    with pytest.raises(OutOfRangeError):
        sample_at(s, -0.06, cfg)
    with pytest.raises(OutOfRangeError):
        sample_at(s, 1.2, cfg)


def test_stream_validation():
    with pytest.raises(InvalidArgumentError):
        sample_at([], 0.0)
    with pytest.raises(InvalidStreamError):
        sample_at([OdometrySample(0.0, Pose3.identity()), OdometrySample(0.0, Pose3.identity())], 0.0)
    with pytest.raises(InvalidArgumentError):
        ExternalOdomConfig(max_extrapolation=-1.0)


def test_fewer_than_two_keyframes_give_no_factors(rng):
    s = _stream([random_pose3(rng) for _ in range(3)])
    assert make_between_factors(s, []) == []
    assert make_between_factors(s, [0.1]) == []


def test_ground_truth_stream_gives_zero_residual(rng):
    poses = [random_pose3(rng) for _ in range(10)]
    s = _stream(poses)
    stamps = [0.0, 0.3, 0.5, 0.9]
    factors = make_between_factors(s, stamps)
    values = {k: poses[round(t / 0.1)] for k, t in enumerate(stamps)}
    for f in factors:
        assert f.kind is FactorKind.EXTERNAL_ODOMETRY
        np.testing.assert_allclose(f.residual(values), 0.0, atol=1e-10)


def test_measurement_matches_matrix_oracle(rng):
    poses = [random_pose3(rng) for _ in range(6)]
    s = _stream(poses)
    f, = make_between_factors(s, [0.1, 0.4], keys=["a", "b"])
    assert f.keys == ("a", "b")
    oracle = np.linalg.inv(poses[1].matrix()) @ poses[4].matrix()
    np.testing.assert_allclose(f.measurement.matrix(), oracle, atol=1e-12)


def test_invariant_to_a_rigid_change_of_odometry_frame(rng):
    poses = [random_pose3(rng) for _ in range(8)]
    W = random_pose3(rng)
    stamps = [0.0, 0.25, 0.4, 0.65]
    a = make_between_factors(_stream(poses), stamps)
    b = make_between_factors(_stream([W.compose(p) for p in poses]), stamps)
    for fa, fb in zip(a, b):
        np.testing.assert_allclose(fb.measurement.matrix(), fa.measurement.matrix(), atol=1e-12)


def test_chained_factors_reproduce_the_end_to_end_motion(rng):
    poses = [random_pose3(rng, max_angle=0.3) for _ in range(20)]
    s = _stream(poses)
    stamps = list(np.linspace(0.0, 1.9, 13))
    z = Pose3.identity()
    for f in make_between_factors(s, stamps):
        z = z.compose(f.measurement)
    np.testing.assert_allclose(z.matrix(), poses[0].between(poses[-1]).matrix(), atol=1e-10)


def test_frame_alignment_conjugates_the_measurement(rng):
    poses = [random_pose3(rng) for _ in range(4)]
    X = random_pose3(rng)
    f, = make_between_factors(_stream(poses), [0.0, 0.3], ExternalOdomConfig(frame_alignment=X))
    oracle = X.matrix() @ np.linalg.inv(poses[0].matrix()) @ poses[3].matrix() @ np.linalg.inv(X.matrix())
    np.testing.assert_allclose(f.measurement.matrix(), oracle, atol=1e-11)


def test_information_defaults_and_overrides():
    s = _stream([Pose2(), Pose2(1.0, 0.0, 0.1)])
    f, = make_between_factors(s, [0.0, 0.1])
    np.testing.assert_array_equal(f.noise.information, 100.0 * np.eye(3))
    info = np.diag([400.0, 25.0, 25.0])
    f, = make_between_factors(s, [0.0, 0.1], ExternalOdomConfig(information=info))
    np.testing.assert_array_equal(f.noise.information, info)
    with pytest.raises(InvalidArgumentError):
        make_between_factors(s, [0.0, 0.1], keys=[0])
