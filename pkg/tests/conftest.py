import contextlib
import math

import numpy as np
import pytest

from robustpg.geometry import Pose2, Pose3


def random_rotvec(rng, max_angle=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0.0, max_angle)


def random_pose3(rng, max_angle=3.0, scale=2.0):
    return Pose3.exp(np.concatenate([random_rotvec(rng, max_angle), rng.normal(scale=scale, size=3)]))


def random_pose2(rng, scale=2.0):
    return Pose2(*rng.normal(scale=scale, size=2), rng.uniform(-math.pi, math.pi))


def random_pose(rng, dim, **kw):
    return random_pose3(rng, **kw) if dim == 6 else random_pose2(rng, **{k: v for k, v in kw.items() if k == "scale"})


def pose_matrix(p):
    return p.matrix()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(capsys):
    """Context manager printing one PASS/FAIL line for an acceptance criterion.

    It yields a function that prints detail lines past pytest's capture.
    """

    @contextlib.contextmanager
    def _run(number, title):
        started = []

        def say(msg):
            with capsys.disabled():
                # the first line must not share a line with pytest's progress marker
                print(("" if started else "\n") + msg)
            started.append(True)

        try:
            yield say
        except BaseException as exc:
            with capsys.disabled():
                print(f"\nCRITERION {number:>2} FAIL  {title} :: {type(exc).__name__}: {exc}")
            raise
        with capsys.disabled():
            print(f"\nCRITERION {number:>2} PASS  {title}")

    return _run
