"""Turn an external odometry pose stream into relative-pose factors between keyframes."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidStreamError, OutOfRangeError
from .factorgraph import Factor, FactorKind, NoiseModel
from .geometry import interpolate

DEFAULT_INFORMATION = 100.0


@dataclass(frozen=True)
class OdometrySample:
    timestamp: float
    pose: object  # Pose3 (Pose2 streams are accepted as well)


@dataclass(frozen=True)
class ExternalOdomConfig:
    """Settings for external-odometry factors.

    ``information`` defaults to ``100 * I``.  ``frame_alignment`` is the pose of
    the external sensor expressed in the body frame (body_T_sensor); identity
    when None.
    """

    information: np.ndarray | float | None = None
    max_extrapolation: float = 0.05
    frame_alignment: object = None

    def __post_init__(self):
        if self.max_extrapolation < 0:
            raise InvalidArgumentError("max_extrapolation must be >= 0")

    def noise_model(self, dim: int) -> NoiseModel:
        info = self.information
        if info is None:
            info = DEFAULT_INFORMATION
        if np.isscalar(info):
            return NoiseModel.isotropic(dim, float(info))
        return NoiseModel(info)


def _stamps(stream: Sequence[OdometrySample]) -> list[float]:
    if not stream:
        raise InvalidArgumentError("empty odometry stream")
    t = [s.timestamp for s in stream]
    if any(b <= a for a, b in zip(t, t[1:])):
        raise InvalidStreamError("odometry timestamps must be strictly increasing")
    return t


def _sample(stream, stamps, t: float, cfg: ExternalOdomConfig):
    if t < stamps[0]:
        if stamps[0] - t <= cfg.max_extrapolation:
            return stream[0].pose
        raise OutOfRangeError(f"t={t} before stream start {stamps[0]}")
    if t > stamps[-1]:
        if t - stamps[-1] <= cfg.max_extrapolation:
            return stream[-1].pose
        raise OutOfRangeError(f"t={t} after stream end {stamps[-1]}")
    i = bisect.bisect_left(stamps, t)
    if stamps[i] == t:
        return stream[i].pose
    a, b = stream[i - 1], stream[i]
    frac = (t - a.timestamp) / (b.timestamp - a.timestamp)
    return interpolate(a.pose, b.pose, frac)


def sample_at(stream: Sequence[OdometrySample], t: float, cfg: ExternalOdomConfig | None = None):
    """Pose of the stream at time ``t`` by geodesic interpolation between the
    bracketing samples; held constant up to ``max_extrapolation`` past either end."""
    cfg = cfg or ExternalOdomConfig()
    return _sample(stream, _stamps(stream), t, cfg)


def make_between_factors(stream: Sequence[OdometrySample], keyframe_timestamps: Sequence[float],
                         cfg: ExternalOdomConfig | None = None, keys: Sequence | None = None
                         ) -> list[Factor]:
    """One EXTERNAL_ODOMETRY factor per consecutive keyframe pair.

    ``keys`` names the graph variables of the keyframes (default: their indices).
    """
    cfg = cfg or ExternalOdomConfig()
    if len(keyframe_timestamps) < 2:
        return []
    if keys is None:
        keys = list(range(len(keyframe_timestamps)))
    if len(keys) != len(keyframe_timestamps):
        raise InvalidArgumentError("keys and keyframe timestamps differ in length")
    stamps = _stamps(stream)
    poses = [_sample(stream, stamps, float(t), cfg) for t in keyframe_timestamps]
    noise = cfg.noise_model(poses[0].dim)
    align = cfg.frame_alignment
    align_inv = align.inverse() if align is not None else None
    out = []
    for k in range(len(poses) - 1):
        z = poses[k].between(poses[k + 1])
        if align is not None:
            z = align.compose(z).compose(align_inv)
        out.append(Factor(FactorKind.EXTERNAL_ODOMETRY, (keys[k], keys[k + 1]), z, noise))
    return out
