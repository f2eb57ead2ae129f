"""Pose-graph container, factor residuals and Jacobians."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError, KeyNotFoundError
from .geometry import Pose2, Pose3


class FactorKind(enum.Enum):
    PRIOR = "prior"
    ODOMETRY = "odometry"
    LOOP_CLOSURE = "loop_closure"
    EXTERNAL_ODOMETRY = "external_odometry"


class NoiseModel:
    """Gaussian noise given by its information matrix.

    ``whiten(r)`` returns ``L.T @ r`` where ``information = L @ L.T``, so that
    ``|whiten(r)|^2 = r.T @ information @ r``.
    """

    __slots__ = ("information", "sqrt_information")

    def __init__(self, information):
        info = np.array(information, dtype=float)
        if info.ndim != 2 or info.shape[0] != info.shape[1]:
            raise InvalidArgumentError(f"information matrix must be square, got {info.shape}")
        if not np.all(np.isfinite(info)):
            raise InvalidArgumentError("non-finite information matrix")
        if np.abs(info - info.T).max() > 1e-12 * max(1.0, np.abs(info).max()):
            raise InvalidArgumentError("information matrix is not symmetric")
        try:
            L = np.linalg.cholesky(info)
        except np.linalg.LinAlgError as exc:
            raise InvalidArgumentError("information matrix is not positive definite") from exc
        info.flags.writeable = False
        sqrt_info = L.T.copy()
        sqrt_info.flags.writeable = False
        self.information = info
        self.sqrt_information = sqrt_info

    @classmethod
    def from_sigmas(cls, sigmas) -> NoiseModel:
        sigmas = np.asarray(sigmas, dtype=float)
        return cls(np.diag(1.0 / sigmas ** 2))

    @classmethod
    def isotropic(cls, dim: int, information: float) -> NoiseModel:
        return cls(information * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.information.shape[0]

    def whiten(self, r) -> np.ndarray:
        return self.sqrt_information @ r

    def __repr__(self):
        return f"NoiseModel(information=diag{np.diag(self.information).tolist()})"


@dataclass(frozen=True)
class Factor:
    kind: FactorKind
    keys: tuple
    measurement: Pose2 | Pose3
    noise: NoiseModel

    def __post_init__(self):
        n = 1 if self.kind is FactorKind.PRIOR else 2
        if len(self.keys) != n:
            raise InvalidArgumentError(f"{self.kind.value} factor needs {n} keys, got {self.keys}")
        if self.noise.dim != self.measurement.dim:
            raise InvalidArgumentError("noise dimension does not match the measurement")

    @property
    def dim(self) -> int:
        return self.measurement.dim

    def error_pose(self, values: Mapping):
        """Pose whose Log is the unwhitened residual."""
        x = [_lookup(values, k) for k in self.keys]
        if self.kind is FactorKind.PRIOR:
            return self.measurement.between(x[0])
        return self.measurement.between(x[0].between(x[1]))

    def residual(self, values: Mapping) -> np.ndarray:
        """Unwhitened residual ``Log(z^-1 * h(x))``."""
        return self.error_pose(values).log()

    def whitened_residual(self, values: Mapping) -> np.ndarray:
        return self.noise.whiten(self.residual(values))

    def chi2(self, values: Mapping) -> float:
        r = self.whitened_residual(values)
        return float(r @ r)

    def jacobians(self, values: Mapping) -> tuple[list[np.ndarray], np.ndarray]:
        """Unwhitened Jacobians w.r.t. right perturbations, plus the residual."""
        x = [_lookup(values, k) for k in self.keys]
        pose_type = type(self.measurement)
        if self.kind is FactorKind.PRIOR:
            r = self.measurement.between(x[0]).log()
            return [pose_type.right_jacobian_inverse(r)], r
        rel = x[0].between(x[1])
        r = self.measurement.between(rel).log()
        Jj = pose_type.right_jacobian_inverse(r)
        Ji = -Jj @ rel.inverse().adjoint()
        return [Ji, Jj], r

    def linearize(self, values: Mapping) -> tuple[list[np.ndarray], np.ndarray]:
        """Whitened Jacobian blocks (one per key) and whitened residual."""
        Js, r = self.jacobians(values)
        S = self.noise.sqrt_information
        return [S @ J for J in Js], S @ r


def _lookup(values: Mapping, key):
    try:
        return values[key]
    except KeyError:
        raise KeyNotFoundError(f"key {key!r} has no value") from None


def prior_factor(key, pose, noise: NoiseModel) -> Factor:
    return Factor(FactorKind.PRIOR, (key,), pose, noise)


def between_factor(key_i, key_j, measurement, noise: NoiseModel,
                   kind: FactorKind = FactorKind.ODOMETRY) -> Factor:
    return Factor(kind, (key_i, key_j), measurement, noise)


@dataclass
class PoseGraph:
    """Initial values plus factors.  Insertion order of ``values`` is the variable order."""

    dimension: str = "SE3"
    values: dict = field(default_factory=dict)
    factors: list = field(default_factory=list)

    def __post_init__(self):
        if self.dimension not in ("SE2", "SE3"):
            raise InvalidArgumentError(f"dimension must be SE2 or SE3, got {self.dimension!r}")

    @property
    def pose_type(self):
        return Pose2 if self.dimension == "SE2" else Pose3

    @property
    def dof(self) -> int:
        return 3 if self.dimension == "SE2" else 6

    def add_value(self, key, pose) -> None:
        if not isinstance(pose, self.pose_type):
            raise InvalidArgumentError(f"expected {self.pose_type.__name__}, got {type(pose).__name__}")
        self.values[key] = pose

    def add_factor(self, factor: Factor) -> int:
        if not isinstance(factor.measurement, self.pose_type):
            raise InvalidArgumentError("factor measurement type does not match graph dimension")
        self.factors.append(factor)
        return len(self.factors) - 1

    def add_prior(self, key, pose, noise: NoiseModel) -> int:
        return self.add_factor(prior_factor(key, pose, noise))

    def add_between(self, key_i, key_j, measurement, noise: NoiseModel,
                    kind: FactorKind = FactorKind.ODOMETRY) -> int:
        return self.add_factor(between_factor(key_i, key_j, measurement, noise, kind))

    def indices(self, *kinds: FactorKind) -> list[int]:
        return [i for i, f in enumerate(self.factors) if f.kind in kinds]

    def has_prior(self) -> bool:
        return any(f.kind is FactorKind.PRIOR for f in self.factors)

    def copy(self) -> PoseGraph:
        return PoseGraph(self.dimension, dict(self.values), list(self.factors))

    def subgraph(self, keep: Sequence[int]) -> PoseGraph:
        """Same values, only the factors at the given indices (kept in order)."""
        keep = set(keep)
        return PoseGraph(self.dimension, dict(self.values),
                         [f for i, f in enumerate(self.factors) if i in keep])

    def validate(self) -> None:
        if not self.has_prior():
            raise ConfigurationError("pose graph has no prior factor to fix the gauge")
        for f in self.factors:
            for k in f.keys:
                if k not in self.values:
                    raise KeyNotFoundError(f"factor references unknown key {k!r}")


def graph_error(graph: PoseGraph, values: Mapping | None = None, weights=None) -> float:
    """Total (optionally weighted) chi-squared: ``sum_f w_f |whitened residual_f|^2``."""
    if values is None:
        values = graph.values
    total = 0.0
    for i, f in enumerate(graph.factors):
        w = 1.0 if weights is None else float(weights[i])
        if w == 0.0:
            continue
        total += w * f.chi2(values)
    return total


def per_factor_chi2(graph: PoseGraph, values: Mapping | None = None) -> np.ndarray:
    if values is None:
        values = graph.values
    return np.array([f.chi2(values) for f in graph.factors])


@dataclass(frozen=True)
class LoopCandidate:
    """Relative-pose loop-closure measurement ``key_from -> key_to``.

    ``inlier`` carries the ground-truth label for synthetic data and is None otherwise.
    """

    key_from: int
    key_to: int
    measurement: Pose2 | Pose3
    noise: NoiseModel
    inlier: bool | None = None

    def to_factor(self) -> Factor:
        return Factor(FactorKind.LOOP_CLOSURE, (self.key_from, self.key_to), self.measurement, self.noise)

    def sort_key(self) -> tuple:
        """Total order on candidates that does not depend on list position."""
        return (self.key_from, self.key_to) + self.measurement.params() + tuple(self.noise.information.ravel())
