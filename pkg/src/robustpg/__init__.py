"""Robust pose-graph back end.

Lie groups, factor graphs and an on-manifold Levenberg-Marquardt solver, with
GNC and PCM loop-closure outlier rejection, external-odometry factors,
keyframe selection, feature binning and NMS, synthetic data, file formats and
ATE evaluation.
"""

from .errors import (
    BranchAmbiguityError,
    ConfigurationError,
    InvalidArgumentError,
    InvalidStreamError,
    KeyNotFoundError,
    NumericalFailureError,
    OutOfRangeError,
    ParseError,
    RobustPGError,
    TopologyError,
)
from .factorgraph import Factor, FactorKind, LoopCandidate, NoiseModel, PoseGraph, graph_error
from .geometry import Pose2, Pose3, Rot3, between, compose, exp_map, interpolate, inverse, log_map
from .optimizer import Method, OptimizeResult, OptimizerConfig, optimize

__version__ = "0.1.0"

__all__ = [
    "BranchAmbiguityError", "ConfigurationError", "InvalidArgumentError", "InvalidStreamError",
    "KeyNotFoundError", "NumericalFailureError", "OutOfRangeError", "ParseError", "RobustPGError",
    "TopologyError",
    "Factor", "FactorKind", "LoopCandidate", "NoiseModel", "PoseGraph", "graph_error",
    "Pose2", "Pose3", "Rot3", "between", "compose", "exp_map", "interpolate", "inverse", "log_map",
    "Method", "OptimizeResult", "OptimizerConfig", "optimize",
]
