"""Graduated non-convexity with a truncated least-squares cost.

Only loop closures are robustified by default; prior, odometry and
external-odometry factors keep weight 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from ..errors import ConfigurationError, InvalidArgumentError
from ..factorgraph import FactorKind, PoseGraph
from ..optimizer import OptimizeResult, OptimizerConfig, optimize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GncConfig:
    """``barc_sq`` is the TLS threshold on the whitened squared residual; when
    None it is the chi-squared quantile at ``confidence`` for the pose dof."""

    barc_sq: float | None = None
    confidence: float = 0.99
    mu_update_factor: float = 1.4
    max_outer_iterations: int = 100
    weight_convergence_eps: float = 1e-3
    fix_odometry_weights: bool = True
    inlier_weight_cutoff: float = 0.5

    def __post_init__(self):
        if self.barc_sq is not None and not self.barc_sq > 0:
            raise ConfigurationError("barc_sq must be > 0")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigurationError("confidence must lie in (0, 1)")
        if not self.mu_update_factor > 1:
            raise ConfigurationError("mu_update_factor must be > 1")
        if self.max_outer_iterations < 0 or not self.weight_convergence_eps > 0:
            raise ConfigurationError("invalid iteration limit or convergence eps")

    def threshold(self, dof: int) -> float:
        if self.barc_sq is not None:
            return float(self.barc_sq)
        return float(chi2.ppf(self.confidence, dof))


@dataclass
class GncState:
    mu: float
    weights: np.ndarray          # one per robust factor
    outer_iteration: int = 0


@dataclass
class GncResult:
    result: OptimizeResult
    weights: np.ndarray          # one per graph factor
    inliers: list                # loop-closure factor indices with weight > cutoff
    robust_indices: list         # factors whose weights were estimated
    outer_iterations: int = 0
    mu_trace: list = field(default_factory=list)
    converged: bool = True


def gnc_weight_update(r_sq, mu: float, barc_sq: float):
    """TLS weight for squared residual ``r_sq`` at control parameter ``mu``.

    Works on scalars and arrays.
    """
    if not (mu > 0 and barc_sq > 0):
        raise InvalidArgumentError("mu and barc_sq must be > 0")
    r_sq_arr = np.asarray(r_sq, dtype=float)
    if np.any(r_sq_arr < 0):
        raise InvalidArgumentError("squared residual must be >= 0")
    upper = (mu + 1.0) / mu * barc_sq
    lower = mu / (mu + 1.0) * barc_sq
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = np.sqrt(barc_sq / r_sq_arr) * math.sqrt(mu * (mu + 1.0)) - mu
    w = np.where(r_sq_arr >= upper, 0.0, np.where(r_sq_arr <= lower, 1.0, mid))
    w = np.clip(w, 0.0, 1.0)
    if np.ndim(r_sq) == 0:
        return float(w)
    return w


def robust_factor_indices(graph: PoseGraph, fix_odometry_weights: bool = True) -> list[int]:
    if fix_odometry_weights:
        return graph.indices(FactorKind.LOOP_CLOSURE)
    return [i for i, f in enumerate(graph.factors) if f.kind is not FactorKind.PRIOR]


def _residuals_sq(graph, values, idx) -> np.ndarray:
    return np.array([graph.factors[i].chi2(values) for i in idx])


def gnc_optimize(graph: PoseGraph, cfg: GncConfig | None = None,
                 opt_cfg: OptimizerConfig | None = None) -> GncResult:
    """Alternate weighted solves and TLS weight updates while raising ``mu``."""
    cfg = cfg or GncConfig()
    opt_cfg = opt_cfg or OptimizerConfig()
    n_f = len(graph.factors)
    weights = np.ones(n_f)
    robust = robust_factor_indices(graph, cfg.fix_odometry_weights)
    loops = set(graph.indices(FactorKind.LOOP_CLOSURE))

    res = optimize(graph, weights, opt_cfg)
    if not robust:
        return GncResult(res, weights, [], robust)

    barc_sq = cfg.threshold(graph.dof)
    r_sq = _residuals_sq(graph, res.values, robust)
    r_max = float(r_sq.max())
    if 2.0 * r_max <= barc_sq:
        log.debug("max residual %.4g within the convex regime; no graduation", r_max)
        return GncResult(res, weights, [i for i in robust if i in loops], robust)

    state = GncState(mu=barc_sq / (2.0 * r_max - barc_sq), weights=np.ones(len(robust)))
    mu_trace = []
    eps = cfg.weight_convergence_eps
    converged = False
    while state.outer_iteration < cfg.max_outer_iterations:
        state.outer_iteration += 1
        mu_trace.append(state.mu)
        new_w = gnc_weight_update(r_sq, state.mu, barc_sq)
        change = float(np.abs(new_w - state.weights).sum())
        state.weights = new_w
        weights[robust] = new_w
        res = optimize(graph, weights, opt_cfg, initial=res.values)
        r_sq = _residuals_sq(graph, res.values, robust)
        # small-mu weights are all near zero without being truncated; only an
        # exact zero counts as a settled outlier
        binary = bool(np.all((new_w == 0.0) | (new_w >= 1.0 - eps)))
        log.debug("gnc iter %d mu %.4g change %.4g", state.outer_iteration, state.mu, change)
        if binary or change < eps:
            converged = True
            break
        state.mu *= cfg.mu_update_factor

    inliers = [i for i in robust if i in loops and weights[i] > cfg.inlier_weight_cutoff]
    return GncResult(res, weights, inliers, robust, state.outer_iteration, mu_trace, converged)
