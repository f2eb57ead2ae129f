"""Pairwise consistency maximization for loop-closure candidates.

A candidate first has to agree with the odometry path between its endpoints.
Survivors are connected when the cycle formed by the two loop closures and
the odometry between their endpoints closes, and the largest mutually
consistent subset is the maximum clique of that graph.

Threshold semantics: the cycle-error transform is accepted when its geodesic
rotation angle is <= ``rotation_threshold`` (rad) AND the norm of its
translation is <= ``translation_threshold`` (m).  The optional Mahalanobis mode
compares the chi-squared of the cycle's Log against a quantile instead.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from ..errors import ConfigurationError, InvalidArgumentError, TopologyError
from ..factorgraph import FactorKind, LoopCandidate, PoseGraph
from ..geometry import Pose2
from .clique import max_clique


@dataclass(frozen=True)
class PcmConfig:
    rotation_threshold: float = 0.01
    translation_threshold: float = 0.05
    use_incremental: bool = False
    mode: str = "threshold"       # or "mahalanobis"
    confidence: float = 0.99      # mahalanobis mode only

    def __post_init__(self):
        if not (self.rotation_threshold > 0 and self.translation_threshold > 0):
            raise ConfigurationError("PCM thresholds must be > 0")
        if self.mode not in ("threshold", "mahalanobis"):
            raise ConfigurationError(f"unknown PCM mode {self.mode!r}")


class OdometryChain:
    """Odometry measurements along consecutive keys ``keys[m] -> keys[m+1]``."""

    def __init__(self, keys: Sequence, measurements: Sequence, covariances: Sequence | None = None):
        if len(measurements) != len(keys) - 1:
            raise InvalidArgumentError("need exactly one measurement per consecutive key pair")
        self.keys = list(keys)
        self.index = {k: m for m, k in enumerate(self.keys)}
        self.measurements = list(measurements)
        self.covariances = None if covariances is None else [np.asarray(c, float) for c in covariances]
        self.pose_type = type(measurements[0]) if measurements else Pose2
        cum = [self.pose_type.identity()]
        for z in self.measurements:
            cum.append(cum[-1].compose(z))
        self._cum = cum
        self._prefix = None

    @classmethod
    def from_graph(cls, graph: PoseGraph) -> OdometryChain:
        keys = list(graph.values)
        pos = {k: m for m, k in enumerate(keys)}
        step = {}
        for f in graph.factors:
            if f.kind is FactorKind.ODOMETRY:
                i, j = f.keys
                if pos[j] == pos[i] + 1:
                    step.setdefault(pos[i], f)
        n = 0
        while n in step:
            n += 1
        fs = [step[m] for m in range(n)]
        return cls(keys[: n + 1], [f.measurement for f in fs],
                   [np.linalg.inv(f.noise.information) for f in fs])

    def _pos(self, key) -> int:
        try:
            return self.index[key]
        except KeyError:
            raise TopologyError(f"key {key!r} is not on the odometry chain") from None

    def between(self, key_a, key_b):
        """Composed odometry from ``key_a`` to ``key_b`` (either direction)."""
        a, b = self._pos(key_a), self._pos(key_b)
        return self._cum[a].between(self._cum[b])

    def between_with_cov(self, key_a, key_b):
        """Composed odometry and its first-order covariance (right perturbation).

        Uses prefix sums of the step covariances mapped to the chain origin:
        ``cov(lo -> hi) = Ad(P_hi^-1) (W_hi - W_lo) Ad(P_hi^-1)^T``.
        """
        if self.covariances is None:
            raise ConfigurationError("odometry chain has no covariances")
        if self._prefix is None:
            W = [np.zeros((self._cum[0].dim,) * 2)]
            for m, S in enumerate(self.covariances):
                Ad = self._cum[m + 1].adjoint()
                W.append(W[-1] + Ad @ S @ Ad.T)
            self._prefix = W
        a, b = self._pos(key_a), self._pos(key_b)
        lo, hi = min(a, b), max(a, b)
        T = self._cum[lo].between(self._cum[hi])
        Ad = self._cum[hi].inverse().adjoint()
        S = Ad @ (self._prefix[hi] - self._prefix[lo]) @ Ad.T
        S = 0.5 * (S + S.T)
        if a > b:
            T, S = _inverse_cov(T, S)
        return T, S


def _compose_cov(T, S, A, SA):
    """(T, S) * (A, SA) under right-perturbation noise."""
    Ad = A.inverse().adjoint()
    return T.compose(A), Ad @ S @ Ad.T + SA


def _inverse_cov(T, S):
    Ad = T.adjoint()
    return T.inverse(), Ad @ S @ Ad.T


def _translation_norm(E) -> float:
    return float(np.linalg.norm(E.translation))


def _rotation_angle(E) -> float:
    if isinstance(E, Pose2):
        return abs(E.theta)
    return E.rotation.angle()


def _within(E, cov, cfg: PcmConfig) -> bool:
    if cfg.mode == "threshold":
        return (_rotation_angle(E) <= cfg.rotation_threshold
                and _translation_norm(E) <= cfg.translation_threshold)
    eps = E.log()
    stat = float(eps @ np.linalg.solve(cov, eps))
    return stat <= _chi2_quantile(cfg.confidence, E.dim)


@functools.lru_cache(maxsize=None)
def _chi2_quantile(confidence: float, dof: int) -> float:
    return float(chi2.ppf(confidence, dof))


def _cov(c: LoopCandidate) -> np.ndarray:
    return np.linalg.inv(c.noise.information)


def odometry_error(candidate: LoopCandidate, chain: OdometryChain, cfg: PcmConfig | None = None):
    """Error transform ``z^-1 * odom(i, j)`` and (in mahalanobis mode) its covariance."""
    cfg = cfg or PcmConfig()
    z = candidate.measurement
    if cfg.mode == "threshold":
        return z.inverse().compose(chain.between(candidate.key_from, candidate.key_to)), None
    O, SO = chain.between_with_cov(candidate.key_from, candidate.key_to)
    Zi, SZi = _inverse_cov(z, _cov(candidate))
    return _compose_cov(Zi, SZi, O, SO)


def pcm_odometry_check(candidate: LoopCandidate, chain: OdometryChain,
                       cfg: PcmConfig | None = None) -> bool:
    cfg = cfg or PcmConfig()
    E, S = odometry_error(candidate, chain, cfg)
    return _within(E, S, cfg)


def cycle_error(a: LoopCandidate, b: LoopCandidate, chain: OdometryChain,
                cfg: PcmConfig | None = None):
    """Cycle ``i -a-> j -odom-> l -b^-1-> k -odom-> i`` for ``a = (i, j)``, ``b = (k, l)``."""
    cfg = cfg or PcmConfig()
    i, j, k, l = a.key_from, a.key_to, b.key_from, b.key_to
    if cfg.mode == "threshold":
        E = (a.measurement.compose(chain.between(j, l))
             .compose(b.measurement.inverse()).compose(chain.between(k, i)))
        return E, None
    T, S = a.measurement, _cov(a)
    T, S = _compose_cov(T, S, *chain.between_with_cov(j, l))
    T, S = _compose_cov(T, S, *_inverse_cov(b.measurement, _cov(b)))
    return _compose_cov(T, S, *chain.between_with_cov(k, i))


def pcm_pairwise_consistent(a: LoopCandidate, b: LoopCandidate, chain: OdometryChain,
                            cfg: PcmConfig | None = None) -> bool:
    """The cycle must close when walked from either candidate, which makes the
    test symmetric in ``(a, b)``."""
    cfg = cfg or PcmConfig()
    return _within(*cycle_error(a, b, chain, cfg), cfg) and _within(*cycle_error(b, a, chain, cfg), cfg)


def consistency_matrix(candidates: Sequence[LoopCandidate], chain: OdometryChain,
                       cfg: PcmConfig | None = None) -> np.ndarray:
    cfg = cfg or PcmConfig()
    n = len(candidates)
    A = np.zeros((n, n), dtype=bool)
    for p in range(n):
        for q in range(p + 1, n):
            A[p, q] = A[q, p] = pcm_pairwise_consistent(candidates[p], candidates[q], chain, cfg)
    return A


def pcm_select(candidates: Sequence[LoopCandidate], chain: OdometryChain,
               cfg: PcmConfig | None = None) -> list[int]:
    """Indices (into ``candidates``, ascending) of the accepted loop closures."""
    cfg = cfg or PcmConfig()
    if cfg.use_incremental:
        inc = IncrementalPcm(chain, cfg)
        for c in candidates:
            inc.add(c)
        chosen = {id(c) for c in inc.inliers()}
        return [i for i, c in enumerate(candidates) if id(c) in chosen]
    order = sorted(range(len(candidates)), key=lambda i: candidates[i].sort_key())
    survivors = [i for i in order if pcm_odometry_check(candidates[i], chain, cfg)]
    A = consistency_matrix([candidates[i] for i in survivors], chain, cfg)
    return sorted(survivors[v] for v in max_clique(A))


class IncrementalPcm:
    """Caches odometry checks and pairwise consistency as candidates arrive and
    recomputes the maximum clique after every insertion."""

    def __init__(self, chain: OdometryChain, cfg: PcmConfig | None = None):
        self.chain = chain
        self.cfg = cfg or PcmConfig()
        self.candidates: list[LoopCandidate] = []
        self._survivors: list[int] = []      # positions into self.candidates
        self._edges: dict[int, set] = {}
        self._inliers: list[int] = []

    def add(self, candidate: LoopCandidate) -> list[LoopCandidate]:
        pos = len(self.candidates)
        self.candidates.append(candidate)
        if pcm_odometry_check(candidate, self.chain, self.cfg):
            nbrs = {s for s in self._survivors
                    if pcm_pairwise_consistent(self.candidates[s], candidate, self.chain, self.cfg)}
            self._edges[pos] = nbrs
            for s in nbrs:
                self._edges[s].add(pos)
            self._survivors.append(pos)
            self._recompute()
        return self.inliers()

    def _recompute(self) -> None:
        order = sorted(self._survivors, key=lambda s: self.candidates[s].sort_key())
        where = {s: v for v, s in enumerate(order)}
        A = np.zeros((len(order), len(order)), dtype=bool)
        for s in order:
            for t in self._edges[s]:
                A[where[s], where[t]] = True
        self._inliers = sorted(order[v] for v in max_clique(A))

    def inliers(self) -> list[LoopCandidate]:
        return [self.candidates[s] for s in self._inliers]
