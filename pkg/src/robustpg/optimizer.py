"""Gauss-Newton and Levenberg-Marquardt on pose manifolds."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, InvalidArgumentError, NumericalFailureError
from .factorgraph import PoseGraph
from .geometry import _SERIES_ANGLE, _SMALL_ANGLE, Pose2

log = logging.getLogger(__name__)


class Method(enum.Enum):
    GAUSS_NEWTON = "gauss_newton"
    LEVENBERG_MARQUARDT = "levenberg_marquardt"


@dataclass(frozen=True)
class OptimizerConfig:
    method: Method = Method.LEVENBERG_MARQUARDT
    max_iterations: int = 100
    abs_error_tol: float = 1e-10
    rel_error_decrease_tol: float = 1e-8
    lm_lambda_init: float = 1e-4
    lm_lambda_up_factor: float = 10.0
    lm_lambda_down_factor: float = 10.0
    lm_lambda_max: float = 1e12

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 0")
        if self.abs_error_tol <= 0 or self.rel_error_decrease_tol <= 0:
            raise ConfigurationError("tolerances must be > 0")
        if self.lm_lambda_up_factor <= 1 or self.lm_lambda_down_factor <= 1:
            raise ConfigurationError("lambda factors must be > 1")
        if self.lm_lambda_init < 0:
            raise ConfigurationError("lm_lambda_init must be >= 0")


@dataclass
class OptimizeResult:
    values: dict
    error: float
    iterations: int
    converged: bool
    error_trace: list = field(default_factory=list)


def solve_normal_equations(H, b, lam: float = 0.0) -> np.ndarray:
    """Solve ``(H + lam * diag(H)) delta = -b``.

    Dense ``H`` goes through Cholesky.  Sparse ``H`` goes through SuperLU with
    diagonal pivoting and a symmetric ordering, i.e. an LDL^T factorization;
    positive definiteness is checked on its pivots.
    """
    b = np.asarray(b, dtype=float)
    if sp.issparse(H):
        H = H.tocsc()
        if H.shape[0] != H.shape[1] or b.shape != (H.shape[0],):
            raise InvalidArgumentError("shape mismatch in normal equations")
        asym = abs(H - H.T).max() if H.nnz else 0.0
        if asym > 1e-10 * max(1.0, abs(H).max() if H.nnz else 0.0):
            raise InvalidArgumentError("normal matrix is not symmetric")
        A = (H + lam * sp.diags(H.diagonal())).tocsc() if lam else H
        return _sparse_spd_solve(A, b)
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or b.shape != (H.shape[0],):
        raise InvalidArgumentError("shape mismatch in normal equations")
    if np.abs(H - H.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(H).max(initial=0.0)):
        raise InvalidArgumentError("normal matrix is not symmetric")
    A = H + lam * np.diag(np.diag(H)) if lam else H
    try:
        c = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
        return scipy.linalg.cho_solve(c, -b)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailureError(f"normal equations not positive definite: {exc}") from exc


def _sparse_spd_solve(A, b):
    if not np.all(np.isfinite(A.data)):
        raise NumericalFailureError("non-finite entries in normal matrix")
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise NumericalFailureError(f"normal matrix is singular: {exc}") from exc
    if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(lu.U.diagonal() <= 0.0):
        raise NumericalFailureError("normal matrix is not positive definite")
    x = lu.solve(-b)
    if not np.all(np.isfinite(x)):
        raise NumericalFailureError("non-finite update")
    return x


class _Problem:
    """Index bookkeeping for one graph; the state is a dict of poses."""

    def __init__(self, graph: PoseGraph, weights):
        self.graph = graph
        self.keys = list(graph.values)
        d = graph.dof
        self.d = d
        self.offset = {k: i * d for i, k in enumerate(self.keys)}
        self.n = d * len(self.keys)
        self.weights = _check_weights(weights, len(graph.factors))
        self.active = [i for i in range(len(graph.factors)) if self.weights[i] != 0.0]

    def to_state(self, values: dict):
        return dict(values)

    def to_values(self, state) -> dict:
        return state

    def error(self, values) -> float:
        total = 0.0
        factors = self.graph.factors
        for i in self.active:
            total += self.weights[i] * factors[i].chi2(values)
        return total

    def build(self, values):
        """Sparse weighted normal matrix ``H`` and gradient ``b``."""
        d = self.d
        ri = np.repeat(np.arange(d), d)
        ci = np.tile(np.arange(d), d)
        rows, cols, vals = [], [], []
        b = np.zeros(self.n)
        factors = self.graph.factors
        for i in self.active:
            f = factors[i]
            w = self.weights[i]
            Js, r = f.linearize(values)
            offs = [self.offset[k] for k in f.keys]
            for a, (Ja, oa) in enumerate(zip(Js, offs)):
                wJa = w * Ja.T
                b[oa:oa + d] += wJa @ r
                for c, (Jc, oc) in enumerate(zip(Js, offs)):
                    rows.append(oa + ri)
                    cols.append(oc + ci)
                    vals.append((wJa @ Jc).ravel())
        if vals:
            H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(self.n, self.n)).tocsc()
        else:
            H = sp.csc_matrix((self.n, self.n))
        return H, b

    def retract(self, values, delta):
        d = self.d
        out = dict(values)
        for k in self.keys:
            o = self.offset[k]
            out[k] = values[k].retract(delta[o:o + d])
        return out


def _check_weights(weights, n_f: int) -> np.ndarray:
    if weights is None:
        w = np.ones(n_f)
    elif isinstance(weights, dict):
        w = np.ones(n_f)
        for i, v in weights.items():
            w[i] = v
    else:
        w = np.array(weights, dtype=float)
        if w.shape != (n_f,):
            raise InvalidArgumentError(f"expected {n_f} weights, got shape {w.shape}")
    if np.any(w < 0) or np.any(w > 1):
        raise InvalidArgumentError("factor weights must lie in [0, 1]")
    return w


# --------------------------------------------------------------------------
# vectorized SE(2) evaluation; mirrors Pose2 / Factor operation for operation
# --------------------------------------------------------------------------

def _wrap(theta):
    out = np.fmod(theta + np.pi, 2.0 * np.pi)
    out = np.where(out <= 0.0, out + 2.0 * np.pi, out) - np.pi
    return np.where((theta > -np.pi) & (theta <= np.pi), theta, out)


def _v_coeffs(theta):
    small = np.abs(theta) < _SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / t)
    b = np.where(small, theta / 2.0 - theta * t2 / 24.0, 2.0 * np.sin(0.5 * t) ** 2 / t)
    return a, b


def _between2(p, q):
    c, s = np.cos(p[:, 2]), np.sin(p[:, 2])
    dx, dy = q[:, 0] - p[:, 0], q[:, 1] - p[:, 1]
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy, _wrap(q[:, 2] - p[:, 2])])


def _log2(e):
    a, b = _v_coeffs(e[:, 2])
    d = a * a + b * b
    return np.column_stack([e[:, 2], (a * e[:, 0] + b * e[:, 1]) / d, (-b * e[:, 0] + a * e[:, 1]) / d])


def _jr_inv2(r):
    theta, r1, r2 = r[:, 0], r[:, 1], r[:, 2]
    small = np.abs(theta) < _SERIES_ANGLE
    t = np.where(small, 1.0, theta)
    s = np.sin(t)
    t2, q2 = t * t, theta * theta
    a = np.where(small, 1.0 - q2 / 6.0 + q2 * q2 / 120.0, s / t)
    A = np.where(small, theta * (1.0 / 6.0 - q2 / 120.0 + q2 * q2 / 5040.0), (t - s) / t2)
    B = np.where(small, 0.5 - q2 / 24.0 + q2 * q2 / 720.0, 2.0 * np.sin(0.5 * t) ** 2 / t2)
    b = theta * B
    g1 = r1 * A - r2 * B
    g2 = r1 * B + r2 * A
    d = a * a + b * b
    out = np.zeros((len(r), 3, 3))
    out[:, 0, 0] = 1.0
    out[:, 1, 1] = a / d
    out[:, 1, 2] = -b / d
    out[:, 2, 1] = b / d
    out[:, 2, 2] = a / d
    out[:, 1, 0] = -(a * g1 - b * g2) / d
    out[:, 2, 0] = -(b * g1 + a * g2) / d
    return out


class _PlanarProblem:
    """Same contract as ``_Problem`` for SE(2) graphs, with the state held as an
    ``(n, 3)`` array and every factor evaluated in one vectorized pass."""

    def __init__(self, graph: PoseGraph, weights):
        self.graph = graph
        self.keys = list(graph.values)
        self.d = 3
        self.n = 3 * len(self.keys)
        self.weights = _check_weights(weights, len(graph.factors))
        pos = {k: i for i, k in enumerate(self.keys)}
        act = [i for i in range(len(graph.factors)) if self.weights[i] != 0.0]
        self.active = act
        factors = graph.factors
        pri = [i for i in act if len(factors[i].keys) == 1]
        bet = [i for i in act if len(factors[i].keys) == 2]
        self.groups = []
        for idx in (pri, bet):
            if not idx:
                continue
            fs = [factors[i] for i in idx]
            self.groups.append(dict(
                keys=np.array([[pos[k] for k in f.keys] for f in fs], dtype=int),
                z=np.array([f.measurement.params() for f in fs]),
                S=np.array([f.noise.sqrt_information for f in fs]),
                w=self.weights[idx],
            ))

    def to_state(self, values: dict) -> np.ndarray:
        return np.array([values[k].params() for k in self.keys], dtype=float).reshape(-1, 3)

    def to_values(self, state) -> dict:
        return {k: Pose2(*state[i]) for i, k in enumerate(self.keys)}

    @staticmethod
    def _residual(g, X):
        keys = g["keys"]
        if keys.shape[1] == 1:
            rel = X[keys[:, 0]]
        else:
            rel = _between2(X[keys[:, 0]], X[keys[:, 1]])
        r = _log2(_between2(g["z"], rel))
        return rel, r, np.einsum("mij,mj->mi", g["S"], r)

    def error(self, X) -> float:
        total = 0.0
        for g in self.groups:
            wr = self._residual(g, X)[2]
            total += float(g["w"] @ np.einsum("mi,mi->m", wr, wr))
        return total

    def build(self, X):
        rows, cols, vals = [], [], []
        b = np.zeros(self.n)
        blk = np.arange(3)
        ri = np.repeat(blk, 3)
        ci = np.tile(blk, 3)
        for g in self.groups:
            rel, r, wr = self._residual(g, X)
            S, w, keys = g["S"], g["w"], g["keys"]
            Jj = _jr_inv2(r)
            if keys.shape[1] == 1:
                blocks = [S @ Jj]
            else:
                # adjoint of rel^-1
                c, s = np.cos(rel[:, 2]), np.sin(rel[:, 2])
                ix, iy = -c * rel[:, 0] - s * rel[:, 1], s * rel[:, 0] - c * rel[:, 1]
                ci_, si_ = c, -s
                ad = np.zeros((len(r), 3, 3))
                ad[:, 0, 0] = 1.0
                ad[:, 1, 0] = iy
                ad[:, 2, 0] = -ix
                ad[:, 1, 1] = ci_
                ad[:, 1, 2] = -si_
                ad[:, 2, 1] = si_
                ad[:, 2, 2] = ci_
                blocks = [S @ (-Jj @ ad), S @ Jj]
            for a, Ja in enumerate(blocks):
                oa = 3 * keys[:, a]
                np.add.at(b, oa[:, None] + blk, w[:, None] * np.einsum("mji,mj->mi", Ja, wr))
                for c_, Jc in enumerate(blocks):
                    oc = 3 * keys[:, c_]
                    Hb = w[:, None, None] * np.einsum("mki,mkj->mij", Ja, Jc)
                    rows.append((oa[:, None] + ri).ravel())
                    cols.append((oc[:, None] + ci).ravel())
                    vals.append(Hb.reshape(-1))
        if vals:
            H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(self.n, self.n)).tocsc()
        else:
            H = sp.csc_matrix((self.n, self.n))
        return H, b

    def retract(self, X, delta):
        dl = delta.reshape(-1, 3)
        th = _wrap(dl[:, 0])
        a, bb = _v_coeffs(dl[:, 0])
        tx, ty = a * dl[:, 1] - bb * dl[:, 2], bb * dl[:, 1] + a * dl[:, 2]
        c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
        return np.column_stack([X[:, 0] + c * tx - s * ty, X[:, 1] + s * tx + c * ty,
                                _wrap(X[:, 2] + th)])


def _make_problem(graph: PoseGraph, weights, vectorized: bool):
    if vectorized and graph.dimension == "SE2":
        return _PlanarProblem(graph, weights)
    return _Problem(graph, weights)


def optimize(graph: PoseGraph, weights=None, cfg: OptimizerConfig | None = None,
             initial: dict | None = None, vectorized: bool = True) -> OptimizeResult:
    """Minimize ``sum_f w_f |whitened residual_f|^2`` starting from ``initial``
    (default: the graph's own values).

    ``vectorized=False`` forces the per-factor evaluation path for SE(2) graphs.
    """
    cfg = cfg or OptimizerConfig()
    graph.validate()
    prob = _make_problem(graph, weights, vectorized)
    init = graph.values if initial is None else initial
    missing = [k for k in prob.keys if k not in init]
    if missing:
        raise InvalidArgumentError(f"initial values missing keys {missing[:5]}")
    values = prob.to_state(init)

    err = prob.error(values)
    trace = [err]
    lam = cfg.lm_lambda_init
    lm = cfg.method is Method.LEVENBERG_MARQUARDT
    converged = False
    iterations = 0

    while True:
        if err < cfg.abs_error_tol:
            converged = True
            break
        if iterations >= cfg.max_iterations:
            break
        H, b = prob.build(values)
        if lm:
            while True:
                delta = solve_normal_equations(H, b, lam)
                new_values = prob.retract(values, delta)
                new_err = prob.error(new_values)
                if new_err < err:
                    lam = max(lam / cfg.lm_lambda_down_factor, 1e-12)
                    break
                lam = max(lam, 1e-12) * cfg.lm_lambda_up_factor
                if lam > cfg.lm_lambda_max:
                    new_values = None
                    break
            if new_values is None:
                # no descent direction left at machine precision
                converged = True
                break
        else:
            delta = solve_normal_equations(H, b, 0.0)
            new_values = prob.retract(values, delta)
            new_err = prob.error(new_values)
        iterations += 1
        decrease = (err - new_err) / err if err > 0 else 0.0
        values, err = new_values, new_err
        trace.append(err)
        log.debug("iteration %d error %.6g lambda %.3g", iterations, err, lam)
        if err < cfg.abs_error_tol or abs(decrease) < cfg.rel_error_decrease_tol:
            converged = True
            break

    return OptimizeResult(values=prob.to_values(values), error=err, iterations=iterations,
                          converged=converged, error_trace=trace)
