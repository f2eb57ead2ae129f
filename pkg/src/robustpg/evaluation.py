"""Absolute translation error after closed-form trajectory alignment."""

from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

ALIGN_MODES = ("rigid", "similarity", "none")


class RankDeficiencyWarning(UserWarning):
    """Alignment is not unique (points are collinear or coincident)."""


@dataclass
class AlignedErrorReport:
    ate_rmse: float
    errors: np.ndarray          # per associated pose, meters
    rotation: np.ndarray        # 3x3, applied to the estimate
    translation: np.ndarray
    scale: float
    pairs: list                 # (est index, ref index)

    @property
    def count(self) -> int:
        return len(self.errors)


def _positions(traj) -> np.ndarray:
    """(t, pose) pairs, poses or raw arrays -> (n, 3) positions."""
    pts = []
    for item in traj:
        p = item[1] if isinstance(item, tuple) else item
        t = np.asarray(getattr(p, "translation", p), dtype=float).ravel()
        if t.size == 2:
            t = np.append(t, 0.0)
        pts.append(t)
    return np.array(pts, dtype=float).reshape(-1, 3)


def associate(est: Sequence, ref: Sequence, max_dt: float = 0.02) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp matching of ``(t, pose)`` sequences.

    Candidate pairs within ``max_dt`` are taken in order of increasing time
    difference (ties by index), each pose used at most once.  Returned sorted
    by estimate index.
    """
    if not est or not ref:
        return []
    t_ref = [float(r[0]) for r in ref]
    cands = []
    for i, e in enumerate(est):
        t = float(e[0])
        lo = bisect.bisect_left(t_ref, t - max_dt)
        hi = bisect.bisect_right(t_ref, t + max_dt)
        for j in range(lo, hi):
            dt = abs(t_ref[j] - t)
            if dt <= max_dt:
                cands.append((dt, i, j))
    cands.sort()
    used_e, used_r, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def umeyama_alignment(src: np.ndarray, dst: np.ndarray, with_scale: bool = False):
    """``(R, t, s)`` minimizing ``sum |dst - (s R src + t)|^2`` (Umeyama 1991)."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    n = len(src)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    if D[0] == 0 or D[1] <= 1e-12 * D[0]:
        warnings.warn("trajectory points are collinear; rotation about their axis is undetermined",
                      RankDeficiencyWarning, stacklevel=3)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = 1.0
    if with_scale:
        var_s = (xs ** 2).sum() / n
        if var_s > 0:
            s = float(np.trace(np.diag(D) @ S) / var_s)
    t = mu_d - s * R @ mu_s
    return R, t, s


def ate_from_positions(est_xyz, ref_xyz, mode: str = "rigid") -> AlignedErrorReport:
    if mode not in ALIGN_MODES:
        raise InvalidArgumentError(f"alignment mode must be one of {ALIGN_MODES}")
    est_xyz = _positions(est_xyz) if not isinstance(est_xyz, np.ndarray) else est_xyz.reshape(-1, est_xyz.shape[-1])
    ref_xyz = _positions(ref_xyz) if not isinstance(ref_xyz, np.ndarray) else ref_xyz.reshape(-1, ref_xyz.shape[-1])
    if est_xyz.shape[1] == 2:
        est_xyz = np.column_stack([est_xyz, np.zeros(len(est_xyz))])
    if ref_xyz.shape[1] == 2:
        ref_xyz = np.column_stack([ref_xyz, np.zeros(len(ref_xyz))])
    if est_xyz.shape != ref_xyz.shape:
        raise InvalidArgumentError("trajectories differ in length")
    n = len(est_xyz)
    need = 1 if mode == "none" else 3
    if n < need:
        raise InvalidArgumentError(f"{mode} alignment needs at least {need} pose pairs, got {n}")
    if mode == "none":
        R, t, s = np.eye(3), np.zeros(3), 1.0
    else:
        R, t, s = umeyama_alignment(est_xyz, ref_xyz, with_scale=(mode == "similarity"))
    aligned = s * est_xyz @ R.T + t
    err = np.linalg.norm(aligned - ref_xyz, axis=1)
    rmse = math.sqrt(float(np.mean(err ** 2)))
    return AlignedErrorReport(rmse, err, R, t, s, [(i, i) for i in range(n)])


def ate_rmse(est: Sequence, ref: Sequence, mode: str = "rigid", max_dt: float = 0.02
             ) -> AlignedErrorReport:
    """ATE RMSE of ``(t, pose)`` trajectories after association and alignment.

    ``mode`` is ``rigid``, ``similarity`` (monocular runs) or ``none``.
    """
    pairs = associate(est, ref, max_dt)
    e = _positions([est[i] for i, _ in pairs])
    r = _positions([ref[j] for _, j in pairs])
    rep = ate_from_positions(e, r, mode)
    rep.pairs = pairs
    return rep


def ate_of_values(values: dict, ground_truth: Sequence, mode: str = "rigid") -> float:
    """ATE RMSE for graph values keyed ``0..n-1`` against an index-aligned ground truth."""
    keys = sorted(values)
    est = _positions([values[k] for k in keys])
    ref = _positions([ground_truth[k] for k in keys])
    return ate_from_positions(est, ref, mode).ate_rmse
