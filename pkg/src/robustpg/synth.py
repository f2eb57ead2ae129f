"""Synthetic pose-graph datasets with labeled loop-closure outliers.

Noise is drawn on the tangent space of each relative pose (right perturbation)
with independent isotropic rotation/translation blocks, and every factor gets
the matching inverse covariance as its information matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .factorgraph import FactorKind, LoopCandidate, NoiseModel, PoseGraph
from .frontend import Keypoint, TrackedFeatureFrame
from .geometry import Pose2, Pose3, Rot3, interpolate
from .odometry_fusion import OdometrySample

SHAPES = ("grid", "loop", "random-walk")
OUTLIER_MODES = ("random-transform", "wrong-association")


@dataclass(frozen=True)
class SynthConfig:
    dimension: str = "SE2"
    shape: str = "grid"
    num_poses: int = 500
    sigma_rot: float = 0.01
    sigma_trans: float = 0.05
    loop_radius: float = 0.5
    num_true_loops: int = 100
    outlier_ratio: float = 0.0
    outlier_mode: str = "random-transform"
    seed: int = 0
    min_loop_separation: int = 10
    step: float = 1.0
    keyframe_dt: float = 0.2
    # external odometry stream; sigmas default to the visual-odometry ones
    external_odometry: bool = True
    ext_sigma_rot: float | None = None
    ext_sigma_trans: float | None = None
    ext_substeps: int = 2
    # information matrices use max(sigma, floor) so noise-free data stays well posed
    sigma_floor: float = 1e-3
    prior_information: float = 1e6

    def __post_init__(self):
        if self.dimension not in ("SE2", "SE3"):
            raise ConfigurationError(f"dimension must be SE2 or SE3, got {self.dimension!r}")
        if self.shape not in SHAPES:
            raise ConfigurationError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.outlier_mode not in OUTLIER_MODES:
            raise ConfigurationError(f"outlier_mode must be one of {OUTLIER_MODES}")
        if self.num_poses < 2:
            raise ConfigurationError("num_poses must be >= 2")
        if not 0.0 <= self.outlier_ratio < 1.0:
            raise ConfigurationError("outlier_ratio must lie in [0, 1)")
        if self.sigma_rot < 0 or self.sigma_trans < 0 or self.sigma_floor <= 0:
            raise ConfigurationError("sigmas must be >= 0 and the floor > 0")
        if self.num_true_loops < 0 or self.ext_substeps < 1:
            raise ConfigurationError("invalid loop count or substeps")

    @property
    def pose_type(self):
        return Pose2 if self.dimension == "SE2" else Pose3

    @property
    def dof(self) -> int:
        return 3 if self.dimension == "SE2" else 6

    @property
    def num_outliers(self) -> int:
        """Outliers make up ``outlier_ratio`` of all candidates."""
        r = self.outlier_ratio
        return int(round(r * self.num_true_loops / (1.0 - r)))


def sigmas_vector(dof: int, sigma_rot: float, sigma_trans: float) -> np.ndarray:
    n_rot = 1 if dof == 3 else 3
    return np.array([sigma_rot] * n_rot + [sigma_trans] * (dof - n_rot))


def noise_model(dof: int, sigma_rot: float, sigma_trans: float, floor: float) -> NoiseModel:
    s = sigmas_vector(dof, max(sigma_rot, floor), max(sigma_trans, floor))
    return NoiseModel.from_sigmas(s)


def perturb(pose, rng: np.random.Generator, sigma_rot: float, sigma_trans: float):
    """``pose * Exp(n)`` with ``n ~ N(0, diag(sigmas^2))``."""
    s = sigmas_vector(pose.dim, sigma_rot, sigma_trans)
    if not np.any(s):
        return pose
    return pose.retract(rng.normal(size=pose.dim) * s)


@dataclass
class SynthDataset:
    config: SynthConfig
    ground_truth: list
    timestamps: np.ndarray
    odometry: list            # odometry[k] measures between(gt[k], gt[k+1])
    odometry_noise: NoiseModel
    loop_candidates: list     # LoopCandidate with inlier labels
    external_odometry: list | None = None   # OdometrySample stream
    ext_noise: NoiseModel | None = None

    @property
    def pose_type(self):
        return self.config.pose_type

    @property
    def keys(self) -> list[int]:
        return list(range(len(self.ground_truth)))

    def composed_odometry(self) -> list:
        poses = [self.ground_truth[0]]
        for z in self.odometry:
            poses.append(poses[-1].compose(z))
        return poses

    def outlier_labels(self) -> np.ndarray:
        return np.array([not c.inlier for c in self.loop_candidates], dtype=bool)

    def to_pose_graph(self, loops: str | list = "all", extra_factors=()) -> PoseGraph:
        """Prior + odometry chain + loop closures, initialized at composed odometry.

        ``loops`` is ``"all"``, ``"inliers"``, ``"none"`` or a list of candidate indices.
        Loop-closure factors come last, in candidate order.
        """
        cfg = self.config
        g = PoseGraph(cfg.dimension)
        for k, p in enumerate(self.composed_odometry()):
            g.add_value(k, p)
        g.add_prior(0, self.ground_truth[0], NoiseModel.isotropic(cfg.dof, cfg.prior_information))
        for k, z in enumerate(self.odometry):
            g.add_between(k, k + 1, z, self.odometry_noise)
        for f in extra_factors:
            g.add_factor(f)
        if loops == "all":
            chosen = range(len(self.loop_candidates))
        elif loops == "inliers":
            chosen = [i for i, c in enumerate(self.loop_candidates) if c.inlier]
        elif loops == "none":
            chosen = []
        else:
            chosen = loops
        for i in chosen:
            g.add_factor(self.loop_candidates[i].to_factor())
        return g

    def loop_factor_indices(self, graph: PoseGraph) -> list[int]:
        return graph.indices(FactorKind.LOOP_CLOSURE)


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------

_DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))


def _grid_walk(n: int, rng: np.random.Generator, step: float, with_levels: bool):
    side = max(3, int(round(math.sqrt(n) / 2)))
    x = y = 0
    z = 0
    heading = 0
    cells = [(0, 0, 0, 0)]
    for _ in range(n - 1):
        if with_levels and rng.random() < 0.1:
            z = 1 - z
            cells.append((x, y, z, heading))
            continue
        u = rng.random()
        order = [heading, (heading + 1) % 4, (heading + 3) % 4] if u < 0.7 else (
            [(heading + 1) % 4, (heading + 3) % 4, heading] if u < 0.85 else
            [(heading + 3) % 4, (heading + 1) % 4, heading])
        order.append((heading + 2) % 4)
        for h in order:
            nx, ny = x + _DIRS[h][0], y + _DIRS[h][1]
            if 0 <= nx <= side and 0 <= ny <= side:
                x, y, heading = nx, ny, h
                break
        cells.append((x, y, z, heading))
    return [(cx * step, cy * step, cz * step, h * math.pi / 2) for cx, cy, cz, h in cells]


def make_trajectory(cfg: SynthConfig, rng: np.random.Generator) -> list:
    n = cfg.num_poses
    se2 = cfg.dimension == "SE2"
    if cfg.shape == "grid":
        pts = _grid_walk(n, rng, cfg.step, with_levels=not se2)
        if se2:
            return [Pose2(x, y, wrap_yaw(h)) for x, y, _, h in pts]
        return [Pose3(Rot3.from_yaw(h), (x, y, z)) for x, y, z, h in pts]
    if cfg.shape == "loop":
        laps = 3
        radius = n * cfg.step / (2 * math.pi * laps)
        out = []
        for k in range(n):
            phi = 2 * math.pi * laps * k / n
            x, y, yaw = radius * math.cos(phi), radius * math.sin(phi), phi + math.pi / 2
            if se2:
                out.append(Pose2(x, y, yaw))
            else:
                out.append(Pose3(Rot3.from_yaw(yaw), (x, y, 0.5 * math.sin(3 * phi))))
        return out
    # random walk
    if se2:
        pose = Pose2()
        out = [pose]
        for _ in range(n - 1):
            pose = pose.compose(Pose2(cfg.step, 0.0, rng.normal(0.0, 0.3)))
            out.append(pose)
        return out
    pose = Pose3()
    out = [pose]
    for _ in range(n - 1):
        w = rng.normal(0.0, 0.1, size=3)
        pose = pose.compose(Pose3(Rot3.exp(w), (cfg.step, 0.0, 0.0)))
        out.append(pose)
    return out


def wrap_yaw(h: float) -> float:
    return math.atan2(math.sin(h), math.cos(h))


def _random_rotation(rng: np.random.Generator) -> Rot3:
    q = rng.normal(size=4)
    return Rot3(q)


def _random_relative_pose(cfg: SynthConfig, rng: np.random.Generator, reach: float):
    dim = 2 if cfg.dimension == "SE2" else 3
    d = rng.normal(size=dim)
    d /= np.linalg.norm(d)
    t = d * reach * rng.random() ** (1.0 / dim)
    if dim == 2:
        return Pose2(t[0], t[1], rng.uniform(-math.pi, math.pi))
    return Pose3(_random_rotation(rng), t)


def _positions(poses) -> np.ndarray:
    return np.array([p.translation for p in poses])


def _near_pairs(pos: np.ndarray, radius: float, min_sep: int) -> list[tuple[int, int]]:
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    i, j = np.nonzero(np.triu(dist <= radius, k=min_sep))
    return list(zip(i.tolist(), j.tolist()))


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

def generate(cfg: SynthConfig) -> SynthDataset:
    """Deterministic dataset for a given config (the seed lives in the config)."""
    rng = np.random.default_rng(cfg.seed)
    gt = make_trajectory(cfg, rng)
    n = len(gt)
    dof = cfg.dof
    stamps = np.arange(n) * cfg.keyframe_dt

    odom_noise = noise_model(dof, cfg.sigma_rot, cfg.sigma_trans, cfg.sigma_floor)
    odometry = [perturb(gt[k].between(gt[k + 1]), rng, cfg.sigma_rot, cfg.sigma_trans)
                for k in range(n - 1)]

    pos = _positions(gt)
    near = _near_pairs(pos, cfg.loop_radius, cfg.min_loop_separation)
    if len(near) < cfg.num_true_loops:
        raise ConfigurationError(
            f"requested {cfg.num_true_loops} true loops but only {len(near)} "
            f"pose pairs lie within {cfg.loop_radius} m")
    picked = sorted(rng.choice(len(near), size=cfg.num_true_loops, replace=False).tolist())
    candidates = []
    for idx in picked:
        i, j = near[idx]
        z = perturb(gt[i].between(gt[j]), rng, cfg.sigma_rot, cfg.sigma_trans)
        candidates.append(LoopCandidate(i, j, z, odom_noise, inlier=True))

    n_out = cfg.num_outliers
    if n_out:
        if cfg.outlier_mode == "random-transform":
            candidates += _random_transform_outliers(cfg, rng, gt, near, set(picked), n_out, odom_noise)
        else:
            candidates += _wrong_association_outliers(cfg, rng, gt, near, n_out, odom_noise)
        order = rng.permutation(len(candidates))
        candidates = [candidates[i] for i in order]

    ext, ext_noise = None, None
    if cfg.external_odometry:
        ext, ext_noise = _external_stream(cfg, rng, gt, stamps)

    return SynthDataset(cfg, gt, stamps, odometry, odom_noise, candidates, ext, ext_noise)


def _separated_pair(rng, n, min_sep):
    if n <= min_sep:
        raise ConfigurationError("trajectory too short for the loop separation")
    while True:
        i, j = sorted(rng.integers(0, n, size=2).tolist())
        if j - i >= min_sep:
            return i, j


def _random_transform_outliers(cfg, rng, gt, near, used, n_out, noise):
    pos = _positions(gt)
    diameter = float(np.linalg.norm(pos.max(0) - pos.min(0))) or cfg.step
    free = [k for k in range(len(near)) if k not in used]
    if len(free) >= n_out:
        sel = sorted(rng.choice(len(free), size=n_out, replace=False).tolist())
        pairs = [near[free[k]] for k in sel]
    else:
        pairs = [_separated_pair(rng, len(gt), cfg.min_loop_separation) for _ in range(n_out)]
    out = []
    for i, j in pairs:
        z = _random_relative_pose(cfg, rng, 5.0 * diameter)
        out.append(LoopCandidate(i, j, z, noise, inlier=False))
    return out


def _wrong_association_outliers(cfg, rng, gt, near, n_out, noise):
    pos = _positions(gt)
    n = len(gt)
    out = []
    while len(out) < n_out:
        i, j = _separated_pair(rng, n, cfg.min_loop_separation)
        if np.linalg.norm(pos[i] - pos[j]) <= cfg.loop_radius:
            continue
        if near:
            a, b = near[int(rng.integers(len(near)))]
        else:
            a, b = _separated_pair(rng, n, cfg.min_loop_separation)
        z = perturb(gt[a].between(gt[b]), rng, cfg.sigma_rot, cfg.sigma_trans)
        out.append(LoopCandidate(i, j, z, noise, inlier=False))
    return out


def _external_stream(cfg, rng, gt, stamps):
    sr = cfg.sigma_rot if cfg.ext_sigma_rot is None else cfg.ext_sigma_rot
    st = cfg.sigma_trans if cfg.ext_sigma_trans is None else cfg.ext_sigma_trans
    S = cfg.ext_substeps
    # per-substep noise so one keyframe interval carries roughly (sr, st)
    sub_r, sub_t = sr / math.sqrt(S), st / math.sqrt(S)
    gt_sub, t_sub = [], []
    for k in range(len(gt) - 1):
        for s in range(S):
            gt_sub.append(interpolate(gt[k], gt[k + 1], s / S))
            t_sub.append(stamps[k] + s * cfg.keyframe_dt / S)
    gt_sub.append(gt[-1])
    t_sub.append(stamps[-1])
    pose = gt_sub[0]
    stream = [OdometrySample(float(t_sub[0]), pose)]
    for m in range(1, len(gt_sub)):
        pose = pose.compose(perturb(gt_sub[m - 1].between(gt_sub[m]), rng, sub_r, sub_t))
        stream.append(OdometrySample(float(t_sub[m]), pose))
    return stream, noise_model(cfg.dof, sr, st, cfg.sigma_floor)


# --------------------------------------------------------------------------
# feature tracks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureTrackConfig:
    num_tracks: int = 150
    gain_rot: float = 200.0      # px per rad
    gain_trans: float = 20.0     # px per m
    image_size: tuple = (752, 480)
    # (t_start, t_end) intervals with zero optical flow
    stationary_segments: tuple = ()
    seed: int = 0


def frame_flow(prev, cur, cfg: FeatureTrackConfig) -> float:
    """Per-frame feature displacement for the motion ``between(prev, cur)``."""
    xi = prev.between(cur).log()
    n_rot = 1 if prev.dim == 3 else 3
    scaled = np.concatenate([cfg.gain_rot * xi[:n_rot], cfg.gain_trans * xi[n_rot:]])
    return float(np.linalg.norm(scaled))


def _in_segments(t: float, segments) -> bool:
    return any(a <= t <= b for a, b in segments)


def generate_feature_stream(trajectory, timestamps, cfg: FeatureTrackConfig | None = None
                            ) -> list[TrackedFeatureFrame]:
    """Abstract feature tracks whose flow follows the trajectory's motion.

    Every track moves along its own fixed image direction by
    ``|(gain_rot * omega, gain_trans * v)|`` pixels per frame, where ``(omega, v)``
    is the tangent of the inter-pose motion; frames inside a stationary segment
    move by zero.  Tracks leaving the image are replaced by new track ids.
    """
    cfg = cfg or FeatureTrackConfig()
    if len(trajectory) < 2 or len(trajectory) != len(timestamps):
        raise ConfigurationError("need at least two poses with matching timestamps")
    rng = np.random.default_rng(cfg.seed)
    w, h = cfg.image_size
    m = cfg.num_tracks
    pos = rng.uniform((0, 0), (w, h), size=(m, 2))
    ang = rng.uniform(0, 2 * math.pi, size=m)
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    resp = rng.uniform(0.0, 1.0, size=m)
    ids = np.arange(m)
    next_id = m

    frames = []
    for k, t in enumerate(timestamps):
        if k > 0:
            d = 0.0
            if not _in_segments(float(t), cfg.stationary_segments):
                d = frame_flow(trajectory[k - 1], trajectory[k], cfg)
            if d > 0.0:
                pos = pos + d * dirs
                gone = (pos[:, 0] < 0) | (pos[:, 0] >= w) | (pos[:, 1] < 0) | (pos[:, 1] >= h)
                for r in np.nonzero(gone)[0]:
                    pos[r] = rng.uniform((0, 0), (w, h))
                    a = rng.uniform(0, 2 * math.pi)
                    dirs[r] = (math.cos(a), math.sin(a))
                    resp[r] = rng.uniform()
                    ids[r] = next_id
                    next_id += 1
        kps = [Keypoint((float(pos[r, 0]), float(pos[r, 1])), float(resp[r]), int(ids[r]))
               for r in range(m)]
        frames.append(TrackedFeatureFrame(float(t), kps, (w, h)))
    return frames


def stop_and_go_trajectory(num_cycles: int = 4, move_duration: float = 10.0,
                           stop_duration: float = 10.0, rate: float = 10.0,
                           speed: float = 5.0, yaw_rate: float = 0.1):
    """Planar drive alternating constant-velocity motion and full stops.

    Returns ``(poses, timestamps, stationary_segments)``; poses are Pose3.
    """
    dt = 1.0 / rate
    step = Pose3.exp([0.0, 0.0, yaw_rate * dt, speed * dt, 0.0, 0.0])
    pose = Pose3()
    poses = [pose]
    segments = []
    for _ in range(num_cycles):
        for _ in range(int(round(move_duration * rate))):
            pose = pose.compose(step)
            poses.append(pose)
        first = len(poses)
        poses.extend([pose] * int(round(stop_duration * rate)))
        segments.append((first * dt, (len(poses) - 1) * dt))
    stamps = np.arange(len(poses)) * dt
    return poses, stamps, tuple(segments)
