"""Keyframe selection, feature binning and non-maximum suppression on abstract tracks.

Nothing here touches images: frames are sets of scored keypoints that already
carry track ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidStreamError

# slack when comparing elapsed time against the keyframe period
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class Keypoint:
    position: tuple
    response: float
    track_id: int

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def y(self) -> float:
        return self.position[1]


@dataclass(frozen=True)
class TrackedFeatureFrame:
    timestamp: float
    keypoints: tuple
    image_size: tuple  # (width, height)

    def __post_init__(self):
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        object.__setattr__(self, "image_size", tuple(self.image_size))
        ids = [k.track_id for k in self.keypoints]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError(f"duplicate track ids in frame at t={self.timestamp}")

    def by_track(self) -> dict:
        return {k.track_id: k for k in self.keypoints}


@dataclass(frozen=True)
class KeyframeConfig:
    max_disparity_since_lkf: float = 100.0   # pixels
    max_time_between_keyframes: float = 1.0  # seconds

    def __post_init__(self):
        if not (self.max_disparity_since_lkf > 0 and self.max_time_between_keyframes > 0):
            raise InvalidArgumentError("keyframe thresholds must be > 0")


@dataclass(frozen=True)
class KeyframeDecision:
    is_keyframe: bool
    disparity: float
    reason: str | None = None  # "disparity", "time" or "first"


def mean_disparity(frame: TrackedFeatureFrame, reference: TrackedFeatureFrame) -> float:
    """Mean displacement of tracks present in both frames; +inf when none are shared."""
    ref = reference.by_track()
    d = [math.hypot(k.x - ref[k.track_id].x, k.y - ref[k.track_id].y)
         for k in frame.keypoints if k.track_id in ref]
    if not d:
        return math.inf
    return float(np.mean(d))


def select_keyframe(frame: TrackedFeatureFrame, last_keyframe: TrackedFeatureFrame,
                    cfg: KeyframeConfig, use_disparity: bool = True) -> KeyframeDecision:
    if not frame.timestamp > last_keyframe.timestamp:
        raise InvalidStreamError(
            f"frame time {frame.timestamp} not after last keyframe {last_keyframe.timestamp}")
    disparity = mean_disparity(frame, last_keyframe)
    if use_disparity and disparity >= cfg.max_disparity_since_lkf:
        return KeyframeDecision(True, disparity, "disparity")
    if frame.timestamp - last_keyframe.timestamp >= cfg.max_time_between_keyframes - _TIME_EPS:
        return KeyframeDecision(True, disparity, "time")
    return KeyframeDecision(False, disparity)


def replay_keyframes(frames: Sequence[TrackedFeatureFrame], cfg: KeyframeConfig,
                     use_disparity: bool = True) -> list[KeyframeDecision]:
    """Run keyframe selection over a stream; the first frame is always a keyframe.

    ``use_disparity=False`` gives the time-trigger-only baseline.
    """
    out = []
    last = None
    prev_t = -math.inf
    for f in frames:
        if not f.timestamp > prev_t:
            raise InvalidStreamError(f"timestamps not strictly increasing at t={f.timestamp}")
        prev_t = f.timestamp
        if last is None:
            dec = KeyframeDecision(True, 0.0, "first")
        else:
            dec = select_keyframe(f, last, cfg, use_disparity)
        if dec.is_keyframe:
            last = f
        out.append(dec)
    return out


# --------------------------------------------------------------------------
# binning
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BinningMask:
    """Coarse grid over the image; each cell is either denied or allowed with a quota."""

    allowed: np.ndarray  # bool (rows, cols)
    quota: np.ndarray    # int (rows, cols)

    def __post_init__(self):
        allowed = np.array(self.allowed, dtype=bool)
        quota = np.array(self.quota, dtype=int)
        if allowed.ndim != 2 or allowed.shape != quota.shape or allowed.size == 0:
            raise InvalidArgumentError("mask flags and quotas must be matching non-empty grids")
        if np.any(quota < 0):
            raise InvalidArgumentError("cell quotas must be >= 0")
        allowed.flags.writeable = False
        quota.flags.writeable = False
        object.__setattr__(self, "allowed", allowed)
        object.__setattr__(self, "quota", quota)

    @classmethod
    def uniform(cls, rows: int, cols: int, quota: int) -> BinningMask:
        return cls(np.ones((rows, cols), bool), np.full((rows, cols), quota))

    @property
    def shape(self) -> tuple:
        return self.allowed.shape

    def cell_of(self, kp: Keypoint, image_size) -> tuple[int, int]:
        w, h = image_size
        if not (0.0 <= kp.x < w and 0.0 <= kp.y < h):
            raise InvalidArgumentError(f"keypoint {kp.track_id} at {kp.position} outside image {image_size}")
        rows, cols = self.shape
        return min(int(kp.y * rows / h), rows - 1), min(int(kp.x * cols / w), cols - 1)


def _ranked(kps: Iterable[Keypoint]) -> list[Keypoint]:
    return sorted(kps, key=lambda k: (-k.response, k.track_id))


def bin_features(frame: TrackedFeatureFrame, mask: BinningMask) -> TrackedFeatureFrame:
    """Drop keypoints in denied cells and keep the best ``quota`` per allowed cell.

    Output order is row-major over cells, then by descending response.
    """
    rows, cols = mask.shape
    cells: dict = {}
    for kp in frame.keypoints:
        cells.setdefault(mask.cell_of(kp, frame.image_size), []).append(kp)
    kept = []
    for r in range(rows):
        for c in range(cols):
            if (r, c) not in cells or not mask.allowed[r, c]:
                continue
            kept.extend(_ranked(cells[(r, c)])[: int(mask.quota[r, c])])
    return TrackedFeatureFrame(frame.timestamp, kept, frame.image_size)


# --------------------------------------------------------------------------
# non-maximum suppression
# --------------------------------------------------------------------------

def nms_radius(keypoints: Sequence[Keypoint], radius: float) -> list[Keypoint]:
    """Greedy suppression: strongest first, reject anything closer than ``radius``
    to an already accepted keypoint."""
    if not radius > 0:
        raise InvalidArgumentError("radius must be > 0")
    ranked = _ranked(keypoints)
    if not ranked:
        return []
    pts = np.array([k.position for k in ranked], dtype=float)
    taken = np.empty((len(ranked), 2))
    n_taken = 0
    out = []
    r2 = radius * radius
    for kp, p in zip(ranked, pts):
        if n_taken:
            d = taken[:n_taken] - p
            if np.min(np.einsum("ij,ij->i", d, d)) < r2:
                continue
        taken[n_taken] = p
        n_taken += 1
        out.append(kp)
    return out


def nms_adaptive_search(keypoints: Sequence[Keypoint], target_count: int, image_size,
                        max_iterations: int = 60) -> tuple[list[Keypoint], float]:
    """Bisect the suppression radius until between ``target_count`` and
    ``1.1 * target_count`` keypoints survive.  Returns the keypoints and radius
    (0.0 when nothing had to be suppressed)."""
    if target_count < 1:
        raise InvalidArgumentError("target_count must be >= 1")
    upper = max(target_count, int(math.floor(1.1 * target_count)))
    if len(keypoints) <= upper:
        return list(keypoints), 0.0
    w, h = image_size
    lo, hi = 0.0, math.hypot(w, h) + 1.0
    best_lo = _ranked(keypoints)
    for _ in range(max_iterations):
        mid = 0.5 * (lo + hi)
        kept = nms_radius(keypoints, mid)
        if len(kept) > upper:
            lo, best_lo = mid, kept
        elif len(kept) < target_count:
            hi = mid
        else:
            return kept, mid
    # greedy order is preserved by truncation, so spacing >= lo still holds
    return best_lo[:upper], lo


def nms_adaptive(keypoints: Sequence[Keypoint], target_count: int, image_size) -> list[Keypoint]:
    return nms_adaptive_search(keypoints, target_count, image_size)[0]
