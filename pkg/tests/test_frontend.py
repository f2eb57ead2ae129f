import itertools
import math

import numpy as np
import pytest

from robustpg.errors import InvalidArgumentError, InvalidStreamError
from robustpg.frontend import (BinningMask, Keypoint, KeyframeConfig, TrackedFeatureFrame,
                               bin_features, mean_disparity, nms_adaptive, nms_adaptive_search,
                               nms_radius, replay_keyframes, select_keyframe)
from robustpg.synth import FeatureTrackConfig, generate_feature_stream, stop_and_go_trajectory

SIZE = (640.0, 480.0)


def _frame(t, pts, ids=None, resp=None):
    ids = range(len(pts)) if ids is None else ids
    resp = [1.0] * len(pts) if resp is None else resp
    return TrackedFeatureFrame(t, [Keypoint(tuple(p), r, i) for p, r, i in zip(pts, resp, ids)], SIZE)


# --- keyframes ------------------------------------------------------------

def test_identical_frames_skip_until_time_trigger():
    a = _frame(0.0, [(10, 10), (20, 20)])
    b = _frame(0.5, [(10, 10), (20, 20)])
    cfg = KeyframeConfig(50.0, 1.0)
    d = select_keyframe(b, a, cfg)
    assert not d.is_keyframe and d.disparity == 0.0
    d = select_keyframe(_frame(1.0, [(10, 10), (20, 20)]), a, cfg)
    assert d.is_keyframe and d.reason == "time"


def test_disparity_is_mean_over_common_tracks():
    a = _frame(0.0, [(0, 0), (0, 0), (5, 5)], ids=[1, 2, 3])
    b = _frame(0.1, [(3, 4), (6, 8), (100, 100)], ids=[1, 2, 9])
    assert mean_disparity(b, a) == pytest.approx(7.5)
    d = select_keyframe(b, a, KeyframeConfig(7.5, 10.0))
    assert d.is_keyframe and d.reason == "disparity"
    assert not select_keyframe(b, a, KeyframeConfig(7.6, 10.0)).is_keyframe


def test_no_common_tracks_forces_a_keyframe():
    a = _frame(0.0, [(0, 0)], ids=[1])
    b = _frame(0.1, [(0, 0)], ids=[2])
    d = select_keyframe(b, a, KeyframeConfig(1000.0, 10.0))
    assert d.is_keyframe and math.isinf(d.disparity)


def test_time_order_is_enforced():
    a = _frame(1.0, [(0, 0)])
    with pytest.raises(InvalidStreamError):
        select_keyframe(_frame(1.0, [(0, 0)]), a, KeyframeConfig())
    with pytest.raises(InvalidStreamError):
        replay_keyframes([_frame(0.0, [(0, 0)]), _frame(0.2, [(0, 0)]), _frame(0.1, [(0, 0)])], KeyframeConfig())


def test_keyframe_config_validation():
    with pytest.raises(InvalidArgumentError):
        KeyframeConfig(0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        KeyframeConfig(1.0, -1.0)


def test_duplicate_track_ids_rejected():
    with pytest.raises(InvalidArgumentError):
        _frame(0.0, [(0, 0), (1, 1)], ids=[4, 4])


def _stop_and_go_frames(seed=0):
    poses, stamps, segments = stop_and_go_trajectory()
    return generate_feature_stream(poses, stamps, FeatureTrackConfig(stationary_segments=segments, seed=seed)), segments


def test_keyframe_count_is_monotone_in_threshold():
    frames, _ = _stop_and_go_frames(1)
    counts = [sum(d.is_keyframe for d in replay_keyframes(frames, KeyframeConfig(m, 1.0)))
              for m in (5, 20, 40, 80, 160, 320, 640)]
    assert counts == sorted(counts, reverse=True)


def test_stationary_segment_keyframe_count():
    frames, segments = _stop_and_go_frames(2)
    for max_time in (0.5, 1.0, 2.5):
        dec = replay_keyframes(frames, KeyframeConfig(50.0, max_time))
        for a, b in segments:
            inside = sum(d.is_keyframe for f, d in zip(frames, dec) if a <= f.timestamp <= b)
            expect = math.floor((b - a) / max_time)
            assert expect - 1 <= inside <= expect + 1, (max_time, a, b, inside)


# --- binning ---------------------------------------------------------------

def test_binning_two_by_two_quota_one():
    w, h = SIZE
    pts, resp, ids = [], [], []
    k = 0
    for r in range(2):
        for c in range(2):
            for m in range(2):
                pts.append((c * w / 2 + 10 + 50 * m, r * h / 2 + 10))
                resp.append(float(10 * k + m))
                ids.append(k * 2 + m)
            k += 1
    frame = _frame(0.0, pts, ids=ids, resp=resp)
    out = bin_features(frame, BinningMask.uniform(2, 2, 1))
    # oracle: enumerate cells and keep the best response in each
    cells = {}
    for kp in frame.keypoints:
        cell = (int(kp.y >= h / 2), int(kp.x >= w / 2))
        cells.setdefault(cell, []).append(kp)
    expect = [max(cells[c], key=lambda kp: kp.response) for c in sorted(cells)]
    assert list(out.keypoints) == expect
    assert len(out.keypoints) == 4


def test_binning_identity_with_generous_quota(rng):
    pts = rng.uniform((0, 0), SIZE, size=(30, 2))
    frame = _frame(0.0, pts, resp=list(rng.uniform(size=30)))
    out = bin_features(frame, BinningMask.uniform(3, 4, 100))
    assert set(out.keypoints) == set(frame.keypoints)


def test_binning_masked_bottom_half(rng):
    pts = rng.uniform((0, 0), SIZE, size=(200, 2))
    frame = _frame(0.0, pts)
    allowed = np.array([[True] * 4] * 2 + [[False] * 4] * 2)
    out = bin_features(frame, BinningMask(allowed, np.full((4, 4), 1000)))
    assert out.keypoints and all(k.y < SIZE[1] / 2 for k in out.keypoints)


def test_binning_tie_break_and_bounds():
    frame = _frame(0.0, [(1, 1), (2, 2), (3, 3)], ids=[7, 3, 5], resp=[1.0, 1.0, 0.5])
    out = bin_features(frame, BinningMask.uniform(1, 1, 1))
    assert [k.track_id for k in out.keypoints] == [3]
    with pytest.raises(InvalidArgumentError):
        bin_features(_frame(0.0, [(SIZE[0], 0.0)]), BinningMask.uniform(1, 1, 1))
    with pytest.raises(InvalidArgumentError):
        BinningMask(np.ones((2, 2), bool), -np.ones((2, 2), int))


# --- NMS -------------------------------------------------------------------

def _kps(pts, resp=None):
    resp = [1.0] * len(pts) if resp is None else resp
    return [Keypoint(tuple(map(float, p)), float(r), i) for i, (p, r) in enumerate(zip(pts, resp))]


def test_nms_radius_basic_cases():
    a, b = _kps([(0, 0), (3, 0)], [1.0, 2.0])
    assert nms_radius([a, b], 5.0) == [b]
    assert nms_radius([a, b], 3.0) == [b, a]  # distance == radius is kept
    with pytest.raises(InvalidArgumentError):
        nms_radius([a], 0.0)


def test_nms_radius_matches_brute_force(rng):
    pts = rng.uniform((0, 0), (200, 200), size=(100, 2))
    kps = _kps(pts, np.round(rng.uniform(size=100), 2))
    for radius in (3.0, 10.0, 25.0, 60.0):
        ranked = sorted(kps, key=lambda k: (-k.response, k.track_id))
        ref = []
        for k in ranked:
            if all(math.dist(k.position, a.position) >= radius for a in ref):
                ref.append(k)
        assert nms_radius(kps, radius) == ref


def test_nms_adaptive_grid_of_100():
    kps = _kps([(10 + 20 * i, 10 + 20 * j) for i in range(10) for j in range(10)])
    out, radius = nms_adaptive_search(kps, 25, (200, 200))
    assert 25 <= len(out) <= 27
    dmin = min(math.dist(a.position, b.position) for a, b in itertools.combinations(out, 2))
    assert dmin >= radius > 0
    assert nms_adaptive(kps, 25, (200, 200)) == out


def test_nms_adaptive_trivial_cases():
    kps = _kps([(1, 1), (2, 2), (3, 3)])
    assert nms_adaptive(kps, 3, SIZE) == kps
    assert nms_adaptive(kps[:1], 10, SIZE) == kps[:1]
    assert nms_adaptive([], 5, SIZE) == []
    with pytest.raises(InvalidArgumentError):
        nms_adaptive(kps, 0, SIZE)


def test_nms_adaptive_on_coincident_points_falls_back_to_truncation():
    # no radius separates identical positions, so the count cannot land in range
    kps = _kps([(5, 5)] * 10 + [(100, 100)] * 10, list(range(20)))
    out, radius = nms_adaptive_search(kps, 5, SIZE)
    # every positive radius leaves 2 or 1 points, so the search ends at radius 0
    assert radius == 0.0
    assert out == sorted(kps, key=lambda k: (-k.response, k.track_id))[:5]
