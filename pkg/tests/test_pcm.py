import numpy as np
import pytest

from robustpg.errors import ConfigurationError, InvalidArgumentError, TopologyError
from robustpg.factorgraph import LoopCandidate, NoiseModel
from robustpg.geometry import Pose2, Pose3
from robustpg.robustness import (IncrementalPcm, OdometryChain, PcmConfig, consistency_matrix,
                                 cycle_error, greedy_clique, max_clique, pcm_odometry_check,
                                 pcm_pairwise_consistent, pcm_select)
from robustpg.robustness.pcm import _compose_cov
from robustpg.synth import SynthConfig, generate

NM3 = NoiseModel.isotropic(3, 100.0)


def _straight_chain(n=10):
    return OdometryChain(list(range(n)), [Pose2(1.0, 0.0, 0.0)] * (n - 1))


def test_chain_between_composes_measurements(rng):
    steps = [Pose3.exp(rng.normal(scale=0.3, size=6)) for _ in range(8)]
    chain = OdometryChain(list("abcdefghi"), steps)
    M = np.eye(4)
    for s in steps[2:6]:
        M = M @ s.matrix()
    np.testing.assert_allclose(chain.between("c", "g").matrix(), M, atol=1e-12)
    np.testing.assert_allclose(chain.between("g", "c").matrix(), np.linalg.inv(M), atol=1e-12)
    with pytest.raises(TopologyError):
        chain.between("a", "z")


def test_chain_needs_one_measurement_per_step():
    with pytest.raises(InvalidArgumentError):
        OdometryChain([0, 1, 2], [Pose2()])


def test_threshold_semantics_require_both_rotation_and_translation():
    chain = _straight_chain()
    cfg = PcmConfig()
    exact = LoopCandidate(0, 5, Pose2(5.0, 0.0, 0.0), NM3)
    assert pcm_odometry_check(exact, chain, cfg)
    rot_only = LoopCandidate(0, 5, Pose2(5.0, 0.0, 0.011), NM3)
    trans_only = LoopCandidate(0, 5, Pose2(5.06, 0.0, 0.0), NM3)
    both_small = LoopCandidate(0, 5, Pose2(5.04, 0.0, 0.009), NM3)
    assert not pcm_odometry_check(rot_only, chain, cfg)
    assert not pcm_odometry_check(trans_only, chain, cfg)
    # z^-1 * odom leaves a pure 0.04 m offset next to the 0.009 rad error: both inside
    assert pcm_odometry_check(both_small, chain, cfg)
    assert pcm_odometry_check(LoopCandidate(0, 5, Pose2(5.04, 0.0, 0.0), NM3), chain, cfg)


def test_pairwise_test_is_symmetric(rng):
    chain = _straight_chain(20)
    cands = [LoopCandidate(int(i), int(j), Pose2(float(j - i) + rng.normal(scale=0.03),
                                                 rng.normal(scale=0.03), rng.normal(scale=0.006)), NM3)
             for i, j in [(0, 7), (2, 11), (5, 19), (3, 4), (10, 18)]]
    for a in cands:
        for b in cands:
            assert pcm_pairwise_consistent(a, b, chain) == pcm_pairwise_consistent(b, a, chain)
    A = consistency_matrix(cands, chain)
    assert np.array_equal(A, A.T) and not A.diagonal().any()


def test_cycle_error_is_identity_for_exact_loops(rng):
    steps = [Pose3.exp(rng.normal(scale=0.3, size=6)) for _ in range(12)]
    chain = OdometryChain(list(range(13)), steps)
    a = LoopCandidate(1, 9, chain.between(1, 9), NoiseModel.isotropic(6, 1.0))
    b = LoopCandidate(4, 12, chain.between(4, 12), NoiseModel.isotropic(6, 1.0))
    E, _ = cycle_error(a, b, chain)
    np.testing.assert_allclose(E.matrix(), np.eye(4), atol=1e-12)


def test_prefix_sum_covariance_matches_sequential_propagation(rng):
    for dim, pose_type in ((6, Pose3), (3, Pose2)):
        steps = [pose_type.exp(rng.normal(scale=0.4, size=dim)) for _ in range(15)]
        covs = []
        for _ in steps:
            A = rng.normal(size=(dim, dim))
            covs.append(0.01 * (A @ A.T + np.eye(dim)))
        chain = OdometryChain(list(range(16)), steps, covs)
        for lo, hi in [(0, 15), (3, 9), (7, 8), (5, 5)]:
            T, S = pose_type.identity(), np.zeros((dim, dim))
            for m in range(lo, hi):
                T, S = _compose_cov(T, S, steps[m], covs[m])
            T2, S2 = chain.between_with_cov(lo, hi)
            np.testing.assert_allclose(T2.matrix(), T.matrix(), atol=1e-12)
            np.testing.assert_allclose(S2, S, atol=1e-12)
            # reverse direction: covariance of the inverse, Ad(T) S Ad(T)^T
            Tr, Sr = chain.between_with_cov(hi, lo)
            Ad = T.adjoint()
            np.testing.assert_allclose(Sr, Ad @ S @ Ad.T, atol=1e-12)


def test_chain_from_graph_uses_consecutive_odometry():
    ds = generate(SynthConfig(num_poses=30, num_true_loops=3, external_odometry=False))
    g = ds.to_pose_graph("all")
    chain = OdometryChain.from_graph(g)
    assert chain.keys == list(range(30))
    np.testing.assert_allclose(chain.between(0, 29).matrix(), ds.composed_odometry()[29].matrix(), atol=1e-9)
    np.testing.assert_allclose(chain.covariances[0], np.linalg.inv(ds.odometry_noise.information))


def test_max_clique_known_graphs():
    assert max_clique(np.zeros((0, 0), bool)) == []
    assert max_clique(np.zeros((3, 3), bool)) == [0]
    A = np.ones((4, 4), bool) & ~np.eye(4, dtype=bool)
    assert max_clique(A) == [0, 1, 2, 3]
    # two triangles {0,1,2} and {3,4,5}: smallest lexicographic wins
    B = np.zeros((6, 6), bool)
    for p, q in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]:
        B[p, q] = B[q, p] = True
    assert max_clique(B) == [0, 1, 2]
    with pytest.raises(InvalidArgumentError):
        max_clique(np.array([[False, True], [False, False]]))
    with pytest.raises(InvalidArgumentError):
        max_clique(np.eye(2, dtype=bool))


def test_greedy_clique_is_a_lower_bound(rng):
    for _ in range(30):
        n = int(rng.integers(2, 25))
        U = np.triu(rng.uniform(size=(n, n)) < 0.5, 1)
        A = U | U.T
        g = greedy_clique(A)
        assert all(A[p, q] for p in g for q in g if p != q)
        assert len(g) <= len(max_clique(A))


def _pcm_dataset(mode="wrong-association", seed=0):
    return generate(SynthConfig(num_poses=120, num_true_loops=15, outlier_ratio=0.3, outlier_mode=mode,
                                sigma_rot=0.001, sigma_trans=0.005, external_odometry=False, seed=seed))


def test_threshold_pcm_keeps_only_true_loops_on_low_noise_data():
    ds = _pcm_dataset()
    chain = OdometryChain.from_graph(ds.to_pose_graph("none"))
    sel = pcm_select(ds.loop_candidates, chain, PcmConfig(rotation_threshold=0.05, translation_threshold=0.3))
    assert sel == sorted(sel)
    assert all(ds.loop_candidates[i].inlier for i in sel)
    assert len(sel) >= 5


def test_mahalanobis_pcm_separates_inliers():
    for mode in ("random-transform", "wrong-association"):
        ds = generate(SynthConfig(num_poses=150, num_true_loops=20, outlier_ratio=0.3, outlier_mode=mode,
                                  external_odometry=False, seed=4))
        chain = OdometryChain.from_graph(ds.to_pose_graph("none"))
        sel = pcm_select(ds.loop_candidates, chain, PcmConfig(mode="mahalanobis"))
        truth = [c.inlier for c in ds.loop_candidates]
        assert all(truth[i] for i in sel)
        assert len(sel) >= 0.8 * sum(truth)


def test_mahalanobis_mode_needs_covariances():
    chain = _straight_chain()
    with pytest.raises(ConfigurationError):
        pcm_odometry_check(LoopCandidate(0, 3, Pose2(3, 0, 0), NM3), chain, PcmConfig(mode="mahalanobis"))


def test_selection_is_independent_of_candidate_order(rng):
    ds = _pcm_dataset(seed=3)
    chain = OdometryChain.from_graph(ds.to_pose_graph("none"))
    cfg = PcmConfig(rotation_threshold=0.05, translation_threshold=0.3)
    cands = ds.loop_candidates
    ref = {id(cands[i]) for i in pcm_select(cands, chain, cfg)}
    for _ in range(5):
        perm = [cands[i] for i in rng.permutation(len(cands))]
        assert {id(perm[i]) for i in pcm_select(perm, chain, cfg)} == ref
        inc_cfg = PcmConfig(rotation_threshold=0.05, translation_threshold=0.3, use_incremental=True)
        assert {id(perm[i]) for i in pcm_select(perm, chain, inc_cfg)} == ref


def test_incremental_reports_after_each_insertion():
    chain = _straight_chain(20)
    inc = IncrementalPcm(chain)
    good = LoopCandidate(0, 10, Pose2(10.0, 0.0, 0.0), NM3)
    bad = LoopCandidate(2, 12, Pose2(3.0, 4.0, 1.0), NM3)
    assert inc.add(bad) == []
    assert inc.add(good) == [good]
    assert inc.inliers() == [good]


@pytest.mark.parametrize("kw", [dict(rotation_threshold=0.0), dict(translation_threshold=-1.0),
                                dict(mode="chi")])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        PcmConfig(**kw)
