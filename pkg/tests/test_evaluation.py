import math

import numpy as np
import pytest
import scipy.linalg

from kinmo.errors import EmptyMask, InsufficientSamples, InvalidCovariance
from kinmo.evaluation import (ControlReport, RetrievalProtocol, control_metrics,
                              diversity, fid, fid_from_features, gt_ranks, htma_s,
                              mm_dist, mmodality, r_precision, retrieval_report,
                              write_report)
from kinmo.motion import FEATURE_DIM, MotionSequence

from conftest import random_fk_motion


# -- retrieval --

def test_identity_dominant_matrix_perfect_retrieval():
    s = np.eye(5)
    t2m, m2t = retrieval_report(s)
    for rep in (t2m, m2t):
        assert rep.recall_at[1] == 100.0
        assert rep.med_rank == 1.0


def test_hand_three_by_three_ranks():
    s = np.array([
        [0.90, 0.10, 0.10],
        [0.95, 0.80, 0.10],
        [0.90, 0.95, 0.70],
    ])
    t2m, _ = retrieval_report(s)
    assert abs(t2m.recall_at[1] - 100.0 / 3.0) < 1e-9
    assert abs(t2m.recall_at[2] - 200.0 / 3.0) < 1e-9
    assert t2m.recall_at[3] == 100.0
    assert t2m.med_rank == 2.0


def test_rank_ties_break_toward_lower_index():
    s = np.array([[0.5, 0.5], [0.5, 0.5]])
    t2m, m2t = retrieval_report(s)
    # query 0's ground truth wins its tie, query 1's loses it
    assert t2m.recall_at[1] == 50.0
    assert m2t.recall_at[1] == 50.0


def test_ranks_match_brute_force_sorting_oracle():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(10, 10))
    ranks = gt_ranks(s, descending=True)
    for i in range(10):
        order = np.argsort(-s[i], kind="stable")
        assert ranks[i] == int(np.where(order == i)[0][0]) + 1


def test_recall_monotone_in_k():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(40, 40))
    t2m, m2t = retrieval_report(s)
    for rep in (t2m, m2t):
        ks = sorted(rep.recall_at)
        vals = [rep.recall_at[k] for k in ks]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert rep.med_rank >= 1.0


def test_all_threshold_trivial_when_everything_similar():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(6, 6))
    protocol = RetrievalProtocol("AllThreshold", threshold=0.8)
    t2m, m2t = retrieval_report(s, protocol, text_sims=np.ones((6, 6)))
    assert t2m.recall_at[1] == 100.0
    assert m2t.recall_at[1] == 100.0


def test_all_threshold_requires_text_sims():
    with pytest.raises(ValueError):
        retrieval_report(np.eye(4), RetrievalProtocol("AllThreshold"))


def test_dissimilar_subset_keeps_least_similar():
    n = 8
    sim = np.eye(n)
    text_sims = np.full((n, n), 0.1)
    np.fill_diagonal(text_sims, 1.0)
    text_sims[0, 1] = text_sims[1, 0] = 0.99   # items 0 and 1 near-duplicates
    protocol = RetrievalProtocol("DissimilarSubset", subset_size=6)
    t2m, _ = retrieval_report(sim, protocol, text_sims)
    assert t2m.recall_at[1] == 100.0
    with pytest.raises(InsufficientSamples):
        retrieval_report(np.eye(4), RetrievalProtocol("DissimilarSubset",
                                                      subset_size=6),
                         text_sims=np.ones((4, 4)))


def test_small_batches_pools_ranks():
    rng = np.random.default_rng(3)
    n = 12
    s = rng.normal(size=(n, n))
    np.fill_diagonal(s, 10.0)          # ground truth always wins
    protocol = RetrievalProtocol("SmallBatches", batch_size=4, seed=0)
    t2m, m2t = retrieval_report(s, protocol)
    assert t2m.recall_at[1] == 100.0 and m2t.med_rank == 1.0


def test_non_square_matrix_rejected():
    with pytest.raises(ValueError):
        retrieval_report(np.zeros((3, 4)))


# -- FID --

def test_fid_identical_moments_zero():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(50, 5))
    mu, cov = a.mean(axis=0), np.cov(a, rowvar=False)
    assert fid(mu, cov, mu, cov) <= 1e-8


def test_fid_one_dimensional_closed_form():
    # (mu1-mu2)^2 + (s1-s2)^2 in 1-D
    assert abs(fid([0.0], [[4.0]], [1.0], [[4.0]]) - 1.0) < 1e-12
    assert abs(fid([0.0], [[9.0]], [0.0], [[4.0]]) - 1.0) < 1e-12


def test_fid_matches_scipy_sqrtm_oracle():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(400, 5))
    b = rng.normal(size=(400, 5)) * 1.4 + 0.3
    mu1, c1 = a.mean(axis=0), np.cov(a, rowvar=False)
    mu2, c2 = b.mean(axis=0), np.cov(b, rowvar=False)
    ours = fid(mu1, c1, mu2, c2)
    covmean = scipy.linalg.sqrtm(c1 @ c2)
    oracle = float(((mu1 - mu2) ** 2).sum()
                   + np.trace(c1 + c2 - 2.0 * np.real(covmean)))
    assert abs(ours - oracle) / abs(oracle) < 1e-6


def test_fid_symmetric_under_swap():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(100, 4))
    b = rng.normal(size=(100, 4)) + 0.5
    f1 = fid_from_features(a, b)
    f2 = fid_from_features(b, a)
    assert abs(f1 - f2) <= 1e-8


def test_fid_rejects_asymmetric_covariance():
    cov = np.array([[1.0, 0.5], [0.1, 1.0]])
    with pytest.raises(InvalidCovariance):
        fid([0, 0], cov, [0, 0], np.eye(2))


# -- R-precision --

def test_r_precision_perfect_when_features_equal():
    rng = np.random.default_rng(7)
    f = rng.normal(size=(64, 6))
    top1, top2, top3 = r_precision(f, f, pool=32, seed=0)
    assert top1 == 1.0 and top2 == 1.0 and top3 == 1.0


def test_r_precision_random_features_near_chance():
    rng = np.random.default_rng(8)
    n = 32 * 1000
    t = rng.normal(size=(n, 8))
    m = rng.normal(size=(n, 8))
    top1, top2, top3 = r_precision(t, m, pool=32, seed=0)
    assert abs(top1 - 1.0 / 32.0) < 0.01
    assert top1 <= top2 <= top3


def test_r_precision_rotation_invariant():
    rng = np.random.default_rng(9)
    t = rng.normal(size=(64, 4))
    m = rng.normal(size=(64, 4))
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    base = r_precision(t, m, pool=32, seed=3)
    rotated = r_precision(t @ q.T, m @ q.T, pool=32, seed=3)
    assert np.allclose(base, rotated, atol=1e-12)


def test_r_precision_needs_enough_pairs():
    with pytest.raises(InsufficientSamples):
        r_precision(np.zeros((10, 3)), np.zeros((10, 3)), pool=32)


# -- MM-Dist / Diversity / MModality --

def test_mm_dist_zero_on_identical():
    f = np.random.default_rng(10).normal(size=(12, 5))
    assert mm_dist(f, f) == 0.0


def test_diversity_and_mmodality_degenerate_zero():
    f = np.ones((60, 4))
    assert diversity(f, d_pairs=30, seed=0) == 0.0
    assert mmodality(np.ones((5, 10, 4))) == 0.0


def test_diversity_hand_enumerated_pairs():
    feats = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0], [1.0, 0.0]])
    seed = 0
    perm = np.random.default_rng(seed).permutation(4)
    a, b = feats[perm[:2]], feats[perm[2:4]]
    expected = (math.hypot(*(a[0] - b[0])) + math.hypot(*(a[1] - b[1]))) / 2.0
    assert abs(diversity(feats, d_pairs=2, seed=seed) - expected) < 1e-12


def test_diversity_needs_enough_samples():
    with pytest.raises(InsufficientSamples):
        diversity(np.zeros((10, 3)), d_pairs=30)


def test_mmodality_all_pairs_mean():
    block = np.zeros((1, 3, 2))
    block[0, 1, 0] = 3.0
    block[0, 2, 1] = 4.0
    # pairwise distances: 3, 4, 5
    assert abs(mmodality(block) - 4.0) < 1e-12
    with pytest.raises(InsufficientSamples):
        mmodality(np.zeros((2, 1, 3)))


# -- control metrics --

def _paired_motions_with_height_errors(errors, frames=8):
    target = MotionSequence(np.zeros((frames, FEATURE_DIM), dtype=np.float32))
    pred = MotionSequence(np.zeros((frames, FEATURE_DIM), dtype=np.float32))
    mask = np.zeros((frames, 22), dtype=bool)
    for k, err in enumerate(errors):
        pred.features[k, 3] = err          # root height offset = position error
        mask[k, 0] = True
    return pred, target, mask


def test_control_metrics_zero_for_equal():
    pred, target, mask = _paired_motions_with_height_errors([0.0, 0.0])
    rep = control_metrics(pred, target, mask)
    assert (rep.traj_err, rep.loc_err, rep.avg_err) == (0.0, 0.0, 0.0)


def test_control_metrics_hand_arithmetic():
    pred, target, mask = _paired_motions_with_height_errors([0.6, 0.2])
    rep = control_metrics(pred, target, mask, threshold=0.5)
    assert rep.traj_err == 1.0
    assert rep.loc_err == 0.5
    assert abs(rep.avg_err - 0.4) < 1e-6


def test_control_metrics_threshold_to_infinity():
    pred, target, mask = _paired_motions_with_height_errors([0.6, 0.2])
    rep = control_metrics(pred, target, mask, threshold=1e9)
    assert rep.traj_err == 0.0 and rep.loc_err == 0.0


def test_control_metrics_order_invariant():
    rng = np.random.default_rng(11)
    preds, targets, masks = [], [], []
    for _ in range(4):
        preds.append(random_fk_motion(rng, frames=10))
        targets.append(random_fk_motion(rng, frames=10))
        mask = rng.random((10, 22)) < 0.3
        mask[0, 0] = True
        masks.append(mask)
    base = control_metrics(preds, targets, masks, threshold=0.5)
    order = [2, 0, 3, 1]
    shuffled = control_metrics([preds[i] for i in order],
                               [targets[i] for i in order],
                               [masks[i] for i in order], threshold=0.5)
    assert base.traj_err == shuffled.traj_err
    assert abs(base.loc_err - shuffled.loc_err) < 1e-12
    assert abs(base.avg_err - shuffled.avg_err) < 1e-12


def test_control_metrics_empty_mask_raises():
    pred, target, _ = _paired_motions_with_height_errors([0.0])
    with pytest.raises(EmptyMask):
        control_metrics(pred, target, np.zeros((8, 22), dtype=bool))


# -- HTMA-S --

class _FixedEmbedder:
    def __init__(self, z_text, z_motion):
        self.z_text, self.z_motion = z_text, z_motion

    def embed_text(self, annotation, level):
        assert level == "global"
        return self.z_text

    def embed_motion(self, motion):
        return self.z_motion


def test_htma_s_extremes():
    m = random_fk_motion(np.random.default_rng(12))
    same = np.array([1.0, 2.0, 3.0])
    assert abs(htma_s(m, "anything", _FixedEmbedder(same, same)) - 1.0) < 1e-12
    ortho = _FixedEmbedder(np.array([1.0, 0.0]), np.array([0.0, 2.0]))
    assert abs(htma_s(m, "anything", ortho)) < 1e-12


def test_htma_s_trained_model_prefers_matching_caption(toy8, align8):
    wins = 0
    for i in range(8):
        j = (i + 5) % 8
        own = htma_s(toy8[i].motion, toy8[i].annotation.global_texts[0], align8)
        other = htma_s(toy8[i].motion, toy8[j].annotation.global_texts[0], align8)
        assert -1.0 <= own <= 1.0
        wins += own > other
    assert wins >= 7


def test_write_report_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    values = {"FID": 0.125, "R@1": 50.0}
    write_report(p1, values, metadata={"n": 4})
    write_report(p2, dict(reversed(values.items())), metadata={"n": 4})
    assert p1.read_bytes() == p2.read_bytes()
