import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvmotion.errors import AtInfinity, DegenerateInput, NoConsensus
from uvmotion.geometry import (
    PointPair,
    RobustConfig,
    apply_homography,
    estimate_homography_dlt,
    invert,
    pairs_to_arrays,
    robust_homography,
    translation,
)

from conftest import random_homography, rel_frobenius

CORNERS = np.array([[0.0, 0.0], [960.0, 0.0], [960.0, 540.0], [0.0, 540.0]])


def test_dlt_identity_from_corners():
    H = estimate_homography_dlt(CORNERS, CORNERS)
    np.testing.assert_allclose(H, np.eye(3), atol=1e-12)


def test_dlt_translation_is_exact():
    H = estimate_homography_dlt(CORNERS, CORNERS + [5.0, -3.0])
    np.testing.assert_allclose(H, translation(5, -3), atol=1e-10)


def test_dlt_recovers_known_homography(rng):
    for _ in range(20):
        H = random_homography(rng)
        src = rng.uniform([0, 0], [960, 540], (8, 2))
        dst = apply_homography(H, src)
        assert rel_frobenius(estimate_homography_dlt(src, dst), H) < 1e-6


def test_dlt_accepts_point_pairs():
    pairs = [PointPair(tuple(p), tuple(p + [1.0, 2.0])) for p in CORNERS]
    src, dst = pairs_to_arrays(pairs)
    np.testing.assert_allclose(estimate_homography_dlt(src, dst), translation(1, 2), atol=1e-10)


def test_dlt_rejects_too_few_and_collinear():
    with pytest.raises(DegenerateInput):
        estimate_homography_dlt(CORNERS[:3], CORNERS[:3])
    line = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(DegenerateInput):
        estimate_homography_dlt(line, line + 1)


def test_dlt_translation_equivariance(rng):
    H = random_homography(rng)
    src = rng.uniform([0, 0], [960, 540], (30, 2))
    dst = apply_homography(H, src) + rng.normal(0, 0.3, (30, 2))
    base = estimate_homography_dlt(src, dst)
    t = np.array([123.0, -45.0])
    moved = estimate_homography_dlt(src + t, dst + t)
    conj = translation(*t) @ base @ translation(*-t)
    np.testing.assert_allclose(moved, conj / conj[2, 2], atol=1e-8)


def test_apply_identity_and_translation():
    np.testing.assert_allclose(apply_homography(np.eye(3), (10, 20)), (10, 20))
    np.testing.assert_allclose(apply_homography(translation(3, 4), (0, 0)), (3, 4))


def test_apply_composition_matches_sequential(rng):
    A, B = random_homography(rng), random_homography(rng)
    pts = rng.uniform([0, 0], [960, 540], (50, 2))
    np.testing.assert_allclose(apply_homography(B @ A, pts),
                               apply_homography(B, apply_homography(A, pts)), atol=1e-9)


def test_apply_at_infinity():
    H = np.eye(3)
    H[2] = [1.0, 0.0, -5.0]
    with pytest.raises(AtInfinity):
        apply_homography(H, (5.0, 0.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_inverse_round_trip(seed):
    rng = np.random.default_rng(seed)
    H = random_homography(rng)
    pts = rng.uniform([0, 0], [960, 540], (20, 2))
    back = apply_homography(invert(H), apply_homography(H, pts))
    np.testing.assert_allclose(back, pts, atol=1e-9)


def test_robust_exact_matches_dlt(rng):
    H = random_homography(rng)
    src = rng.uniform([0, 0], [960, 540], (20, 2))
    dst = apply_homography(H, src)
    Hr, mask = robust_homography(src, dst, seed=1)
    assert mask.all()
    np.testing.assert_allclose(Hr, estimate_homography_dlt(src, dst), atol=1e-6)


def _contaminated(rng, n_in, n_out, noise):
    H = random_homography(rng)
    src = rng.uniform([0, 0], [960, 540], (n_in + n_out, 2))
    dst = apply_homography(H, src)
    dst[:n_in] += rng.normal(0, noise, (n_in, 2))
    dst[n_in:] = rng.uniform([0, 0], [960, 540], (n_out, 2))
    truth = np.zeros(n_in + n_out, bool)
    truth[:n_in] = True
    return H, src, dst, truth


def test_robust_recall_and_precision_over_trials():
    recalls, precisions = [], []
    for trial in range(100):
        rng = np.random.default_rng(trial)
        _, src, dst, truth = _contaminated(rng, 20, 10, 0.5)
        _, mask = robust_homography(src, dst, seed=trial)
        recalls.append((mask & truth).sum() / truth.sum())
        # outlier precision: fraction of pairs flagged as outliers that are real outliers
        flagged = ~mask
        precisions.append((flagged & ~truth).sum() / max(flagged.sum(), 1))
    assert np.mean(recalls) >= 0.95
    assert np.mean(precisions) >= 0.9


def test_robust_too_few_pairs():
    with pytest.raises(DegenerateInput):
        robust_homography(CORNERS[:3], CORNERS[:3])


def test_robust_no_consensus():
    # every minimal sample of collinear points is degenerate
    src = np.stack([np.arange(8.0), 2 * np.arange(8.0)], axis=1)
    with pytest.raises(NoConsensus):
        robust_homography(src, src + 1, RobustConfig(max_iterations=50))


def test_robust_permutation_invariant(rng):
    _, src, dst, _ = _contaminated(rng, 40, 20, 0.5)
    H1, m1 = robust_homography(src, dst, seed=7)
    perm = rng.permutation(len(src))
    H2, m2 = robust_homography(src[perm], dst[perm], seed=7)
    np.testing.assert_allclose(H1, H2, atol=1e-8)
    np.testing.assert_array_equal(m1[perm], m2)


def test_robust_config_validation():
    with pytest.raises(ValueError):
        RobustConfig(inlier_threshold=0)
    with pytest.raises(ValueError):
        RobustConfig(confidence=1.0)
