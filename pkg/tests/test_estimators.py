import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exhaustive_ransac, horn_fit
from rigidreg.data import GenConfig, gen_pair
from rigidreg.estimators import (CorrespondenceSet, DegenerateError, EstimationError, icp,
                                 icp_trace, procrustes, ransac, ransac_full, threshold_classify,
                                 umeyama)
from rigidreg.geom3d import RigidTransform, random_rotation, rot_error, so3_exp


def clean_pair(rng, n=20, angle=None):
    P = rng.uniform(-1, 1, size=(n, 3))
    R = random_rotation(rng, 180 if angle is None else angle)
    t = rng.normal(size=3)
    return CorrespondenceSet(P, P @ R.T + t, gt=RigidTransform(R, t))


def assert_close(T, R, t, tol=1e-9):
    assert np.linalg.norm(T.R - R) < tol
    assert np.linalg.norm(T.t - t) < tol


# -------------------------------------------------------------- data types

def test_correspondence_set_validation():
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((4, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        CorrespondenceSet(np.full((4, 3), np.nan), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((4, 3)), np.zeros((4, 3)), labels=[0, 1, 2, 0])


# -------------------------------------------------------------- procrustes

def test_procrustes_identity():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(10, 3))
    T = procrustes(CorrespondenceSet(P, P), np.full(10, 0.5))
    assert_close(T, np.eye(3), np.zeros(3), 1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_procrustes_and_umeyama_exact_on_clean(seed):
    rng = np.random.default_rng(seed)
    c = clean_pair(rng)
    assert_close(procrustes(c, np.full(20, 0.5)), c.gt.R, c.gt.t)
    assert_close(umeyama(c, np.ones(20, bool)), c.gt.R, c.gt.t)


@pytest.mark.parametrize("seed", range(10))
def test_procrustes_zero_weight_outliers(seed):
    rng = np.random.default_rng(seed)
    c = clean_pair(rng)
    Q = c.Q.copy()
    Q[:8] += rng.uniform(1, 5, size=(8, 3))
    w = np.full(20, 0.7)
    w[:8] = 0
    T = procrustes(CorrespondenceSet(c.P, Q), w)
    assert_close(T, c.gt.R, c.gt.t)


@pytest.mark.parametrize("seed", range(10))
def test_procrustes_matches_horn_oracle(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(30, 3))
    Q = rng.normal(size=(30, 3))
    w = rng.uniform(0, 0.99, size=30)
    T = procrustes(CorrespondenceSet(P, Q), w)
    R, t = horn_fit(P, Q, w)
    assert_close(T, R, t, 1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_procrustes_rotation_equivariance(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(15, 3))
    Q = P @ random_rotation(rng).T + rng.normal(scale=0.05, size=(15, 3))
    w = rng.uniform(0.1, 0.9, size=15)
    S = random_rotation(rng)
    R0 = procrustes(CorrespondenceSet(P, Q), w).R
    R1 = procrustes(CorrespondenceSet(P, Q @ S.T), w).R
    assert np.linalg.norm(R1 - S @ R0) < 1e-9


def test_procrustes_degenerate():
    P = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateError):
        procrustes(CorrespondenceSet(P, P + 1), np.full(5, 0.5))
    rng = np.random.default_rng(0)
    c = clean_pair(rng)
    w = np.zeros(20)
    w[:2] = 0.5
    with pytest.raises(DegenerateError):
        procrustes(c, w)
    with pytest.raises(ValueError):
        procrustes(c, np.ones(20))


def test_umeyama_cases():
    rng = np.random.default_rng(1)
    c = clean_pair(rng, 40)
    Q = c.Q.copy()
    Q[20:] = rng.uniform(-3, 3, size=(20, 3))
    mask = np.arange(40) < 20
    assert_close(umeyama(CorrespondenceSet(c.P, Q), mask), c.gt.R, c.gt.t)
    three = np.zeros(40, bool)
    three[:3] = True
    assert_close(umeyama(c, three), c.gt.R, c.gt.t)
    with pytest.raises(EstimationError):
        umeyama(c, np.arange(40) < 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_umeyama_equals_binary_procrustes(seed):
    rng = np.random.default_rng(seed)
    P, Q = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
    mask = rng.random(12) < 0.6
    mask[:4] = True
    c = CorrespondenceSet(P, Q)
    A = umeyama(c, mask)
    B = procrustes(c, 0.5 * mask)
    assert np.abs(A.R - B.R).max() < 1e-12 and np.abs(A.t - B.t).max() < 1e-12


# ------------------------------------------------------------------ ransac

def test_ransac_clean_ten_points():
    rng = np.random.default_rng(2)
    c = clean_pair(rng, 10)
    T, mask = ransac(c, 0.01, 100, seed=0)
    assert mask.all()
    assert_close(T, c.gt.R, c.gt.t)


def ten_with_three_outliers(seed, thr=0.01):
    rng = np.random.default_rng(seed)
    c = clean_pair(rng, 10)
    Q = c.Q.copy()
    d = rng.normal(size=(3, 3))
    Q[7:] += d / np.linalg.norm(d, axis=1, keepdims=True) * rng.uniform(20 * thr, 1.0, size=(3, 1))
    labels = (np.arange(10) < 7).astype(np.uint8)
    return CorrespondenceSet(c.P, Q, labels, c.gt)


@pytest.mark.parametrize("seed", range(50))
def test_ransac_matches_exhaustive_oracle(seed):
    c = ten_with_three_outliers(seed)
    T, mask = ransac(c, 0.01, 1000, seed=seed)
    R, t, omask = exhaustive_ransac(c.P, c.Q, 0.01)
    assert np.array_equal(mask, omask)
    assert np.array_equal(mask, c.labels.astype(bool))
    assert_close(T, R, t, 1e-9)


def test_ransac_deterministic_and_seeded():
    c = ten_with_three_outliers(3)
    noisy = CorrespondenceSet(c.P, c.Q + np.random.default_rng(0).normal(scale=0.003, size=c.Q.shape))
    a = ransac_full(noisy, 0.01, 50, seed=7)
    b = ransac_full(noisy, 0.01, 50, seed=7)
    assert np.array_equal(a.inliers, b.inliers)
    assert np.array_equal(a.transform.R, b.transform.R)


def test_ransac_large_synthetic():
    cfg = GenConfig(n=3000, outlier_fraction=0.5, max_rotation_deg=30)
    pair, _ = gen_pair(cfg, 0)
    T, mask = ransac(pair, 0.014, 1000, seed=0)
    assert rot_error(T.R, pair.gt.R) < 0.5


def test_ransac_errors():
    c = ten_with_three_outliers(0)
    with pytest.raises(ValueError):
        ransac(c, 0.0)
    with pytest.raises(ValueError):
        ransac(c, 0.01, max_iters=0)
    rng = np.random.default_rng(0)
    P = rng.normal(size=(6, 3))
    Q = rng.normal(size=(6, 3)) * 100
    with pytest.raises(EstimationError):
        ransac(CorrespondenceSet(P, Q), 1e-6, 20)


def test_ransac_skips_collinear_triples():
    rng = np.random.default_rng(4)
    P = np.vstack([np.outer(np.linspace(0, 1, 6), [1, 1, 0]), rng.normal(size=(4, 3))])
    R = random_rotation(rng)
    c = CorrespondenceSet(P, P @ R.T)
    res = ransac_full(c, 0.01, 200, seed=1)
    assert res.inliers.all()
    assert np.linalg.norm(res.transform.R - R) < 1e-9


# ------------------------------------------------------------------ icp

def test_icp_identity_one_iteration():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    T, hist = icp_trace(X, X)
    assert_close(T, np.eye(3), np.zeros(3), 1e-12)
    assert len(hist) <= 2


def test_icp_recovers_small_motion():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, size=(400, 3))
    R = so3_exp(np.radians(5) * np.array([0.0, 0.6, 0.8]))
    t = np.array([0.02, -0.01, 0.015])
    T = icp(X, X @ R.T + t, max_iters=100, convergence_tol=1e-10)
    assert rot_error(T.R, R) < 0.1
    assert np.linalg.norm(T.t - t) < 1e-3


def test_icp_far_clouds_terminates():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 3))
    Y = rng.normal(size=(30, 3)) + 100
    T, hist = icp_trace(X, Y, max_iters=5)
    assert len(hist) <= 6
    assert np.all(np.diff(hist) <= 0)


@pytest.mark.parametrize("seed", range(5))
def test_icp_monotone_and_never_worse(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(100, 3))
    Y = X @ random_rotation(rng, 40).T + rng.normal(scale=0.3, size=3)
    T0 = RigidTransform(random_rotation(rng, 20), rng.normal(scale=0.1, size=3))
    T, hist = icp_trace(X, Y, T0)
    assert np.all(np.diff(hist) <= 0)
    assert hist[-1] <= hist[0]


def test_icp_errors():
    with pytest.raises(EstimationError):
        icp(np.zeros((0, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        icp(np.zeros((5, 3)), np.zeros((5, 3)), convergence_tol=0)


# ------------------------------------------------------------ classification

def test_threshold_classify():
    assert threshold_classify(np.array([0.9, 0.1]), 0.5).tolist() == [True, False]
    assert not threshold_classify(np.zeros(5), 0.5).any()
    rng = np.random.default_rng(0)
    w = rng.random(100) * 0.999
    for tau in (0.0, 0.3, 0.77):
        assert np.array_equal(threshold_classify(w, tau), np.array([x >= tau for x in w]))
    with pytest.raises(ValueError):
        threshold_classify(w, 1.0)
