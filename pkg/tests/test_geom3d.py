import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from rigidreg.geom3d import (GeometryError, RigidTransform, apply, chain, compose, is_rotation,
                             linear9_to_rot, project_to_so3, quat_to_rot, random_rotation,
                             rot_error, so3_exp, so3_log, trans_error)

RZ90 = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])


def quat_oracle(omega):
    """Axis-angle -> unit quaternion -> matrix, written out independently."""
    theta = np.linalg.norm(omega)
    if theta == 0:
        return np.eye(3)
    x, y, z = np.sin(theta / 2) * omega / theta
    w = np.cos(theta / 2)
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def rand_transform(rng):
    return RigidTransform(random_rotation(rng), rng.normal(size=3))


vec3 = st.lists(st.floats(-1, 1), min_size=3, max_size=3).map(np.array)


# ------------------------------------------------------------------ so3_exp

def test_exp_zero_is_identity():
    assert np.array_equal(so3_exp(np.zeros(3)), np.eye(3))


def test_exp_z_quarter_turn():
    assert np.allclose(so3_exp([0, 0, np.pi / 2]), RZ90, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_exp_matches_quaternion_oracle(seed):
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    omega = axis * rng.uniform(0, np.pi - 0.1)
    assert np.abs(so3_exp(omega) - quat_oracle(omega)).max() < 1e-9


def test_exp_small_angle_series_is_continuous():
    axis = np.array([0.6, -0.8, 0.0])
    for theta in (1e-9, 5e-8, 1e-7, 2e-7, 1e-6):
        assert np.abs(so3_exp(theta * axis) - quat_oracle(theta * axis)).max() < 1e-15


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0, 2 * np.pi))
def test_exp_always_rotation(direction, angle):
    d = np.array(direction)
    n = np.linalg.norm(d)
    omega = d / n * angle if n > 1e-6 else np.zeros(3)
    R = so3_exp(omega)
    assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-9
    assert abs(np.linalg.det(R) - 1) < 1e-9


# ------------------------------------------------------------------ so3_log

def test_log_identity():
    assert np.array_equal(so3_log(np.eye(3)), np.zeros(3))


def test_log_round_trip_example():
    w = np.array([0.3, -0.2, 0.1])
    assert np.abs(so3_log(so3_exp(w)) - w).max() < 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_log_near_pi_matches_eigenvector_axis(seed):
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.pi - 1e-2
    R = so3_exp(axis * angle)
    # oracle axis: eigenvector of R for eigenvalue 1, sign fixed by the skew part
    vals, vecs = np.linalg.eig(R)
    a = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    skew_part = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    a *= np.sign(a @ skew_part)
    assert np.abs(so3_log(R) - a * angle).max() < 1e-6


def test_log_rejects_non_rotation():
    with pytest.raises(GeometryError):
        so3_log(np.diag([1.0, 1.0, 1.1]))


@settings(max_examples=200, deadline=None)
@given(vec3, st.floats(0, np.pi - 1e-3))
@example(np.array([0.0, 1.0, 1.0]), np.pi - 1e-3)
@example(np.array([1.0, -2.0, 0.5]), np.pi - 1e-7)
def test_exp_log_identity(direction, angle):
    n = np.linalg.norm(direction)
    if n < 1e-6:
        return
    R = so3_exp(direction / n * angle)
    assert np.linalg.norm(so3_exp(so3_log(R)) - R) < 1e-8


def test_log_at_pi_returns_valid_axis():
    R = so3_exp(np.array([0.0, 0.0, np.pi]))
    w = so3_log(R)
    assert abs(np.linalg.norm(w) - np.pi) < 1e-9
    assert np.linalg.norm(so3_exp(w) - R) < 1e-9


# ---------------------------------------------------------------- quaternion

def test_quat_identity_and_quarter_turn():
    assert np.allclose(quat_to_rot([1, 0, 0, 0]), np.eye(3), atol=1e-15)
    c = math.cos(math.pi / 4)
    assert np.allclose(quat_to_rot([c, 0, 0, c]), RZ90, atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_quat_consistent_with_exp(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    half = math.acos(np.clip(q[0], -1, 1))
    omega = 2 * half * q[1:] / np.linalg.norm(q[1:])
    assert np.abs(quat_to_rot(q) - so3_exp(omega)).max() < 1e-9
    assert np.abs(quat_to_rot(-q) - quat_to_rot(q)).max() < 1e-15
    assert np.abs(quat_to_rot(3.7 * q) - quat_to_rot(q)).max() < 1e-12


def test_quat_rejects_zero():
    with pytest.raises(GeometryError):
        quat_to_rot([0, 0, 0, 1e-13])


# ------------------------------------------------------------------ linear 9

def test_linear9_fixed_points():
    R = so3_exp([0.4, -1.0, 0.2])
    assert np.abs(linear9_to_rot(R.ravel()) - R).max() < 1e-9
    assert np.abs(linear9_to_rot(2 * np.eye(3).ravel()) - np.eye(3)).max() < 1e-12


def test_linear9_rejects_rank_deficient():
    with pytest.raises(GeometryError):
        linear9_to_rot(np.diag([1.0, 1.0, 0.0]).ravel())


@pytest.mark.parametrize("seed", range(5))
def test_linear9_is_frobenius_minimizer(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    R = linear9_to_rot(A.ravel())
    assert is_rotation(R)
    best = np.linalg.norm(A - R)
    for _ in range(2000):
        Rp = so3_exp(rng.normal(scale=0.05, size=3)) @ R
        assert np.linalg.norm(A - Rp) >= best - 1e-12


@settings(max_examples=50, deadline=None)
@given(vec3, st.floats(1e-3, 1e3))
def test_linear9_scale_invariant(w, s):
    R = so3_exp(w)
    assert np.abs(linear9_to_rot((s * R).ravel()) - linear9_to_rot(R.ravel())).max() < 1e-9


def test_project_handles_reflection():
    R = project_to_so3(np.diag([1.0, 1.0, -1.0]))
    assert abs(np.linalg.det(R) - 1) < 1e-12


# ------------------------------------------------------------------ metrics

def test_rot_error_examples():
    assert rot_error(RZ90, RZ90) == 0
    for deg in (1.0, 30.0, 90.0, 179.0):
        Rz = so3_exp([0, 0, math.radians(deg)])
        assert abs(rot_error(np.eye(3), Rz) - deg) < 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_rot_error_matches_log_oracle_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    R1, R2 = random_rotation(rng), random_rotation(rng, max_angle_deg=170)
    oracle = math.degrees(np.linalg.norm(so3_log(R1.T @ R2)))
    assert abs(rot_error(R1, R2) - oracle) < 1e-9
    assert abs(rot_error(R1, R2) - rot_error(R2, R1)) < 1e-9


def test_rot_error_clamps():
    # tiny round-off above 1 in the acos argument must not produce nan
    R = np.eye(3) * (1 + 1e-12)
    assert rot_error(R, np.eye(3)) == 0.0 or rot_error(R, np.eye(3)) < 1e-4


def test_trans_error():
    assert trans_error([1, 2, 3], [1, 2, 3]) == 0
    assert trans_error([1, 0, 0], [0, 0, 0]) == 1.0
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=3), rng.normal(size=3)
    assert abs(trans_error(a, b) - math.sqrt(sum((a[i] - b[i]) ** 2 for i in range(3)))) < 1e-15


# --------------------------------------------------------------- transforms

def test_rigid_transform_validates():
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(GeometryError):
        RigidTransform(np.eye(3), np.zeros(2))


def test_apply_examples():
    rng = np.random.default_rng(1)
    p = rng.normal(size=3)
    assert np.array_equal(apply(RigidTransform.identity(), p), p)
    assert np.allclose(apply(RigidTransform(RZ90, np.zeros(3)), [1, 0, 0]), [0, 1, 0], atol=1e-15)
    T = rand_transform(rng)
    oracle = [sum(T.R[i, j] * p[j] for j in range(3)) + T.t[i] for i in range(3)]
    assert np.abs(apply(T, p) - oracle).max() < 1e-12
    pts = rng.normal(size=(5, 3))
    assert np.abs(apply(T, pts) - np.array([apply(T, x) for x in pts])).max() < 1e-12


def test_compose_examples():
    rng = np.random.default_rng(2)
    T = rand_transform(rng)
    C = compose(RigidTransform.identity(), T)
    assert np.abs(C.R - T.R).max() < 1e-15 and np.abs(C.t - T.t).max() < 1e-15
    I = compose(T.inverse(), T)
    assert np.abs(I.R - np.eye(3)).max() < 1e-9 and np.abs(I.t).max() < 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_compose_pointwise_and_associative(seed):
    rng = np.random.default_rng(seed)
    T1, T2, T3 = (rand_transform(rng) for _ in range(3))
    p = rng.normal(size=3)
    assert np.abs(apply(compose(T2, T1), p) - apply(T2, apply(T1, p))).max() < 1e-9
    A = compose(T3, compose(T2, T1))
    B = compose(compose(T3, T2), T1)
    assert np.abs(A.R - B.R).max() < 1e-9 and np.abs(A.t - B.t).max() < 1e-9


def test_chain_examples():
    rng = np.random.default_rng(3)
    T = rand_transform(rng)
    (only,) = chain([T])
    assert only is T
    out = chain([T, T.inverse()])
    assert np.abs(out[1].R - np.eye(3)).max() < 1e-9 and np.abs(out[1].t).max() < 1e-9
    with pytest.raises(GeometryError):
        chain([])


def test_chain_matches_fold():
    rng = np.random.default_rng(4)
    Ts = [rand_transform(rng) for _ in range(5)]
    out = chain(Ts)
    for i in range(5):
        M = np.eye(4)
        for T in Ts[:i + 1]:
            M = T.matrix() @ M
        assert np.abs(out[i].matrix() - M).max() < 1e-9


def test_random_rotation_angle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        assert rot_error(random_rotation(rng, 30), np.eye(3)) <= 30 + 1e-9
    R = random_rotation(rng, angle_deg=12.5)
    assert abs(rot_error(R, np.eye(3)) - 12.5) < 1e-9
