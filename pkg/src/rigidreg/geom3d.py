"""Rotation parameterizations, rigid-transform algebra and pose error metrics.

Conventions: a transform maps a point of the first scan into the second,
``q = R p + t``. Quaternions are ``(w, x, y, z)`` in the Hamilton convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SMALL_ANGLE = 1e-7
SO3_TOL = 1e-6


class GeometryError(ValueError):
    """Raised for inputs outside an operation's domain."""


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def so3_defect(R: np.ndarray) -> tuple[float, float]:
    """Return (||R^T R - I||_F, |det R - 1|)."""
    R = np.asarray(R, dtype=float)
    return (float(np.linalg.norm(R.T @ R - np.eye(3))),
            float(abs(np.linalg.det(R) - 1.0)))


def is_rotation(R: np.ndarray, tol: float = SO3_TOL) -> bool:
    R = np.asarray(R)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    ortho, det = so3_defect(R)
    return ortho <= tol and det <= tol


def _check_rotation(R: np.ndarray, name: str = "R") -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if not is_rotation(R):
        raise GeometryError(f"{name} is not a rotation matrix within {SO3_TOL}")
    return R


@dataclass(frozen=True)
class RigidTransform:
    """Rotation ``R`` (3x3) and translation ``t`` (3,), acting as ``p -> R p + t``.

    The constructor accepts rotations within 1e-6 of SO(3) so that transforms
    read back from single-precision storage are still valid.
    """

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        t = np.array(self.t, dtype=float).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise GeometryError("t must be a finite 3-vector")
        _check_rotation(R)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> RigidTransform:
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def __call__(self, p: np.ndarray) -> np.ndarray:
        return apply(self, p)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Exponential map from an axis-angle vector (radians) to a rotation matrix."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta2 = float(omega @ omega)
    theta = np.sqrt(theta2)
    K = skew(omega)
    if theta < SMALL_ANGLE:
        # second-order series; sin(x)/x ~ 1, (1 - cos x)/x^2 ~ 1/2
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Logarithm map, inverse of :func:`so3_exp`.

    At an angle of exactly pi the axis sign is not unique; any valid axis is
    returned.
    """
    R = _check_rotation(R)
    c = (np.trace(R) - 1.0) / 2.0
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * float(np.linalg.norm(w))
    theta = float(np.arctan2(s, c))
    if theta < SMALL_ANGLE:
        return 0.5 * w
    if np.pi - theta > 1e-3:
        return theta / (2.0 * s) * w
    # near pi the antisymmetric part vanishes; recover the axis from the
    # symmetric part, (R + R^T)/2 = c I + (1 - c) k k^T
    K = ((R + R.T) / 2.0 - c * np.eye(3)) / (1.0 - c)
    col = int(np.argmax(np.diag(K)))
    axis = K[:, col] / np.linalg.norm(K[:, col])
    if axis @ w < 0:
        axis = -axis
    return theta * axis


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of quaternion ``(w, x, y, z)``; ``q`` need not be unit."""
    q = np.asarray(q, dtype=float).reshape(4)
    n = float(np.linalg.norm(q))
    if not np.isfinite(n) or n <= 1e-12:
        raise GeometryError("quaternion norm too small")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def axis_angle_to_quat(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = float(np.linalg.norm(omega))
    if theta < SMALL_ANGLE:
        return np.array([1.0, *(0.5 * omega)])
    axis = omega / theta
    return np.array([np.cos(theta / 2), *(np.sin(theta / 2) * axis)])


def project_to_so3(A: np.ndarray) -> np.ndarray:
    """Nearest rotation (Frobenius) to a full-rank 3x3 matrix."""
    A = np.asarray(A, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(A)):
        raise GeometryError("matrix has non-finite entries")
    U, s, Vt = np.linalg.svd(A)
    if s[-1] <= 1e-9:
        raise GeometryError(f"rank-deficient matrix (smallest singular value {s[-1]:.3g})")
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def linear9_to_rot(m: np.ndarray) -> np.ndarray:
    """Nine unconstrained values (row-major 3x3) projected onto SO(3)."""
    m = np.asarray(m, dtype=float)
    if m.size != 9:
        raise GeometryError("expected 9 values")
    return project_to_so3(m.reshape(3, 3))


def rot_error(R: np.ndarray, R_gt: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    R = _check_rotation(R)
    R_gt = _check_rotation(R_gt, "R_gt")
    M = R.T @ R_gt
    c = (np.trace(M) - 1.0) / 2.0
    # atan2 form of arccos(c): keeps full precision near 0 and 180 degrees
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(np.degrees(np.arctan2(s, c)))


def trans_error(t: np.ndarray, t_gt: np.ndarray) -> float:
    """Euclidean distance between translations (meters)."""
    return float(np.linalg.norm(np.asarray(t, dtype=float) - np.asarray(t_gt, dtype=float)))


def apply(T: RigidTransform, p: np.ndarray) -> np.ndarray:
    """Apply ``T`` to a point (3,) or to a row-stacked cloud (N, 3)."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return T.R @ p + T.t
    return p @ T.R.T + T.t


def compose(T2: RigidTransform, T1: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``T1`` first, then ``T2``."""
    return RigidTransform(T2.R @ T1.R, T2.R @ T1.t + T2.t)


def chain(pairwise: Sequence[RigidTransform]) -> list[RigidTransform]:
    """Cumulative poses: element i is pairwise[i] composed onto element i-1."""
    if len(pairwise) == 0:
        raise GeometryError("chain needs at least one transform")
    out = [pairwise[0]]
    for T in pairwise[1:]:
        out.append(compose(T, out[-1]))
    return out


def random_rotation(rng: np.random.Generator, max_angle_deg: float = 180.0,
                    angle_deg: float | None = None) -> np.ndarray:
    """Rotation about a uniformly random axis.

    The angle is uniform in ``[0, max_angle_deg]`` unless ``angle_deg`` fixes it.
    """
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    if angle_deg is None:
        angle_deg = rng.uniform(0.0, max_angle_deg)
    return so3_exp(np.radians(angle_deg) * axis)
