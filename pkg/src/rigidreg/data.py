"""Synthetic correspondence sets, inlier labelling, curriculum augmentation and dataset files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .estimators import CorrespondenceSet
from .geom3d import RigidTransform, compose, random_rotation, so3_exp

MAGIC = b"3DRG"
VERSION = 1
MIN_THRESHOLD = 1e-9


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    """Parameters of the synthetic pair generator (lengths in meters, angles in degrees)."""

    pairs: int = 2000
    n: int = 256
    outlier_fraction: float = 0.5
    max_rotation_deg: float = 30.0
    max_translation: float = 0.5
    noise_sigma: float = 0.005
    outlier_min: float = 0.1
    outlier_max: float = 1.0
    label_threshold: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if self.n < 3 or self.pairs < 0:
            raise ValueError("need n >= 3 and pairs >= 0")
        if self.max_rotation_deg < 0 or self.max_translation < 0 or self.noise_sigma < 0:
            raise ValueError("bounds must be non-negative")
        if not 0 < self.outlier_min <= self.outlier_max or self.label_threshold <= 0:
            raise ValueError("outlier range and label threshold must be positive")


def pair_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def gen_pair(config: GenConfig, index: int) -> tuple[CorrespondenceSet, np.ndarray]:
    """One synthetic pair and its generator-side inlier mask."""
    rng = pair_rng(config.seed, index)
    n = config.n
    P = rng.uniform(-0.5, 0.5, size=(n, 3))
    R = random_rotation(rng, config.max_rotation_deg)
    t = _unit_vectors(rng, 1)[0] * rng.uniform(0.0, config.max_translation)
    gt = RigidTransform(R, t)
    Q = P @ R.T + t + rng.normal(scale=config.noise_sigma, size=(n, 3)) if config.noise_sigma > 0 \
        else P @ R.T + t
    n_out = int(round(config.outlier_fraction * n))
    outliers = rng.permutation(n)[:n_out]
    radius = rng.uniform(config.outlier_min, config.outlier_max, size=n_out)
    Q[outliers] = P[outliers] @ R.T + t + _unit_vectors(rng, n_out) * radius[:, None]
    inlier = np.ones(n, dtype=bool)
    inlier[outliers] = False
    pair = CorrespondenceSet(P, Q, None, gt, index)
    pair.labels = label_inliers(pair, gt, config.label_threshold)
    return pair, inlier


def gen_synthetic(config: GenConfig) -> list[CorrespondenceSet]:
    """Generate ``config.pairs`` labelled pairs; pair ``k`` depends only on (seed, k)."""
    return [gen_pair(config, k)[0] for k in range(config.pairs)]


def label_inliers(corrs: CorrespondenceSet, gt: RigidTransform, dist_threshold: float) -> np.ndarray:
    """``1`` where ``|q - (R p + t)| < dist_threshold`` under the ground truth."""
    if gt is None:
        raise ValueError("labelling needs a ground-truth transform")
    r = np.linalg.norm(corrs.Q - (corrs.P @ gt.R.T + gt.t), axis=1)
    return (r < dist_threshold).astype(np.uint8)


def calibrate_threshold(corrs_list: Sequence[CorrespondenceSet], gt_list: Sequence[RigidTransform],
                        target_fraction: float, tol: float = 0.01, max_iter: int = 50) -> float:
    """Distance threshold whose global outlier fraction is within ``tol`` of the target.

    Bisection over ``[1e-9, 2 max residual + 1e-9]``; a threshold below a
    nanometre is not considered meaningful.
    """
    if len(corrs_list) == 0 or len(corrs_list) != len(gt_list):
        raise ValueError("need a non-empty list of pairs with matching ground truth")
    res = np.concatenate([np.linalg.norm(c.Q - (c.P @ g.R.T + g.t), axis=1)
                          for c, g in zip(corrs_list, gt_list)])

    def outlier_fraction(thr):
        return float(np.mean(res >= thr))

    lo, hi = MIN_THRESHOLD, 2.0 * float(res.max()) + MIN_THRESHOLD
    mid = hi
    for _ in range(max_iter):
        f = outlier_fraction(mid)
        if abs(f - target_fraction) <= tol:
            return mid
        # fraction decreases as the threshold grows
        if f > target_fraction:
            lo = mid
        else:
            hi = mid
        mid = 0.5 * (lo + hi)
    f = outlier_fraction(mid)
    if abs(f - target_fraction) <= tol:
        return mid
    raise ValueError(f"outlier fraction {target_fraction} unattainable (closest {f:.4f})")


def curriculum_theta(tau: float, theta_max: float) -> float:
    """Tent schedule: 0 at tau=0, theta_max at tau=0.5, back to 0 at tau=1."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return float(theta_max * (1.0 - abs(2.0 * tau - 1.0)))


def augment_pair(pair: CorrespondenceSet, theta_deg: float, seed: int) -> CorrespondenceSet:
    """Rotate the second scan by exactly ``theta_deg`` about a seeded random axis."""
    if theta_deg < 0:
        raise ValueError("theta must be non-negative")
    if theta_deg == 0:
        return pair
    rng = np.random.default_rng(seed)
    axis = _unit_vectors(rng, 1)[0]
    Ra = so3_exp(np.radians(theta_deg) * axis)
    aug = RigidTransform(Ra, np.zeros(3))
    gt = None if pair.gt is None else compose(aug, pair.gt)
    return CorrespondenceSet(pair.P, pair.Q @ Ra.T, pair.labels, gt, pair.pair_id)


# ----------------------------------------------------------------- file format

_HEAD = struct.Struct("<4sIQ")
_REC = struct.Struct("<QIB")


def _write_pair(f: BinaryIO, pair: CorrespondenceSet) -> None:
    flags = (1 if pair.labels is not None else 0) | (2 if pair.gt is not None else 0)
    f.write(_REC.pack(int(pair.pair_id), len(pair), flags))
    f.write(np.ascontiguousarray(pair.P, dtype="<f4").tobytes())
    f.write(np.ascontiguousarray(pair.Q, dtype="<f4").tobytes())
    if pair.labels is not None:
        f.write(np.asarray(pair.labels, dtype=np.uint8).tobytes())
    if pair.gt is not None:
        f.write(np.concatenate([pair.gt.R.reshape(-1), pair.gt.t]).astype("<f4").tobytes())


def write_dataset(path, pairs: Iterable[CorrespondenceSet]) -> None:
    pairs = list(pairs)
    with open(path, "wb") as f:
        f.write(_HEAD.pack(MAGIC, VERSION, len(pairs)))
        for p in pairs:
            _write_pair(f, p)


def _read_exact(f: BinaryIO, size: int, what: str) -> bytes:
    buf = f.read(size)
    if len(buf) != size:
        raise DatasetFormatError(f"truncated file: {what}")
    return buf


def read_dataset(path) -> list[CorrespondenceSet]:
    with open(path, "rb") as f:
        head = f.read(_HEAD.size)
        if head[:4] != MAGIC:
            raise DatasetFormatError(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
        if len(head) < _HEAD.size:
            raise DatasetFormatError("truncated file: header")
        _, version, count = _HEAD.unpack(head)
        if version != VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version}")
        out = []
        for k in range(count):
            what = f"record {k}"
            pid, n, flags = _REC.unpack(_read_exact(f, _REC.size, what))
            if n == 0:
                raise DatasetFormatError(f"record {k} has N=0")
            P = np.frombuffer(_read_exact(f, 12 * n, what), dtype="<f4").reshape(n, 3)
            Q = np.frombuffer(_read_exact(f, 12 * n, what), dtype="<f4").reshape(n, 3)
            labels = None
            gt = None
            if flags & 1:
                labels = np.frombuffer(_read_exact(f, n, what), dtype=np.uint8).copy()
            if flags & 2:
                g = np.frombuffer(_read_exact(f, 48, what), dtype="<f4").astype(float)
                gt = RigidTransform(g[:9].reshape(3, 3), g[9:])
            try:
                out.append(CorrespondenceSet(P.astype(float), Q.astype(float), labels, gt, pid))
            except ValueError as e:
                raise DatasetFormatError(f"record {k}: {e}") from e
        if f.read(1):
            raise DatasetFormatError("trailing bytes after last record")
    return out


def stored_precision(pair: CorrespondenceSet) -> CorrespondenceSet:
    """The pair as it reads back after a write (float32 rounding)."""
    gt = pair.gt
    if gt is not None:
        gt = RigidTransform(gt.R.astype(np.float32).astype(float), gt.t.astype(np.float32).astype(float))
    return replace(pair, P=pair.P.astype(np.float32).astype(float),
                   Q=pair.Q.astype(np.float32).astype(float), gt=gt)
