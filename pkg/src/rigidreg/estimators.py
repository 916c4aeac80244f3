"""Classical registration baselines: weighted Procrustes, Umeyama, RANSAC, ICP."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geom3d import RigidTransform


class EstimationError(RuntimeError):
    """An estimator could not produce a transform from its input."""


class DegenerateError(EstimationError):
    """Weighted point configuration is rank deficient (collinear/coincident)."""


@dataclass
class CorrespondenceSet:
    """``N`` paired points ``P[i] <-> Q[i]`` with optional labels and ground truth."""

    P: np.ndarray
    Q: np.ndarray
    labels: Optional[np.ndarray] = None
    gt: Optional[RigidTransform] = None
    pair_id: int = 0

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        if self.P.ndim != 2 or self.P.shape[1] != 3 or self.P.shape != self.Q.shape:
            raise ValueError(f"P and Q must both be (N, 3); got {self.P.shape} and {self.Q.shape}")
        if len(self.P) < 3:
            raise ValueError("need at least 3 correspondences")
        if not (np.all(np.isfinite(self.P)) and np.all(np.isfinite(self.Q))):
            raise ValueError("non-finite coordinates")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.uint8)
            if self.labels.shape != (len(self.P),) or np.any(self.labels > 1):
                raise ValueError("labels must be an N-vector of 0/1")

    def __len__(self) -> int:
        return len(self.P)

    def subset(self, idx: np.ndarray) -> CorrespondenceSet:
        return CorrespondenceSet(
            self.P[idx], self.Q[idx],
            None if self.labels is None else self.labels[idx],
            self.gt, self.pair_id,
        )


def check_weights(w: np.ndarray, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weight vector has shape {w.shape}, expected ({n},)")
    if np.any(w < 0) or np.any(w >= 1) or not np.all(np.isfinite(w)):
        raise ValueError("weights must lie in [0, 1)")
    return w


def _weighted_fit(P: np.ndarray, Q: np.ndarray, w: np.ndarray) -> RigidTransform:
    sw = w.sum()
    if sw <= 1e-9:
        raise DegenerateError("total weight is zero")
    cp = w @ P / sw
    cq = w @ Q / sw
    Pc = P - cp
    Qc = Q - cq
    # M = sum_i w_i p_i q_i^T on centered points; q ~ R p gives R = V U^T
    M = (Pc * w[:, None]).T @ Qc
    U, s, Vt = np.linalg.svd(M)
    scale = max(s[0], 1e-300)
    if s[1] <= 1e-12 * scale or s[0] <= 1e-15:
        raise DegenerateError(f"rank-deficient correspondence matrix (singular values {s})")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cq - R @ cp)


def procrustes(corrs: CorrespondenceSet, w: np.ndarray) -> RigidTransform:
    """Weighted least-squares rigid fit of ``Q ~ R P + t``.

    Points are centred on their weighted centroids before the SVD, and the
    translation maps the weighted P-centroid onto the weighted Q-centroid.
    """
    w = check_weights(w, len(corrs))
    if np.count_nonzero(w) < 3:
        raise DegenerateError("fewer than 3 correspondences with positive weight")
    return _weighted_fit(corrs.P, corrs.Q, w)


def umeyama(corrs: CorrespondenceSet, inliers: np.ndarray) -> RigidTransform:
    """Unit-scale least-squares fit restricted to a boolean inlier mask."""
    inliers = np.asarray(inliers, dtype=bool)
    if inliers.shape != (len(corrs),):
        raise ValueError("mask length does not match correspondences")
    if inliers.sum() < 3:
        raise EstimationError(f"umeyama needs >= 3 inliers, got {int(inliers.sum())}")
    return _weighted_fit(corrs.P, corrs.Q, inliers.astype(float))


def residuals(T: RigidTransform, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    return np.linalg.norm(P @ T.R.T + T.t - Q, axis=1)


def _batched_kabsch(P3: np.ndarray, Q3: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid fits for a stack of triples: (H, 3, 3) -> R (H, 3, 3), t (H, 3)."""
    cp = P3.mean(axis=1)
    cq = Q3.mean(axis=1)
    M = np.einsum("hki,hkj->hij", P3 - cp[:, None], Q3 - cq[:, None])
    U, _, Vt = np.linalg.svd(M)
    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    V[:, :, 2] *= d[:, None]
    R = V @ np.swapaxes(U, 1, 2)
    t = cq - np.einsum("hij,hj->hi", R, cp)
    return R, t


def _triangle_area(P3: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(np.cross(P3[:, 1] - P3[:, 0], P3[:, 2] - P3[:, 0]), axis=1)


def _draw_triples(rng: np.random.Generator, P: np.ndarray, count: int) -> np.ndarray:
    n = len(P)
    idx = np.empty((count, 3), dtype=np.int64)
    todo = np.arange(count)
    for _ in range(100):
        if len(todo) == 0:
            break
        keys = rng.random((len(todo), n))
        cand = np.argpartition(keys, 2, axis=1)[:, :3] if n > 3 else np.tile(np.arange(3), (len(todo), 1))
        idx[todo] = cand
        bad = _triangle_area(P[cand]) < 1e-12
        todo = todo[bad]
    if len(todo):
        raise EstimationError("could not draw non-degenerate minimal samples")
    return idx


@dataclass
class RansacResult:
    transform: RigidTransform
    inliers: np.ndarray
    hypothesis: RigidTransform
    n_inliers: int = field(default=0)


def ransac_full(corrs: CorrespondenceSet, inlier_threshold: float, max_iters: int = 1000,
                seed: int = 0, chunk: int = 256) -> RansacResult:
    """RANSAC over 3-point samples; see :func:`ransac`.

    Also reports the winning minimal-sample hypothesis and its consensus size.
    """
    if inlier_threshold <= 0 or max_iters < 1:
        raise ValueError("threshold must be positive and max_iters >= 1")
    P, Q = corrs.P, corrs.Q
    rng = np.random.default_rng(seed)
    if len(P) == 3:
        samples = np.arange(3)[None]
        if _triangle_area(P[samples])[0] < 1e-12:
            raise EstimationError("the only minimal sample is degenerate")
    else:
        samples = _draw_triples(rng, P, max_iters)

    best = (-1, np.inf, None)  # (count, mean residual, (R, t))
    for start in range(0, len(samples), chunk):
        S = samples[start:start + chunk]
        R, t = _batched_kabsch(P[S], Q[S])
        res = np.linalg.norm(np.einsum("hij,nj->hni", R, P) + t[:, None] - Q, axis=2)
        inl = res < inlier_threshold
        counts = inl.sum(axis=1)
        mean_res = np.where(counts > 0, (res * inl).sum(axis=1) / np.maximum(counts, 1), np.inf)
        # max count, then min mean residual, then earliest draw
        h = np.lexsort((np.arange(len(S)), mean_res, -counts))[0]
        if counts[h] > best[0] or (counts[h] == best[0] and mean_res[h] < best[1]):
            best = (int(counts[h]), float(mean_res[h]), (R[h], t[h]))

    if best[0] < 3:
        raise EstimationError("RANSAC found no model with at least 3 inliers")
    hyp = RigidTransform(*best[2])
    consensus = residuals(hyp, P, Q) < inlier_threshold
    refit = umeyama(corrs, consensus)
    final_mask = residuals(refit, P, Q) < inlier_threshold
    if final_mask.sum() < 3:
        final_mask = consensus
    return RansacResult(refit, final_mask, hyp, int(consensus.sum()))


def ransac(corrs: CorrespondenceSet, inlier_threshold: float, max_iters: int = 1000,
           seed: int = 0) -> tuple[RigidTransform, np.ndarray]:
    """Hypothesize-and-verify with minimal 3-point samples.

    The best hypothesis maximises the inlier count (ties: lower mean inlier
    residual, then the earlier draw) and is refit with :func:`umeyama` on its
    consensus set. The returned mask is the consensus of the refit model.
    """
    res = ransac_full(corrs, inlier_threshold, max_iters, seed)
    return res.transform, res.inliers


def threshold_classify(w: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Inlier mask ``w >= tau``."""
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must lie in [0, 1)")
    return np.asarray(w) >= tau


def _mean_nn(tree: cKDTree, src: np.ndarray) -> tuple[float, np.ndarray]:
    d, idx = tree.query(src)
    return float(d.mean()), idx


def icp_trace(source: np.ndarray, target: np.ndarray, T_init: Optional[RigidTransform] = None,
              max_iters: int = 50, convergence_tol: float = 1e-6
              ) -> tuple[RigidTransform, list[float]]:
    """Point-to-point ICP returning the transform and the residual history.

    ``history[0]`` is the mean closest-point residual at ``T_init``; each later
    entry belongs to an accepted iteration, so the sequence is non-increasing.
    """
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if len(source) == 0 or len(target) == 0:
        raise EstimationError("ICP needs non-empty clouds")
    if convergence_tol <= 0:
        raise ValueError("convergence_tol must be positive")
    T = T_init if T_init is not None else RigidTransform.identity()
    tree = cKDTree(target)
    err, idx = _mean_nn(tree, source @ T.R.T + T.t)
    history = [err]
    ones = np.ones(len(source))
    for _ in range(max_iters):
        try:
            T_new = _weighted_fit(source, target[idx], ones)
        except DegenerateError:
            break
        err_new, idx_new = _mean_nn(tree, source @ T_new.R.T + T_new.t)
        if err_new > err:
            break
        improvement = err - err_new
        T, err, idx = T_new, err_new, idx_new
        history.append(err)
        if improvement < convergence_tol:
            break
    return T, history


def icp(source: np.ndarray, target: np.ndarray, T_init: Optional[RigidTransform] = None,
        max_iters: int = 50, convergence_tol: float = 1e-6) -> RigidTransform:
    """Align ``source`` onto ``target`` by nearest-neighbour/Procrustes alternation."""
    return icp_trace(source, target, T_init, max_iters, convergence_tol)[0]
