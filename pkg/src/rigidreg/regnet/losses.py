from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..autodiff import Tensor, ops
from .model import StageOutput, apply_batch, _t


def class_balance(labels: np.ndarray) -> np.ndarray:
    """Per-element weights ``0.5 N / N_class``; zero where a class is absent."""
    y = np.asarray(labels, dtype=float)
    n = y.shape[-1]
    n_pos = y.sum(axis=-1, keepdims=True)
    n_neg = n - n_pos
    g_pos = np.where(n_pos > 0, 0.5 * n / np.maximum(n_pos, 1), 0.0)
    g_neg = np.where(n_neg > 0, 0.5 * n / np.maximum(n_neg, 1), 0.0)
    return np.where(y > 0, g_pos, g_neg)


def loss_classification(logits: Tensor, labels, balance: Optional[np.ndarray] = None) -> Tensor:
    """Class-balanced cross-entropy of ``sigmoid(logits)``, averaged over N then over pairs."""
    logits = _t(logits)
    y = np.asarray(labels)
    if y.shape != logits.shape:
        raise ValueError(f"labels {y.shape} do not match logits {logits.shape}")
    gamma = class_balance(y) if balance is None else np.asarray(balance)
    per = ops.mul(ops.bce_with_logits(logits, y), gamma.astype(logits.dtype))
    return ops.mean(ops.mean(per, axis=-1))


def residual_terms(P, Q, R: Tensor, t: Tensor, metric: str, weights: Optional[Tensor] = None,
                   mu: float = 1.0) -> Tensor:
    """Per-correspondence penalty rho(q, R p + t), shape (K, N)."""
    r = ops.sub(apply_batch(R, t, P), _t(Q))
    if metric == "l1":
        return ops.sum(ops.absolute(r), axis=-1)
    sq = ops.sum(ops.square(r), axis=-1)
    if metric == "l2":
        return sq
    if metric == "weighted_l2":
        if weights is None:
            raise ValueError("weighted_l2 needs weights")
        return ops.mul(sq, weights)
    if metric == "geman_mcclure":
        return ops.geman_mcclure(sq, mu)
    raise ValueError(f"unknown metric {metric!r}")


def loss_registration(P, Q, R: Tensor, t: Tensor, metric: str, weights=None, mu: float = 1.0,
                      valid: Optional[np.ndarray] = None) -> Tensor:
    """Mean penalty over the N correspondences, then over the K pairs.

    ``valid`` (K,) zeroes pairs whose pose could not be formed.
    """
    per_pair = ops.mean(residual_terms(P, Q, R, t, metric, weights, mu), axis=-1)
    if valid is not None:
        per_pair = ops.mul(per_pair, valid.astype(per_pair.dtype))
    return ops.mean(per_pair)


def loss_total(loss_c, loss_r, alpha: float, beta: float):
    """``alpha L_c + beta L_r``; sequences are per-stage losses and are averaged first."""
    if alpha < 0 or beta < 0:
        raise ValueError("coefficients must be non-negative")
    if isinstance(loss_c, (list, tuple)):
        loss_c = _avg(loss_c)
    if isinstance(loss_r, (list, tuple)):
        loss_r = _avg(loss_r)
    return alpha * loss_c + beta * loss_r


def _avg(xs: Sequence):
    total = xs[0]
    for x in xs[1:]:
        total = total + x
    return total * (1.0 / len(xs))


def cascade_losses(outs: Sequence[StageOutput], P, Q, labels, metric: str, mu: float = 1.0):
    """Per-stage classification and registration losses.

    Every stage is scored on the original correspondences with its cumulative pose.
    """
    lc, lr = [], []
    for out in outs:
        lc.append(loss_classification(out.logits, labels))
        lr.append(loss_registration(P, Q, out.R_total, out.t_total, metric, out.weights, mu, out.valid))
    return lc, lr
