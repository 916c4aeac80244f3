"""Forward passes of the classification block, both registration heads and the cascade.

All functions work on a leading batch of K pairs with a common N:
points are (K, N, 3), weights (K, N), rotations (K, 3, 3), translations (K, 3).
Parameters may be Tensors (training) or plain arrays (inference).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..autodiff import Tensor, ops
from ..estimators import EstimationError
from ..geom3d import RigidTransform, compose, linear9_to_rot, quat_to_rot, so3_exp
from .config import RegNetConfig


def _t(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _p(params, name) -> Tensor:
    return _t(params[name])


def forward_classify(params, corrs, config: RegNetConfig):
    """Per-correspondence weights, logits and the C+1 stage feature maps.

    ``corrs`` is (..., N, 6), each row ``(p, q)``.
    """
    x = _t(corrs)
    if x.shape[-1] != 6:
        raise ValueError(f"expected (..., N, 6) correspondences, got {x.shape}")
    h = ops.relu(ops.affine(x, _p(params, "in.W"), _p(params, "in.b")))
    stages = [h]
    for c in range(config.blocks):
        u = h
        for k in range(2):
            u = ops.relu(ops.affine(ops.context_norm(u, axis=-2),
                                    _p(params, f"block{c}.{k}.W"), _p(params, f"block{c}.{k}.b")))
        h = ops.add(h, u)
        stages.append(h)
    logits = ops.reshape(ops.affine(h, _p(params, "out.W"), _p(params, "out.b")), h.shape[:-1])
    weights = ops.tanh(ops.relu(logits))
    # tanh rounds to exactly 1 for large logits; keep the range half-open
    weights = ops.clip_max(weights, float(np.nextafter(weights.dtype.type(1), weights.dtype.type(0))))
    return weights, logits, stages


def forward_register_dnn(stage_features: Sequence[Tensor], params, config: RegNetConfig):
    """Pose regression from max-pooled stage features; returns (v, t)."""
    if len(stage_features) < config.kernel[0]:
        raise ValueError(f"{len(stage_features)} stages do not fit a {config.kernel} kernel")
    pooled = ops.stack([ops.max_pool(f, axis=-2) for f in stage_features], axis=-2)
    pooled = ops.context_norm(pooled, axis=-2)  # per channel across the stage axis
    conv = ops.conv2d(pooled, _p(params, "conv.W"), _p(params, "conv.b"), config.stride)
    flat = ops.reshape(conv, conv.shape[:-3] + (-1,))
    hidden = ops.relu(ops.affine(flat, _p(params, "fc1.W"), _p(params, "fc1.b")))
    out = ops.affine(hidden, _p(params, "fc2.W"), _p(params, "fc2.b"))
    M = config.rot_size
    return ops.index(out, (..., slice(0, M))), ops.index(out, (..., slice(M, M + 3)))


def rotation_from_params(v: Tensor, mode: str) -> Tensor:
    """Differentiable decoding of (..., M) rotation outputs to (..., 3, 3)."""
    if mode == "lie":
        return ops.so3_exp(v)
    if mode == "quaternion":
        return ops.quat_to_rot(v)
    if mode == "linear":
        A = ops.reshape(v, v.shape[:-1] + (3, 3))
        U, _, V = ops.svd3(A)
        return _proper(U, V)
    raise ValueError(f"unknown rotation mode {mode!r}")


def _proper(U: Tensor, V: Tensor) -> Tensor:
    """``U diag(1, 1, det(U V^T)) V^T``; the sign is a constant of the pass."""
    d = np.sign(np.linalg.det(U.data @ np.swapaxes(V.data, -1, -2)))
    scale = np.ones(U.shape[:-2] + (1, 3), dtype=U.dtype)
    scale[..., 0, 2] = d
    return ops.matmul(ops.mul(U, scale), ops.transpose(V))


def decode_pose(v: np.ndarray, t: np.ndarray, mode: str) -> RigidTransform:
    """Network outputs of one pair -> RigidTransform."""
    v = np.asarray(v, dtype=float)
    if mode == "lie":
        R = so3_exp(v)
    elif mode == "quaternion":
        R = quat_to_rot(v)
    elif mode == "linear":
        R = linear9_to_rot(v)
    else:
        raise ValueError(f"unknown rotation mode {mode!r}")
    return RigidTransform(R, np.asarray(t, dtype=float))


def selection_mask(w: np.ndarray, threshold: float) -> np.ndarray:
    return np.asarray(w) >= threshold


def forward_register_procrustes(P, Q, weights: Tensor, threshold: float,
                                valid: Optional[np.ndarray] = None):
    """Differentiable weighted Procrustes on correspondences with ``w >= threshold``.

    The hard selection is a constant mask; gradients reach the surviving
    weights through the weighted centroids and the SVD. With ``valid`` given,
    pairs marked invalid are computed with unit weights (finite but meaningless)
    instead of raising; otherwise fewer than 3 selected correspondences raise.
    Returns (R, t) as Tensors.
    """
    P, Q = _t(P), _t(Q)
    w = _t(weights)
    mask = selection_mask(w.data, threshold)
    counts = mask.sum(axis=-1)
    if valid is None:
        if np.any(counts < 3):
            raise EstimationError(f"Procrustes head needs >= 3 selected correspondences, got {counts.min()}")
        ww = ops.mul(w, mask.astype(w.dtype))
    else:
        keep = (mask & valid[..., None]).astype(w.dtype)
        fill = np.broadcast_to((~valid)[..., None], mask.shape).astype(w.dtype)
        ww = ops.add(ops.mul(w, keep), fill)
    # order-free sums over N keep the pose bit-identical under row permutations
    w3 = ops.reshape(ww, ww.shape + (1,))
    sw = ops.set_sum(w3, axis=-2, keepdims=True)
    cp = ops.div(ops.set_sum(ops.mul(w3, P), axis=-2, keepdims=True), sw)
    cq = ops.div(ops.set_sum(ops.mul(w3, Q), axis=-2, keepdims=True), sw)
    Pc = ops.sub(P, cp)
    Qc = ops.sub(Q, cq)
    outer = ops.mul(ops.reshape(ops.mul(Pc, w3), Pc.shape + (1,)), ops.reshape(Qc, Qc.shape[:-1] + (1, 3)))
    M = ops.set_sum(outer, axis=-3)
    U, S, V = ops.svd3(M)
    if valid is None:
        s = S.data
        if np.any(s[..., 1] <= 1e-12 * np.maximum(s[..., 0], 1e-300)):
            raise EstimationError("rank-deficient weighted correspondences")
    R = _proper(V, U)
    t = ops.sub(ops.reshape(cq, cq.shape[:-2] + (3,)),
                ops.reshape(ops.matmul(cp, ops.transpose(R)), cp.shape[:-2] + (3,)))
    return R, t


@dataclass
class StageOutput:
    weights: Tensor
    logits: Tensor
    R: Tensor  # this stage's own rotation
    t: Tensor
    R_total: Tensor  # composed with all previous stages
    t_total: Tensor
    valid: Optional[np.ndarray] = None  # Procrustes head: pairs with >= 3 selected


def apply_batch(R: Tensor, t: Tensor, P) -> Tensor:
    """``R p + t`` for (K, N, 3) points."""
    P = _t(P)
    return ops.add(ops.matmul(P, ops.transpose(R)), ops.reshape(t, t.shape[:-1] + (1, 3)))


def forward_stage(params, config: RegNetConfig, P, Q, strict: bool = True) -> StageOutput:
    P, Q = _t(P), _t(Q)
    w, logits, stages = forward_classify(params, ops.concat([P, Q], axis=-1), config)
    valid = None
    if config.head == "dnn":
        v, t = forward_register_dnn(stages, params, config)
        R = rotation_from_params(v, config.rotation)
    else:
        if not strict:
            valid = selection_mask(w.data, config.threshold).sum(axis=-1) >= 3
        R, t = forward_register_procrustes(P, Q, w, config.threshold, valid)
    return StageOutput(w, logits, R, t, R, t, valid)


def forward_cascade(stages: Sequence[tuple[RegNetConfig, dict]], P, Q,
                    strict: bool = True) -> list[StageOutput]:
    """Run the networks in sequence.

    Stage r > 1 sees ``(w (R p + t), w q)`` where ``w, R, t`` come from stage
    r-1 and ``R, t`` are the cumulative pose so far; its own output is composed
    onto the cumulative pose.
    """
    P, Q = _t(P), _t(Q)
    outs: list[StageOutput] = []
    for config, params in stages:
        if not outs:
            outs.append(forward_stage(params, config, P, Q, strict))
            continue
        prev = outs[-1]
        w3 = ops.reshape(prev.weights, prev.weights.shape + (1,))
        P_in = ops.mul(w3, apply_batch(prev.R_total, prev.t_total, P))
        Q_in = ops.mul(w3, Q)
        cur = forward_stage(params, config, P_in, Q_in, strict)
        cur.R_total = ops.matmul(cur.R, prev.R_total)
        cur.t_total = ops.add(_rotate(cur.R, prev.t_total), cur.t)
        outs.append(cur)
    return outs


def _rotate(R: Tensor, t: Tensor) -> Tensor:
    """Batched ``R t`` for (K, 3, 3) and (K, 3)."""
    col = ops.reshape(t, t.shape + (1,))
    return ops.reshape(ops.matmul(R, col), t.shape)


def forward_refined(params1, params2, corrs, threshold: float = 0.5,
                    config1: Optional[RegNetConfig] = None, config2: Optional[RegNetConfig] = None):
    """Two-stage cascade on one pair; returns (w1, w2, cumulative RigidTransform)."""
    config1 = config1 or RegNetConfig(blocks=8, threshold=threshold)
    config2 = config2 or RegNetConfig(blocks=4, threshold=threshold)
    P = corrs.P[None]
    Q = corrs.Q[None]
    outs = forward_cascade([(config1, params1), (config2, params2)], P, Q)
    T = RigidTransform(outs[1].R_total.data[0], outs[1].t_total.data[0])
    return outs[0].weights.data[0], outs[1].weights.data[0], T


def stage_transform(out: StageOutput, k: int = 0, total: bool = True) -> RigidTransform:
    R = (out.R_total if total else out.R).data[k]
    t = (out.t_total if total else out.t).data[k]
    return RigidTransform(np.asarray(R, dtype=float), np.asarray(t, dtype=float))


def compose_stages(Ts: Sequence[RigidTransform]) -> RigidTransform:
    T = Ts[0]
    for T2 in Ts[1:]:
        T = compose(T2, T)
    return T
