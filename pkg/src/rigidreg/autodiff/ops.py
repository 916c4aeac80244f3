"""Differentiable primitives.

Each function takes Tensors (or array-likes, treated as constants) and returns
a new Tensor recording how to push gradients back to its inputs.
Subgradient conventions: relu'(0) = 0, |x|'(0) = 0, max-pool routes to the
first maximal index.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_node

CN_EPS = 1e-6
SVD_GAP_FLOOR = 1e-8
SMALL_ANGLE = 1e-7


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _const_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _const_like(b, a)
    b = as_tensor(b)
    return _const_like(a, b), b


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_node("add", a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_node("sub", a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_node("mul", a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def back(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb
    return make_node("div", out, (a, b), back)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return make_node("relu", out, (x,), lambda g: (g * (out > 0),))


def clip_max(x: Tensor, hi: float) -> Tensor:
    """``min(x, hi)``; no gradient where clipped."""
    keep = x.data <= hi
    return make_node("clip_max", np.where(keep, x.data, hi).astype(x.dtype), (x,), lambda g: (g * keep,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_node("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return make_node("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def absolute(x: Tensor) -> Tensor:
    return make_node("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x: Tensor) -> Tensor:
    return make_node("square", x.data * x.data, (x,), lambda g: (2 * g * x.data,))


def geman_mcclure(sq: Tensor, mu: float) -> Tensor:
    """Geman-McClure penalty ``e^2 mu / (mu + e^2)`` applied to squared residuals ``sq``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    den = mu + sq.data
    return make_node("geman_mcclure", sq.data * mu / den, (sq,),
                     lambda g: (g * (mu * mu) / (den * den),))


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Elementwise binary cross-entropy ``H(y, sigmoid(o))``; labels are constants."""
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"labels {y.shape} vs logits {logits.shape}")
    o = logits.data
    out = np.maximum(o, 0) - o * y + np.log1p(np.exp(-np.abs(o)))
    return make_node("bce", out, (logits,), lambda g: (g * (_sigmoid(o) - y),))


# ------------------------------------------------------------------ reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return make_node("sum", np.asarray(out), (x,), back)


_ORDER_FREE = [True]


@contextmanager
def plain_set_sums():
    """Within the block, :func:`set_sum` and context-norm statistics use ordinary sums.

    Faster, but only permutation-invariant up to rounding. Meant for training.
    """
    _ORDER_FREE.append(False)
    try:
        yield
    finally:
        _ORDER_FREE.pop()


def _set_sum(a: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
    """Sum whose rounding does not depend on the order of elements along ``axis``."""
    if not _ORDER_FREE[-1]:
        return a.sum(axis=axis, keepdims=keepdims)
    return np.sort(a, axis=axis).sum(axis=axis, keepdims=keepdims)


def set_sum(x: Tensor, axis: int = -2, keepdims: bool = False) -> Tensor:
    """Like :func:`sum` over one axis, but bit-identical under any permutation of that axis."""
    out = _set_sum(x.data, axis, keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return make_node("set_sum", out, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / n)


def max_pool(x: Tensor, axis: int = -2) -> Tensor:
    """Max over ``axis``; the gradient goes to the first maximal element."""
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    out = np.squeeze(out, axis=axis)

    def back(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)
    return make_node("max_pool", out, (x,), back)


def context_norm(x: Tensor, axis: int = -2, eps: float = CN_EPS) -> Tensor:
    """Zero-mean, unit-deviation normalisation of every channel over ``axis``."""
    n = x.shape[axis]
    # order-free sums keep the output exactly equivariant to row permutations
    xc = x.data - _set_sum(x.data, axis, keepdims=True) / n
    sd = np.sqrt(_set_sum(xc * xc, axis, keepdims=True) / n)
    s = sd + eps
    y = xc / s

    def back(g):
        gm = g.mean(axis=axis, keepdims=True)
        gxc = (g * xc).sum(axis=axis, keepdims=True)
        # sd == 0 implies xc == 0, so the variance term vanishes there
        coef = np.where(sd > 0, gxc / (n * s * s * np.where(sd > 0, sd, 1)), 0)
        return ((g - gm) / s - xc * coef,)
    return make_node("context_norm", y, (x,), back)


# ---------------------------------------------------------------- linear maps

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return make_node("matmul", out, (a, b), back)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Shared affine map ``x @ W + b`` applied to every row of ``x`` (..., F_in)."""
    if x.shape[-1] != W.shape[0] or W.shape[1:] != b.shape:
        raise ShapeError(f"affine: x {x.shape}, W {W.shape}, b {b.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    out = (x2 @ W.data + b.data).reshape(x.shape[:-1] + (W.shape[1],))

    def back(g):
        g2 = g.reshape(-1, W.shape[1])
        gx = (g2 @ W.data.T).reshape(x.shape) if x.requires_grad else None
        gW = x2.T @ g2 if W.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gW, gb
    return make_node("affine", out, (x, W, b), back)


def conv2d(x: Tensor, W: Tensor, b: Tensor, stride: tuple[int, int] = (1, 1)) -> Tensor:
    """Single-input-channel 2D convolution without padding.

    ``x``: (..., H, W_in); filters ``W``: (C_out, kh, kw); ``b``: (C_out,).
    Returns (..., C_out, H_out, W_out). ``stride`` is (row, column).
    """
    cout, kh, kw = W.shape
    H, Win = x.shape[-2:]
    sh, sw = stride
    if H < kh or Win < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {H}x{Win}")
    Ho = (H - kh) // sh + 1
    Wo = (Win - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(-2, -1))
    patches = win[..., ::sh, ::sw, :, :][..., :Ho, :Wo, :, :]
    out = np.einsum("...ijab,cab->...cij", patches, W.data) + b.data[:, None, None]

    def back(g):
        gx = gW = gb = None
        if W.requires_grad:
            gW = np.einsum("nijab,ncij->cab", patches.reshape(-1, Ho, Wo, kh, kw),
                           g.reshape(-1, cout, Ho, Wo))
        if b.requires_grad:
            gb = g.reshape(-1, cout, Ho * Wo).sum(axis=(0, 2))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for r in range(kh):
                for c in range(kw):
                    gx[..., r:r + sh * (Ho - 1) + 1:sh, c:c + sw * (Wo - 1) + 1:sw] += \
                        np.einsum("...cij,c->...ij", g, W.data[:, r, c])
        return gx, gW, gb
    return make_node("conv2d", np.ascontiguousarray(out), (x, W, b), back)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return make_node("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return make_node("transpose", np.swapaxes(x.data, -1, -2), (x,),
                     lambda g: (np.swapaxes(g, -1, -2),))


def index(x: Tensor, key) -> Tensor:
    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)
    return make_node("index", np.array(x.data[key]), (x,), back)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return make_node("concat", np.concatenate([t.data for t in xs], axis=axis), xs,
                     lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    return make_node("stack", np.stack([t.data for t in xs], axis=axis), xs,
                     lambda g: tuple(np.moveaxis(g, axis, 0)))


# ---------------------------------------------------------------- geometry

def svd3(A: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Batched SVD of 3x3 matrices, ``A = U diag(S) V^T``; returns (U, S, V).

    Backward uses the closed-form SVD differential; cross terms
    ``1 / (s_j^2 - s_i^2)`` have their denominators floored at 1e-8 in
    magnitude, so gradients near repeated singular values are approximate.
    """
    if A.shape[-2:] != (3, 3):
        raise ShapeError(f"svd3 expects (..., 3, 3), got {A.shape}")
    U, S, Vh = np.linalg.svd(A.data)
    V = np.swapaxes(Vh, -1, -2)
    Ut, Vt = np.swapaxes(U, -1, -2), Vh
    diff = S[..., None, :] ** 2 - S[..., :, None] ** 2  # [i, j] = s_j^2 - s_i^2
    diff = np.where(np.abs(diff) < SVD_GAP_FLOOR, np.where(diff < 0, -SVD_GAP_FLOOR, SVD_GAP_FLOOR), diff)
    F = 1.0 / diff
    F[..., np.arange(3), np.arange(3)] = 0.0
    Smat = S[..., None, :] * np.eye(3)

    def from_u(gU):
        J = F * (Ut @ gU - np.swapaxes(gU, -1, -2) @ U)
        return (U @ (J @ Smat) @ Vt,)

    def from_s(gS):
        return (U @ (gS[..., None, :] * np.eye(3)) @ Vt,)

    def from_v(gV):
        K = F * (Vt @ gV - np.swapaxes(gV, -1, -2) @ V)
        return (U @ (Smat @ K) @ Vt,)

    return (make_node("svd3.U", U, (A,), from_u),
            make_node("svd3.S", S, (A,), from_s),
            make_node("svd3.V", V, (A,), from_v))


def _skew_batch(w: np.ndarray) -> np.ndarray:
    K = np.zeros(w.shape[:-1] + (3, 3), dtype=w.dtype)
    K[..., 0, 1], K[..., 0, 2] = -w[..., 2], w[..., 1]
    K[..., 1, 0], K[..., 1, 2] = w[..., 2], -w[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -w[..., 1], w[..., 0]
    return K


def so3_exp(omega: Tensor) -> Tensor:
    """Rodrigues map (..., 3) -> (..., 3, 3)."""
    w = omega.data
    if w.shape[-1] != 3:
        raise ShapeError("so3_exp expects (..., 3)")
    th2 = (w * w).sum(-1)
    th = np.sqrt(th2)
    small = th < SMALL_ANGLE
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1 - np.cos(safe)) / (safe * safe))
    K = _skew_batch(w)
    I = np.eye(3, dtype=w.dtype)
    R = I + a[..., None, None] * K + b[..., None, None] * (K @ K)

    def back(g):
        gw = np.empty_like(w)
        for k in range(3):
            e = np.zeros(3, dtype=w.dtype)
            e[k] = 1.0
            Ek = _skew_batch(np.broadcast_to(e, w.shape))
            # dR/dw_k = (w_k [w]x + [w x (I - R) e_k]x) R / |w|^2   (|w| > 0)
            v = np.cross(w, ((I - R) @ e))
            big = (w[..., k, None, None] * K + _skew_batch(v)) @ R / np.where(small, 1.0, th2)[..., None, None]
            ser = Ek + 0.5 * (Ek @ K + K @ Ek)
            dR = np.where(small[..., None, None], ser, big)
            gw[..., k] = (g * dR).sum(axis=(-1, -2))
        return (gw,)
    return make_node("so3_exp", R, (omega,), back)


def quat_to_rot(q: Tensor) -> Tensor:
    """Rotation matrices of (possibly unnormalised) quaternions (..., 4) as (w, x, y, z)."""
    d = q.data
    if d.shape[-1] != 4:
        raise ShapeError("quat_to_rot expects (..., 4)")
    n = (d * d).sum(-1)
    if np.any(n <= 1e-24):
        raise ValueError("quaternion norm too small")
    w, v = d[..., 0], d[..., 1:]
    I = np.eye(3, dtype=d.dtype)
    A = ((w * w - (v * v).sum(-1))[..., None, None] * I
         + 2 * v[..., :, None] * v[..., None, :]
         + 2 * w[..., None, None] * _skew_batch(v))
    R = A / n[..., None, None]

    def back(g):
        gq = np.empty_like(d)
        gA = g / n[..., None, None]
        gn = -(g * A).sum(axis=(-1, -2)) / (n * n)
        dA_dw = 2 * w[..., None, None] * I + 2 * _skew_batch(v)
        gq[..., 0] = (gA * dA_dw).sum(axis=(-1, -2)) + gn * 2 * w
        for j in range(3):
            e = np.zeros(3, dtype=d.dtype)
            e[j] = 1.0
            outer = e[:, None] * v[..., None, :] + v[..., :, None] * e[None, :]
            dA = (-2 * v[..., j, None, None] * I + 2 * outer
                  + 2 * w[..., None, None] * _skew_batch(np.broadcast_to(e, v.shape)))
            gq[..., j + 1] = (gA * dA).sum(axis=(-1, -2)) + gn * 2 * v[..., j]
        return (gq,)
    return make_node("quat_to_rot", R, (q,), back)
