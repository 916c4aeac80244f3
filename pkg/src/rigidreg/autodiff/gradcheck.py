from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from .tensor import Tensor, grad


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def numeric_grad(fn: Callable[..., Tensor], bindings: dict[str, np.ndarray], name: str,
                 h: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn`` with respect to one binding."""
    base = {k: np.array(v, dtype=np.float64) for k, v in bindings.items()}
    x = base[name]
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    g = out.reshape(-1)

    def f():
        return float(fn(**{k: Tensor(v) for k, v in base.items()}).data)

    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return out


def grad_check(fn: Callable[..., Tensor], bindings: dict[str, np.ndarray], h: float = 1e-5,
               which: Optional[Iterable[str]] = None) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    Runs in double precision; ``which`` limits the check to some bindings.
    """
    bindings = {k: np.array(v, dtype=np.float64) for k, v in bindings.items()}
    names = list(bindings if which is None else which)
    _, analytic = grad(fn, bindings, wrt=names)
    worst = 0.0
    for k in names:
        num = numeric_grad(fn, bindings, k, h)
        if num.size:
            worst = max(worst, float(relative_error(analytic[k], num).max()))
    return worst
