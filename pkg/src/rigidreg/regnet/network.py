from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..autodiff import Tensor
from ..estimators import CorrespondenceSet
from ..geom3d import RigidTransform, project_to_so3
from .config import LossConfig, RegNetConfig
from .losses import cascade_losses, loss_total
from .model import forward_cascade
from .params import check_params, init_params


def to_transform(R: np.ndarray, t: np.ndarray) -> RigidTransform:
    """Float64 RigidTransform from network output; single-precision passes drift slightly off SO(3)."""
    R = np.asarray(R, dtype=float)
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
        R = project_to_so3(R)
    return RigidTransform(R, np.asarray(t, dtype=float))


def group_by_size(pairs: Sequence[CorrespondenceSet]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = defaultdict(list)
    for i, p in enumerate(pairs):
        groups[len(p)].append(i)
    return dict(groups)


@dataclass
class Network:
    """One network or a refinement cascade of several, with their parameters."""

    configs: list[RegNetConfig]
    params: list[dict[str, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if not self.configs:
            raise ValueError("need at least one network config")
        if self.params and len(self.params) != len(self.configs):
            raise ValueError("one parameter set per config")
        for c, p in zip(self.configs, self.params):
            check_params(c, p)

    @classmethod
    def create(cls, configs: Sequence[RegNetConfig], seed: int = 0, dtype=np.float32) -> Network:
        configs = list(configs)
        return cls(configs, [init_params(c, seed + 1000 * i, dtype) for i, c in enumerate(configs)])

    @property
    def dtype(self):
        return next(iter(self.params[0].values())).dtype

    def flat(self) -> dict[str, np.ndarray]:
        return {f"s{i}.{k}": v for i, p in enumerate(self.params) for k, v in p.items()}

    def set_flat(self, flat: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.params):
            for k in p:
                p[k] = flat[f"s{i}.{k}"]

    def stages(self, flat: Optional[dict] = None):
        if flat is None:
            return list(zip(self.configs, self.params))
        out = []
        for i, c in enumerate(self.configs):
            pre = f"s{i}."
            out.append((c, {k[len(pre):]: v for k, v in flat.items() if k.startswith(pre)}))
        return out

    def objective(self, flat: dict[str, Tensor], P: np.ndarray, Q: np.ndarray, labels: np.ndarray,
                  loss: LossConfig, strict: bool = False):
        """Total loss for one same-N batch plus the stage-averaged (L_c, L_r) values."""
        outs = forward_cascade(self.stages(flat), P, Q, strict=strict)
        lc, lr = cascade_losses(outs, P, Q, labels, loss.metric, loss.mu)
        total = loss_total(lc, lr, loss.alpha, loss.beta)
        return total, float(np.mean([x.data for x in lc])), float(np.mean([x.data for x in lr]))

    def batch_arrays(self, pairs: Sequence[CorrespondenceSet]):
        dt = self.dtype
        P = np.stack([p.P for p in pairs]).astype(dt)
        Q = np.stack([p.Q for p in pairs]).astype(dt)
        labels = None
        if all(p.labels is not None for p in pairs):
            labels = np.stack([p.labels for p in pairs]).astype(dt)
        return P, Q, labels

    def predict(self, pairs: Sequence[CorrespondenceSet], chunk: int = 32
                ) -> list[tuple[list[np.ndarray], RigidTransform]]:
        """Per pair: the weight vector of every stage and the final cumulative pose.

        The Procrustes head raises when fewer than 3 correspondences are selected.
        """
        results: list = [None] * len(pairs)
        for _, idx in group_by_size(pairs).items():
            for s in range(0, len(idx), chunk):
                part = idx[s:s + chunk]
                P, Q, _ = self.batch_arrays([pairs[i] for i in part])
                outs = forward_cascade(self.stages(), P, Q, strict=True)
                for j, i in enumerate(part):
                    ws = [o.weights.data[j].astype(float) for o in outs]
                    results[i] = (ws, to_transform(outs[-1].R_total.data[j], outs[-1].t_total.data[j]))
        return results
