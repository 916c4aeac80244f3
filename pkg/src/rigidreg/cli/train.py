"""Mini-batch Adam training of a network or cascade, with curriculum augmentation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..autodiff import AdamState, NonFiniteError, adam_step, grad, ops
from ..data import augment_pair, curriculum_theta
from ..estimators import CorrespondenceSet, threshold_classify
from ..geom3d import rot_error, trans_error
from ..regnet import LossConfig, Network, RegNetConfig, forward_cascade
from ..regnet.network import group_by_size, to_transform

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    networks: tuple[RegNetConfig, ...] = (RegNetConfig(blocks=8), RegNetConfig(blocks=4))
    loss: LossConfig = LossConfig()
    lr: float = 1e-4
    batch: int = 16
    epochs: int = 10
    steps_per_epoch: Optional[int] = None  # default: one pass over the training set
    seed: int = 0
    curriculum: bool = False
    theta_max: float = 50.0
    val_fraction: float = 0.1
    checkpoint: Optional[str] = None
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "networks", tuple(self.networks))
        if not self.networks:
            raise ValueError("need at least one network config")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps per epoch must be >= 1")
        if self.theta_max < 0:
            raise ValueError("theta_max must be non-negative")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_rot_error: float
    val_trans_error: float

    FIELDS = ("epoch", "train_loss", "val_loss", "val_accuracy", "val_rot_error", "val_trans_error")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class TrainResult:
    network: Network
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    initial_loss: float = float("nan")


def split_validation(pairs: Sequence[CorrespondenceSet], fraction: float, seed: int):
    """Fixed, seeded split into (train, val); val is empty when fraction is 0."""
    n_val = int(round(fraction * len(pairs)))
    if n_val >= len(pairs):
        n_val = len(pairs) - 1
    order = np.random.default_rng([seed, 7]).permutation(len(pairs))
    val = sorted(order[:n_val])
    train = sorted(order[n_val:])
    return [pairs[i] for i in train], [pairs[i] for i in val]


def _aug_seed(seed: int, step: int, slot: int) -> int:
    return int(np.random.SeedSequence([seed, step, slot]).generate_state(1)[0])


def batch_loss(net: Network, flat: dict[str, np.ndarray], pairs: Sequence[CorrespondenceSet],
               loss: LossConfig, with_grad: bool = True):
    """Loss averaged over the batch; pairs of different N are run as separate groups.

    Returns (loss, grads or None, mean L_c, mean L_r).
    """
    K = len(pairs)
    total, lc_sum, lr_sum = 0.0, 0.0, 0.0
    grads: Optional[dict[str, np.ndarray]] = None
    for _, idx in sorted(group_by_size(pairs).items()):
        P, Q, labels = net.batch_arrays([pairs[i] for i in idx])
        if labels is None:
            raise TrainingError("training pairs need labels")
        scale = len(idx) / K
        parts = {}

        def fn(**leaves):
            value, parts["lc"], parts["lr"] = net.objective(leaves, P, Q, labels, loss, strict=False)
            return value

        if with_grad:
            with ops.plain_set_sums():
                value, g = grad(fn, flat)
            if grads is None:
                grads = {k: scale * v for k, v in g.items()}
            else:
                for k, v in g.items():
                    grads[k] = grads[k] + scale * v
        else:
            value = float(fn(**flat).data)
        total += scale * value
        lc_sum += scale * parts["lc"]
        lr_sum += scale * parts["lr"]
    return total, grads, lc_sum, lr_sum


def _locate_nonfinite(net: Network, flat, pairs, loss: LossConfig) -> int:
    for p in pairs:
        try:
            value, g, _, _ = batch_loss(net, flat, [p], loss)
        except NonFiniteError:
            return p.pair_id
        if not math.isfinite(value) or not all(np.all(np.isfinite(v)) for v in g.values()):
            return p.pair_id
    return pairs[0].pair_id


def validate(net: Network, pairs: Sequence[CorrespondenceSet], loss: LossConfig, chunk: int = 32):
    """(loss, accuracy at 0.5 of the last stage, mean rotation error, mean translation error)."""
    if not pairs:
        return (float("nan"),) * 4
    losses, correct, count, rot, trans = [], 0, 0, [], []
    flat = net.flat()
    for _, idx in sorted(group_by_size(pairs).items()):
        for s in range(0, len(idx), chunk):
            part = [pairs[i] for i in idx[s:s + chunk]]
            value, _, _, _ = batch_loss(net, flat, part, loss, with_grad=False)
            losses.append((value, len(part)))
            P, Q, labels = net.batch_arrays(part)
            outs = forward_cascade(net.stages(), P, Q, strict=False)
            last = outs[-1]
            for j, p in enumerate(part):
                w = last.weights.data[j]
                if p.labels is not None:
                    correct += int(np.sum(threshold_classify(w, 0.5) == p.labels.astype(bool)))
                    count += len(p)
                if p.gt is not None:
                    T = to_transform(last.R_total.data[j], last.t_total.data[j])
                    rot.append(rot_error(T.R, p.gt.R))
                    trans.append(trans_error(T.t, p.gt.t))
    mean_loss = sum(v * n for v, n in losses) / sum(n for _, n in losses)
    acc = correct / count if count else float("nan")
    return (mean_loss, acc, float(np.mean(rot)) if rot else float("nan"),
            float(np.mean(trans)) if trans else float("nan"))


def train(config: TrainConfig, train_set: Sequence[CorrespondenceSet],
          val_set: Optional[Sequence[CorrespondenceSet]] = None,
          on_epoch: Optional[Callable[[EpochLog], None]] = None) -> TrainResult:
    """Train from scratch; keeps the parameters with the best validation loss.

    Without an explicit ``val_set`` a fixed split of ``config.val_fraction`` is held out.
    With no validation pairs at all the final parameters are kept.
    """
    if not train_set:
        raise TrainingError("empty training set")
    if val_set is None:
        train_set, val_set = split_validation(train_set, config.val_fraction, config.seed)
    dtype = np.dtype(config.dtype)
    net = Network.create(config.networks, seed=config.seed, dtype=dtype)
    state = AdamState.for_params(net.flat())
    steps = config.steps_per_epoch or max(1, math.ceil(len(train_set) / config.batch))
    result = TrainResult(net)
    best_loss = math.inf
    best_flat = {k: v.copy() for k, v in net.flat().items()}
    n = len(train_set)

    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        cursor, epoch_losses = 0, []
        for s in range(steps):
            if cursor + config.batch > n:
                order = np.concatenate([order[cursor:], np.random.default_rng([config.seed, epoch, s]).permutation(n)])
                cursor = 0
            idx = order[cursor:cursor + config.batch]
            cursor += config.batch
            batch = [train_set[i] for i in idx]
            if config.curriculum:
                theta = curriculum_theta(s / steps, config.theta_max)
                batch = [augment_pair(p, theta, _aug_seed(config.seed, step, j)) for j, p in enumerate(batch)]
            flat = net.flat()
            try:
                value, g, _, _ = batch_loss(net, flat, batch, config.loss)
                bad = not math.isfinite(value) or not all(np.all(np.isfinite(v)) for v in g.values())
            except NonFiniteError:
                bad = True
            if bad:
                pid = _locate_nonfinite(net, flat, batch, config.loss)
                raise TrainingError(f"non-finite loss at epoch {epoch} step {s} (pair id {pid})")
            if step == 0:
                result.initial_loss = value
            new_flat, state = adam_step(flat, g, state, config.lr)
            net.set_flat(new_flat)
            epoch_losses.append(value)
            step += 1

        v_loss, v_acc, v_rot, v_trans = validate(net, val_set, config.loss)
        entry = EpochLog(epoch, float(np.mean(epoch_losses)), v_loss, v_acc, v_rot, v_trans)
        result.log.append(entry)
        log.info("epoch %d train %.6f val %.6f acc %.4f rot %.3f trans %.4f", *entry.row())
        if on_epoch is not None:
            on_epoch(entry)
        if val_set and v_loss < best_loss:
            best_loss = v_loss
            result.best_epoch = epoch
            best_flat = {k: v.copy() for k, v in net.flat().items()}
        elif not val_set:
            result.best_epoch = epoch
            best_flat = {k: v.copy() for k, v in net.flat().items()}

    net.set_flat(best_flat)
    if config.checkpoint:
        from .checkpoint import save_checkpoint
        save_checkpoint(config.checkpoint, net)
    return result
