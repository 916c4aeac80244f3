"""Correspondence classification and pose regression network."""

from .config import METRICS, ROTATION_SIZES, LossConfig, RegNetConfig
from .losses import (cascade_losses, class_balance, loss_classification, loss_registration,
                     loss_total, residual_terms)
from .model import (StageOutput, apply_batch, decode_pose, forward_cascade, forward_classify,
                    forward_refined, forward_register_dnn, forward_register_procrustes,
                    forward_stage, rotation_from_params, stage_transform)
from .network import Network
from .params import check_params, init_params, param_shapes

__all__ = [
    "METRICS", "ROTATION_SIZES", "LossConfig", "Network", "RegNetConfig", "StageOutput",
    "apply_batch", "cascade_losses", "check_params", "class_balance", "decode_pose",
    "forward_cascade", "forward_classify", "forward_refined", "forward_register_dnn",
    "forward_register_procrustes", "forward_stage", "init_params", "loss_classification",
    "loss_registration", "loss_total", "param_shapes", "residual_terms",
    "rotation_from_params", "stage_transform",
]
