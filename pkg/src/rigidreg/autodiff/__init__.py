"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import ops
from .adam import AdamState, adam_step
from .gradcheck import grad_check, numeric_grad, relative_error
from .tensor import NonFiniteError, ShapeError, Tensor, backward, grad, topological_order

__all__ = [
    "AdamState", "NonFiniteError", "ShapeError", "Tensor", "adam_step", "backward",
    "grad", "grad_check", "numeric_grad", "ops", "relative_error", "topological_order",
]
