"""Minimal reverse-mode differentiation over numpy arrays."""
from . import ops
from .gradcheck import grad_check, kink_margin, relative_error
from .optim import Adam, AdamState, adam_step
from .tensor import Tape, Tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "grad_check",
    "kink_margin",
    "ops",
    "relative_error",
]
