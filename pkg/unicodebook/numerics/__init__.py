"""Minimal dense-tensor arithmetic with reverse-mode automatic differentiation."""

from unicodebook.numerics.functional import forward_primitive
from unicodebook.numerics.optim import Adam, AdamConfig, AdamState, adam_step
from unicodebook.numerics.tensor import (
    ComputationTape,
    Tensor,
    backward,
    current_tape,
    no_grad,
    reset_tape,
)

__all__ = [
    "Adam",
    "AdamConfig",
    "AdamState",
    "ComputationTape",
    "Tensor",
    "adam_step",
    "backward",
    "current_tape",
    "forward_primitive",
    "no_grad",
    "reset_tape",
]
