"""Adam with bias correction, optional row freezing and global-norm clipping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from unicodebook.domain.errors import NumericalError, ShapeMismatchError
from unicodebook.numerics.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float | None = None


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: AdamConfig,
    update_masks: dict[str, np.ndarray] | None = None,
) -> None:
    """Apply one Adam update in place and advance ``state``."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeMismatchError(f"adam_step[{name}]", params[name].shape, g.shape)
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericalError(
                f"Non-finite gradient in parameter '{name}' ({bad} of {g.size} entries)", step=state.step + 1
            )

    if config.max_grad_norm is not None:
        total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if total > config.max_grad_norm:
            scale = config.max_grad_norm / (total + 1e-12)
            grads = {name: g * scale for name, g in grads.items()}

    state.step += 1
    bc1 = 1.0 - config.beta1**state.step
    bc2 = 1.0 - config.beta2**state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - config.beta1) * g if m is None else config.beta1 * m + (1 - config.beta1) * g
        v = (1 - config.beta2) * g * g if v is None else config.beta2 * v + (1 - config.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        if update_masks and name in update_masks:
            update = update * update_masks[name]
        p.data -= update


class Adam:
    """Stateful wrapper over :func:`adam_step` for a fixed named parameter set."""

    def __init__(self, params: dict[str, Tensor], config: AdamConfig) -> None:
        self.params = params
        self.config = config
        self.state = AdamState()
        self.update_masks: dict[str, np.ndarray] = {}

    def freeze_rows(self, name: str, rows: slice | np.ndarray) -> None:
        """Never move the given rows of parameter ``name``."""
        mask = self.update_masks.get(name)
        if mask is None:
            mask = np.ones((self.params[name].shape[0],) + (1,) * (self.params[name].ndim - 1))
        mask[rows] = 0.0
        self.update_masks[name] = mask

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        grads = {
            name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for name, p in self.params.items()
        }
        adam_step(self.params, grads, self.state, self.config, self.update_masks)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.state.step], dtype=np.int64)}
        for name, m in self.state.m.items():
            out[f"m.{name}"] = m
            out[f"v.{name}"] = self.state.v[name]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.state = AdamState(step=int(state["step"][0]))
        for key, value in state.items():
            if key.startswith("m."):
                self.state.m[key[2:]] = np.array(value, dtype=np.float64)
            elif key.startswith("v."):
                self.state.v[key[2:]] = np.array(value, dtype=np.float64)
        logger.debug("Restored Adam state at step %d", self.state.step)
