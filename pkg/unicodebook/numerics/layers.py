"""Parameter containers built from the primitives."""

from __future__ import annotations

from collections.abc import Iterator
from typing import Any

import numpy as np

from unicodebook.domain.errors import ShapeMismatchError
from unicodebook.numerics import functional as F
from unicodebook.numerics.tensor import Tensor


class Module:
    """Walks its attributes in definition order to collect named parameters."""

    def _children(self) -> Iterator[tuple[str, Any]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in self._children():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[key] = value
            else:
                out.update(value.parameters(prefix=f"{key}."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"Missing parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeMismatchError(f"load_state_dict[{name}]", p.shape, value.shape)
            p.data[...] = value

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, std: float | None = None) -> None:
        scale = std if std is not None else 1.0 / np.sqrt(d_in)
        self.weight = _param(rng.normal(0.0, scale, size=(d_in, d_out)))
        self.bias = _param(np.zeros(d_out))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, width: int) -> None:
        self.gamma = _param(np.ones(width))
        self.beta = _param(np.zeros(width))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x) * self.gamma + self.beta


class Embedding(Module):
    def __init__(self, count: int, width: int, rng: np.random.Generator, std: float = 0.02) -> None:
        self.weight = _param(rng.normal(0.0, std, size=(count, width)))

    def forward(self, ids: np.ndarray) -> Tensor:
        return F.embedding(self.weight, ids)
