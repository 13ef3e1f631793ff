"""Central finite-difference checks for autodiff gradients."""

from collections.abc import Callable

import numpy as np

from unicodebook.numerics.tensor import Tensor, backward, no_grad, reset_tape


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, 0 when both sides vanish."""
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric)) / scale


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-4,
    max_checks: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """
    Compare autodiff gradients of ``loss_fn`` with central differences.

    When ``max_checks`` is set, only that many randomly chosen coordinates of
    each parameter are probed; the comparison is restricted to them.
    """
    reset_tape()
    for p in params.values():
        p.zero_grad()
    backward(loss_fn())

    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            coords = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
        numeric = np.empty(coords.size)
        with no_grad():
            for j, c in enumerate(coords):
                original = flat[c]
                flat[c] = original + eps
                plus = loss_fn().item()
                flat[c] = original - eps
                minus = loss_fn().item()
                flat[c] = original
                numeric[j] = (plus - minus) / (2 * eps)
        errors[name] = relative_error(analytic.reshape(-1)[coords], numeric)
    return errors
