from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, Tensor, backward


class NonFiniteError(FloatingPointError):
    """A function evaluation during a gradient check produced NaN/Inf."""


def _scalar(fn: Callable[[], Tensor], where: str) -> float:
    val = fn()
    if val.size != 1:
        raise ValueError(f"gradient check needs a scalar function, got shape {val.shape}")
    v = float(val.data.reshape(-1)[0])
    if not np.isfinite(v):
        raise NonFiniteError(f"non-finite function value {v} at {where}")
    return v


def grad_check_many(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    ``fn`` closes over ``tensors`` and is re-evaluated with single coordinates
    nudged in place. With ``max_coords`` set, that many coordinates per tensor
    are sampled (seeded) instead of checking all of them.
    """
    with GradTape() as tape:
        out = fn()
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("non-finite function value at the base point")
    grads = backward(out, tape, wrt=tensors)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        analytic = grads[t].data.reshape(-1)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            plus = _scalar(fn, f"{t.name or 'tensor'}[{i}] + step")
            flat[i] = orig - step
            minus = _scalar(fn, f"{t.name or 'tensor'}[{i}] - step")
            flat[i] = orig
            numeric = (plus - minus) / (2 * step)
            a = float(analytic[i])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


def grad_check(fn: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-5) -> float:
    """Check ``fn`` at ``point`` over every coordinate; returns max relative error."""
    x = Tensor(np.array(point.data, copy=True), requires_grad=True, name=point.name)
    return grad_check_many(lambda: fn(x), [x], step=step)
