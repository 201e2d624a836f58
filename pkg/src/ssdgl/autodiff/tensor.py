"""Tensor container and the gradient tape that records differentiable ops."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class TapeError(RuntimeError):
    """Raised on misuse of a gradient tape (reuse, foreign loss, ...)."""


class Tensor:
    """Dense real array with an optional gradient requirement.

    The payload is a numpy array in row-major order. Tensors are treated as
    immutable by every op; only the trainer writes into parameter payloads.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # arithmetic sugar; the real work lives in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _wrap(other, self))

    def __rsub__(self, other):
        from . import ops

        return ops.sub(_wrap(other, self), self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def sum(self):
        from . import ops

        return ops.sum_all(self)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def parameter(data, name: str | None = None) -> Tensor:
    """Create a leaf tensor that receives gradients."""
    return Tensor(data, requires_grad=True, name=name)


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.output = output
        self.inputs = inputs
        self.backward = backward


_ACTIVE: list["GradTape"] = []


class GradTape:
    """Ordered record of differentiable operations.

    Use as a context manager; every op executed inside the block whose inputs
    require gradients is appended. A tape can be replayed backward once.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._outputs: set[int] = set()
        self.consumed = False

    def __enter__(self) -> "GradTape":
        if self.consumed:
            raise TapeError("tape was already consumed by backward(); record a new one")
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self._records)

    def _push(self, output: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append(_Record(output, inputs, backward))
        self._outputs.add(id(output))


def make_result(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap an op result and record it on the active tape when needed.

    ``backward`` maps the output gradient to one gradient per input (``None``
    for inputs that do not need one).
    """
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs and _ACTIVE:
        _ACTIVE[-1]._push(out, tuple(inputs), backward)
    return out


def backward(
    loss: Tensor,
    tape: GradTape,
    wrt: Iterable[Tensor] | None = None,
) -> dict[Tensor, Tensor]:
    """Replay ``tape`` in reverse and return gradients of a scalar ``loss``.

    With ``wrt`` given, every listed tensor gets an entry (zeros when the loss
    does not depend on it). Otherwise all leaf tensors that require grad and
    were reached are returned.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("tape was already consumed; re-record before calling backward again")
    if id(loss) not in tape._outputs:
        raise TapeError("loss was not produced under this tape")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape._records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if id(t) not in tape._outputs:
                leaves[id(t)] = t
            prev = grads.get(id(t))
            grads[id(t)] = gi if prev is None else prev + gi
    tape._records.clear()

    if wrt is None:
        return {t: Tensor(grads[k]) for k, t in leaves.items()}
    out = {}
    for t in wrt:
        g = grads.get(id(t))
        out[t] = Tensor(np.zeros_like(t.data) if g is None else g)
    return out
