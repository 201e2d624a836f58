"""Differentiable operations over ``Tensor``.

Feature maps are laid out ``[C, H, W]`` (no batch axis: the whole image is
the batch). Every reduction uses numpy's fixed summation order, so results
are bitwise reproducible for a given input.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_result

GN_EPS = 1e-5


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- pointwise ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), back)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return make_result(x.data * c, (x,), lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return make_result(y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1 - y * y),))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    # np.maximum propagates NaN, so a diverging run is not silently masked
    return make_result(np.maximum(x.data, x.dtype.type(0)), (x,),
                       lambda g: (g * keep,))


def elementwise(fn: str, *xs: Tensor, axis: int = 0) -> Tensor:
    """Dispatch by name: sigmoid, tanh, relu, add, mul, concat."""
    unary = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
    binary = {"add": add, "mul": mul}
    if fn in unary:
        (x,) = xs
        return unary[fn](x)
    if fn in binary:
        a, b = xs
        return binary[fn](a, b)
    if fn == "concat":
        return concat(xs, axis=axis)
    raise ValueError(f"unknown elementwise function {fn!r}")


# -- shape ---------------------------------------------------------------------


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat of an empty list")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.data.ndim != len(ref) or any(
            n != m for i, (n, m) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return [
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) if t.requires_grad else None
            for i, t in enumerate(xs)
        ]

    return make_result(np.concatenate([t.data for t in xs], axis=axis), xs, back)


def channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``x[start:stop]`` along the leading axis."""
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for {x.shape}")

    def back(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return make_result(x.data[start:stop], (x,), back)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def sum_all(x: Tensor) -> Tensor:
    return make_result(
        np.asarray(x.data.sum(), dtype=x.dtype).reshape(()),
        (x,),
        lambda g: (np.broadcast_to(g, x.shape).copy(),),
    )


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of a ``[C, H, W]`` map."""
    c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def back(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return make_result(y, (x,), back)


def gather_pixels(x: Tensor, cls: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Pick ``x[cls[k], rows[k], cols[k]]`` into a vector."""

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (cls, rows, cols), g)
        return (full,)

    return make_result(x.data[cls, rows, cols], (x,), back)


def log_softmax(x: Tensor, axis: int = 0) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    soft = np.exp(y)

    def back(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return make_result(y, (x,), back)


# -- linear algebra --------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 1 or weight.data.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"linear: weight {weight.shape} does not accept input {x.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")

    def back(g):
        return weight.data.T @ g, np.outer(g, x.data), g

    return make_result(weight.data @ x.data + bias.data, (x, weight, bias), back)


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, : (ho - 1) * stride + 1 : stride,
                                                        : (wo - 1) * stride + 1 : stride]
    # (C, ho, wo, k, k) -> (C, k, k, ho, wo)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(-1, ho * wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a ``[C_in, H, W]`` map with ``[C_out, C_in, k, k]``."""
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] input and 4-d kernel, got {x.shape}, {kernel.shape}")
    c_out, c_in, k, k2 = kernel.shape
    c, h, w = x.shape
    if c != c_in:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {c_in} ({kernel.shape})")
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {kernel.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if k > hp or k > wp:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {hp}x{wp}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    w2 = kernel.data.reshape(c_out, -1)
    y = w2 @ _im2col(xp, k, stride, ho, wo)
    if bias is not None:
        y += bias.data[:, None]
    y = y.reshape(c_out, ho, wo)

    def back(g):
        g2 = g.reshape(c_out, -1)
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = (g2 @ _im2col(xp, k, stride, ho, wo).T).reshape(kernel.shape)
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, k, k, ho, wo)
            dxp = np.zeros((c, hp, wp), dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride] += dcols[:, i, j]
            gx = dxp[:, padding : padding + h, padding : padding + w] if padding else dxp
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(y, inputs, back)


# -- pooling & normalisation ---------------------------------------------------------


def _check_mode(mode: str) -> None:
    if mode not in ("avg", "max"):
        raise ValueError(f"pool mode must be 'avg' or 'max', got {mode!r}")


def pool_global(x: Tensor, mode: str) -> Tensor:
    """Per-channel mean or max over all spatial positions: ``[C,H,W] -> [C]``."""
    _check_mode(mode)
    if x.data.ndim != 3 or x.shape[1] * x.shape[2] == 0:
        raise ShapeError(f"pool_global needs a non-empty [C,H,W] map, got {x.shape}")
    c, h, w = x.shape
    flat = x.data.reshape(c, -1)
    if mode == "avg":
        return make_result(
            flat.mean(axis=1),
            (x,),
            lambda g: (np.broadcast_to((g / (h * w))[:, None, None], x.shape).astype(x.dtype),),
        )
    idx = flat.argmax(axis=1)

    def back(g):
        full = np.zeros_like(flat)
        full[np.arange(c), idx] = g
        return (full.reshape(x.shape),)

    return make_result(flat[np.arange(c), idx], (x,), back)


def pool_channel(x: Tensor, mode: str) -> Tensor:
    """Per-position mean or max across channels: ``[C,H,W] -> [1,H,W]``."""
    _check_mode(mode)
    if x.data.ndim != 3 or x.shape[0] == 0:
        raise ShapeError(f"pool_channel needs a [C,H,W] map with C >= 1, got {x.shape}")
    c = x.shape[0]
    if mode == "avg":
        return make_result(
            x.data.mean(axis=0, keepdims=True),
            (x,),
            lambda g: (np.broadcast_to(g / c, x.shape).astype(x.dtype),),
        )
    idx = x.data.argmax(axis=0)[None]
    y = np.take_along_axis(x.data, idx, axis=0)

    def back(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g, axis=0)
        return (full,)

    return make_result(y, (x,), back)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = GN_EPS) -> Tensor:
    """Normalise each channel group over (channels x positions), then scale/shift per channel."""
    c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: affine params must have shape ({c},)")
    xg = x.data.reshape(groups, -1)
    mu = xg.mean(axis=1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (xc * inv).reshape(c, h, w)
    y = xhat * gamma.data[:, None, None] + beta.data[:, None, None]
    n = xg.shape[1]

    def back(g):
        ggamma = (g * xhat).sum(axis=(1, 2))
        gbeta = g.sum(axis=(1, 2))
        gx = None
        if x.requires_grad:
            gh = (g * gamma.data[:, None, None]).reshape(groups, n)
            xh = xhat.reshape(groups, n)
            gx = inv * (gh - gh.mean(axis=1, keepdims=True)
                        - xh * (gh * xh).mean(axis=1, keepdims=True))
            gx = gx.reshape(c, h, w)
        return gx, ggamma, gbeta

    return make_result(y.astype(x.dtype, copy=False), (x, gamma, beta), back)
