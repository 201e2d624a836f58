"""Default finite-difference suite behind ``ssdgl gradcheck``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check_many
from .data import synth_cube
from .network import NetConfig, init_params, ssdgl_forward
from .trainer import weighted_masked_loss

TOLERANCE = 1e-4

# tiny float64 model used for the whole-network check
TINY_NET = NetConfig(8, 3, time_steps=2, cell_kernel=3, hidden_channels=4, reduction_ratio=2,
                     spatial_kernel=3, gn_groups=4, skip_channels=8, encoder_channels=(8, 8, 8, 16))


def _p(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _op_cases(rng) -> dict[str, tuple[Callable, list[Tensor]]]:
    x = _p(rng, 3, 6, 6)
    k = _p(rng, 2, 3, 3, 3)
    b = _p(rng, 2)
    return {
        "add": (ad.add, [_p(rng, 2, 3, 4), _p(rng, 2, 1, 1)]),
        "mul": (ad.mul, [_p(rng, 2, 3, 4), _p(rng, 1, 3, 4)]),
        "sigmoid": (ad.sigmoid, [_p(rng, 2, 3, 3)]),
        "tanh": (ad.tanh, [_p(rng, 2, 3, 3)]),
        "relu": (ad.relu, [_p(rng, 2, 3, 3)]),
        "concat": (lambda a, c: ad.concat([a, c]), [_p(rng, 1, 3, 3), _p(rng, 2, 3, 3)]),
        "conv2d": (lambda a, w, c: ad.conv2d(a, w, c, stride=1, padding=1), [x, k, b]),
        "conv2d_stride2": (lambda a, w, c: ad.conv2d(a, w, c, stride=2, padding=1), [x, k, b]),
        "pool_global": (lambda a: ad.pool_global(a, "max"), [_p(rng, 3, 4, 4)]),
        "pool_channel": (lambda a: ad.pool_channel(a, "avg"), [_p(rng, 3, 4, 4)]),
        "upsample2x": (ad.upsample2x, [_p(rng, 2, 3, 3)]),
        "log_softmax": (ad.log_softmax, [_p(rng, 4, 3, 3)]),
        "linear": (ad.linear, [_p(rng, 5), _p(rng, 3, 5), _p(rng, 3)]),
        "group_norm": (lambda a, g, c: ad.group_norm(a, 2, g, c), [_p(rng, 4, 3, 3), _p(rng, 4), _p(rng, 4)]),
    }


def op_errors(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    out = {}
    for name, (op, inputs) in _op_cases(rng).items():
        probe = Tensor(rng.standard_normal(op(*inputs).shape))
        out[name] = grad_check_many(lambda: ad.sum_all(ad.mul(op(*inputs), probe)), inputs)
    return out


def model_error(seed: int = 0, max_coords: int = 4) -> float:
    """Whole-network loss check on a 16x16x8 cube.

    Uses step 1e-6: the relu/max network is piecewise smooth and a 1e-5 step
    can straddle a kink, which inflates the difference quotient.
    """
    cube, lab = synth_cube(seed + 1, 16, 16, 8, 3, (0.4, 0.4, 0.2))
    params = init_params(TINY_NET, seed=seed, dtype=np.float64)
    x = Tensor(cube.values.astype(np.float64))
    mask = (np.random.default_rng(seed).random(lab.shape) < 0.2) & (lab.labels > 0)
    w = np.array([0.8, 1.0, 1.2])
    fn = lambda: weighted_masked_loss(ssdgl_forward(x, params, TINY_NET), lab.labels, mask, w)
    return grad_check_many(fn, params.tensors(), step=1e-6, max_coords=max_coords, seed=seed)


def default_suite(seed: int = 0) -> dict[str, float]:
    errors = op_errors(seed)
    errors["model"] = model_error(seed)
    return errors
