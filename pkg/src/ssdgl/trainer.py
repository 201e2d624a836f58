"""Weighted masked loss, momentum SGD with decoupled decay, and the training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, Tensor
from .network import NetConfig, ssdgl_forward
from .params import ParamStore, save_model
from .sampler import ClassWeights, HierarchicalSchedule, mask_of

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Raised when the loss stops being finite; the last checkpoint is kept."""


def _embed(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if arr.shape == shape:
        return arr
    if arr.shape[0] > shape[0] or arr.shape[1] > shape[1]:
        raise ad.ShapeError(f"raster {arr.shape} larger than logits {shape}")
    out = np.zeros(shape, dtype=arr.dtype)
    out[: arr.shape[0], : arr.shape[1]] = arr
    return out


def weighted_masked_loss(
    logits: Tensor,
    labels: np.ndarray,
    mask: np.ndarray,
    weights: ClassWeights | np.ndarray,
) -> Tensor:
    """Class-weighted cross-entropy averaged over the ``K`` masked pixels.

    ``labels`` and ``mask`` may be smaller than the logits (unpadded extent);
    they are placed at the top-left corner.
    """
    w = weights.weights if isinstance(weights, ClassWeights) else np.asarray(weights)
    m, h, wd = logits.shape
    if len(w) != m:
        raise ad.ShapeError(f"{len(w)} class weights for {m} logit channels")
    lab = _embed(np.asarray(labels), (h, wd))
    msk = _embed(np.asarray(mask), (h, wd))
    rows, cols = np.nonzero(msk)
    if len(rows) == 0:
        raise ValueError("empty mask: no pixels contribute to the loss")
    cls = lab[rows, cols]
    if np.any(cls == 0):
        raise ValueError("mask selects unlabeled pixels (corrupt schedule)")
    if np.any(cls > m):
        raise ValueError(f"label exceeds the {m} logit channels")
    picked = ad.gather_pixels(ad.log_softmax(logits, axis=0), cls - 1, rows, cols)
    coef = Tensor((w[cls - 1] / len(rows)).astype(logits.dtype))
    return ad.scale(ad.sum_all(ad.mul(picked, coef)), -1.0)


@dataclass
class OptimState:
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.001
    power: float = 0.8
    max_iter: int = 1000
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    iteration: int = 0


def lr_at(it: int, opt: OptimState) -> float:
    """Polynomial decay ``lr * (1 - it/max_iter)**power``; ``it`` is clamped to ``max_iter - 1``."""
    if it < 0:
        raise ValueError("iteration must be non-negative")
    it = min(it, opt.max_iter - 1)
    return opt.lr * (1.0 - it / opt.max_iter) ** opt.power


def sgd_step(params: ParamStore, grads: dict[str, np.ndarray], opt: OptimState, lr: float) -> None:
    """``v = mu*v + g``; ``theta = theta*(1 - lr*wd) - lr*v`` for every parameter."""
    missing = [n for n in params if n not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters {missing[:3]}...")
    for name, t in params.items():
        g = grads[name]
        if g.shape != t.shape:
            raise ad.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {t.shape}")
        dt = t.dtype.type
        v = opt.velocity.get(name)
        v = g.astype(t.dtype, copy=True) if v is None else dt(opt.momentum) * v + g
        opt.velocity[name] = v
        t.data *= dt(1.0 - lr * opt.weight_decay)
        t.data -= dt(lr) * v


@dataclass
class LogRecord:
    epoch: int
    stratum: int
    loss: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    records: list[LogRecord] = field(default_factory=list)

    def append(self, rec: LogRecord) -> None:
        if not np.isfinite(rec.loss):
            raise TrainingAborted(f"non-finite loss {rec.loss} at epoch {rec.epoch}, stratum {rec.stratum}")
        self.records.append(rec)

    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_tsv(self, with_time: bool = True) -> str:
        lines = ["epoch\tstratum\tloss\tlr\tseconds"]
        for r in self.records:
            secs = f"{r.seconds:.3f}" if with_time else "-"
            lines.append(f"{r.epoch}\t{r.stratum}\t{r.loss:.9g}\t{r.lr:.9g}\t{secs}")
        return "\n".join(lines) + "\n"

    def write(self, path, with_time: bool = True) -> None:
        Path(path).write_text(self.to_tsv(with_time))


@dataclass
class TrainSettings:
    epochs: int = 600
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.001
    power: float = 0.8
    max_iter: int = 1000
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    early_stop: bool = False


def loss_and_grads(
    x: Tensor, labels: np.ndarray, mask: np.ndarray, weights, params: ParamStore, cfg: NetConfig
) -> tuple[float, dict[str, np.ndarray]]:
    with GradTape() as tape:
        loss = weighted_masked_loss(ssdgl_forward(x, params, cfg), labels, mask, weights)
    grads = ad.backward(loss, tape, wrt=params.tensors())
    return loss.item(), {n: grads[t].data for n, t in params.items()}


def train(
    cube: np.ndarray,
    labels: np.ndarray,
    params: ParamStore,
    cfg: NetConfig,
    schedule: HierarchicalSchedule,
    weights: ClassWeights,
    settings: TrainSettings,
    header: dict[str, str] | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[ParamStore, TrainLog]:
    """Run the epoch loop; each epoch visits every stratum mask in order.

    ``params`` is updated in place and returned. The learning rate is indexed
    by epoch. Non-finite losses raise ``TrainingAborted`` without touching the
    last written checkpoint.
    """
    x = Tensor(np.asarray(cube))
    opt = OptimState(settings.lr, settings.momentum, settings.weight_decay,
                     settings.power, settings.max_iter)
    masks = [mask_of(schedule, s) for s in range(schedule.alpha)]
    trainlog = TrainLog()
    header = dict(header or cfg.to_header())
    start = time.perf_counter()
    prev_mean, flat_epochs = None, 0

    def checkpoint():
        if settings.checkpoint_path:
            save_model(settings.checkpoint_path, params, header)

    for epoch in range(settings.epochs):
        lr = lr_at(epoch, opt)
        epoch_losses = []
        for s, mask in enumerate(masks):
            loss, grads = loss_and_grads(x, labels, mask, weights, params, cfg)
            trainlog.append(LogRecord(epoch, s, loss, lr, time.perf_counter() - start))
            sgd_step(params, grads, opt, lr)
            opt.iteration += 1
            epoch_losses.append(loss)
        opt.epoch = epoch + 1
        mean = float(np.mean(epoch_losses))
        log.debug("epoch %d lr %.6g mean loss %.6g", epoch, lr, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
        if settings.checkpoint_every and (epoch + 1) % settings.checkpoint_every == 0:
            checkpoint()
        if settings.early_stop:
            flat_epochs = flat_epochs + 1 if prev_mean is not None and abs(mean - prev_mean) < 1e-6 else 0
            prev_mean = mean
            if flat_epochs >= 20:
                log.info("loss flat for 20 epochs, stopping at epoch %d", epoch)
                break
    checkpoint()
    return params, trainlog
