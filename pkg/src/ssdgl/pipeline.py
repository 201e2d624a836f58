"""End-to-end wiring: normalise, pad, split, schedule, weight, initialise, train, predict."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import RunConfig
from .data import HsiCube, LabelRaster, normalize, pad_for_network
from .network import NetConfig, init_params, predict_labels, ssdgl_forward
from .params import ParamStore
from .sampler import (
    ClassWeights,
    HierarchicalSchedule,
    SampleSplit,
    build_schedule,
    class_weights,
    full_schedule,
    split,
    unit_weights,
)
from .trainer import TrainLog, train


def prepare_cube(cube: HsiCube) -> tuple[np.ndarray, tuple[int, int]]:
    padded, dims = pad_for_network(normalize(cube))
    return padded.values, dims


def make_split(labels: LabelRaster, run: RunConfig) -> SampleSplit:
    if run.train_count > 0:
        return split(labels, count=run.train_count, min_train=run.min_train, seed=run.seed)
    return split(labels, ratio=run.train_ratio, min_train=run.min_train, seed=run.seed)


def make_schedule(split_: SampleSplit, run: RunConfig) -> tuple[HierarchicalSchedule, ClassWeights]:
    # without H-B sampling: one stratum with every train pixel, unit weights
    if not run.use_hbwl:
        return full_schedule(split_), unit_weights(split_.num_classes)
    schedule = build_schedule(split_, run.alpha_strata, run.beta, seed=run.seed + 1)
    return schedule, class_weights(split_.train_counts, run.delta)


def model_header(run: RunConfig, cfg: NetConfig) -> dict[str, str]:
    head = run.to_dict()
    head["in_bands"] = str(cfg.in_bands)
    head["num_classes"] = str(cfg.num_classes)
    return head


@dataclass
class FitResult:
    params: ParamStore
    log: TrainLog
    net: NetConfig
    split: SampleSplit
    schedule: HierarchicalSchedule
    weights: ClassWeights
    dims: tuple[int, int]
    header: dict[str, str]


def fit(
    cube: HsiCube,
    labels: LabelRaster,
    run: RunConfig,
    checkpoint_path: str | None = None,
    on_epoch=None,
) -> FitResult:
    labels.require_labels()
    if labels.shape != (cube.height, cube.width):
        raise ValueError(f"label raster {labels.shape} does not match cube {cube.height}x{cube.width}")
    x, dims = prepare_cube(cube)
    split_ = make_split(labels, run)
    schedule, weights = make_schedule(split_, run)
    net = run.net_config(cube.bands, labels.num_classes)
    params = init_params(net, seed=run.seed)
    header = model_header(run, net)
    params, log = train(
        x, labels.labels, params, net, schedule, weights,
        run.train_settings(checkpoint_path), header=header, on_epoch=on_epoch,
    )
    return FitResult(params, log, net, split_, schedule, weights, dims, header)


def predict(cube: HsiCube, params: ParamStore, net: NetConfig) -> np.ndarray:
    """Label raster (1..M) over the original extent of ``cube``."""
    if cube.bands != net.in_bands:
        raise ValueError(f"cube has {cube.bands} bands, model expects {net.in_bands}")
    x, dims = prepare_cube(cube)
    return predict_labels(ssdgl_forward(Tensor(x), params, net), dims)
