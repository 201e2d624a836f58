"""Train/test splitting, hierarchically balanced mask schedules and class weights."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import LabelRaster


@dataclass(frozen=True)
class SampleSplit:
    """Per-class train pixels (flat indices into the H x W grid) and the test remainder."""

    shape: tuple[int, int]
    train: tuple[np.ndarray, ...]
    test: np.ndarray
    ratio: float | None
    count: int | None
    min_train: int

    @property
    def num_classes(self) -> int:
        return len(self.train)

    @property
    def train_counts(self) -> np.ndarray:
        return np.array([len(t) for t in self.train], dtype=np.int64)

    def train_indices(self) -> np.ndarray:
        return np.sort(np.concatenate(self.train))

    def train_raster(self, labels: LabelRaster) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.int64)
        idx = self.train_indices()
        out.flat[idx] = labels.labels.flat[idx]
        return out

    def test_raster(self, labels: LabelRaster) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.int64)
        out.flat[self.test] = labels.labels.flat[self.test]
        return out


def train_count(n: int, ratio: float, min_train: int) -> int:
    """``max(min_train, ceil(n * ratio))`` capped at ``n``.

    The product is taken on the decimal value of ``ratio`` so that e.g.
    ``20 * 0.05`` is exactly 1 rather than one ulp above it.
    """
    want = math.ceil(Fraction(str(ratio)) * n)
    return min(n, max(min_train, want))


def split(
    labels: LabelRaster,
    ratio: float | None = None,
    count: int | None = None,
    min_train: int = 5,
    seed: int = 0,
) -> SampleSplit:
    """Partition labeled pixels per class into train and test.

    Exactly one of ``ratio`` (fraction in (0, 1]) or ``count`` (fixed pixels
    per class) selects the mode. Selection within a class is a seeded shuffle.
    """
    if (ratio is None) == (count is None):
        raise ValueError("give exactly one of ratio or count")
    if ratio is not None and not 0 < ratio <= 1:
        raise ValueError(f"train ratio must lie in (0, 1], got {ratio}")
    if count is not None and count < 1:
        raise ValueError(f"train count must be positive, got {count}")
    labels.require_labels()
    counts = labels.class_counts()
    missing = [k + 1 for k, n in enumerate(counts) if n == 0]
    if missing:
        raise ValueError(f"classes without labeled pixels: {missing}")

    rng = np.random.default_rng(seed)
    flat = labels.labels.ravel()
    train, test = [], []
    for k, n in enumerate(counts, start=1):
        pool = np.flatnonzero(flat == k)
        take = min(count, n) if count is not None else train_count(int(n), ratio, min_train)
        perm = rng.permutation(pool)
        train.append(np.sort(perm[:take]))
        test.append(perm[take:])
    return SampleSplit(
        shape=labels.shape,
        train=tuple(train),
        test=np.sort(np.concatenate(test)),
        ratio=ratio,
        count=count,
        min_train=min_train,
    )


@dataclass(frozen=True)
class HierarchicalSchedule:
    """``alpha`` strata; ``draws[s][k]`` are the class-(k+1) pixels of stratum ``s``."""

    shape: tuple[int, int]
    alpha: int
    beta: int | None
    draws: tuple[tuple[np.ndarray, ...], ...]

    def mask(self, stratum: int) -> np.ndarray:
        return mask_of(self, stratum)

    def masked_count(self, stratum: int) -> int:
        return int(sum(len(d) for d in self.draws[stratum]))


def build_schedule(split_: SampleSplit, alpha: int, beta: int, seed: int = 0) -> HierarchicalSchedule:
    """Draw ``alpha`` balanced strata, up to ``beta`` pixels per class each.

    Every stratum reshuffles each class pool independently, so strata are
    balanced but may share pixels. Classes with fewer than ``beta`` training
    pixels contribute all of them.
    """
    if alpha < 1 or beta < 1:
        raise ValueError(f"alpha and beta must be >= 1, got alpha={alpha}, beta={beta}")
    empty = [k + 1 for k, t in enumerate(split_.train) if len(t) == 0]
    if empty:
        raise ValueError(f"classes with no training pixels: {empty}")
    rng = np.random.default_rng(seed)
    strata = []
    for _ in range(alpha):
        strata.append(tuple(np.sort(rng.permutation(pool)[:beta]) for pool in split_.train))
    return HierarchicalSchedule(split_.shape, alpha, beta, tuple(strata))


def full_schedule(split_: SampleSplit) -> HierarchicalSchedule:
    """Single stratum holding every training pixel (no per-class balancing)."""
    return HierarchicalSchedule(split_.shape, 1, None, (tuple(split_.train),))


def mask_of(schedule: HierarchicalSchedule, stratum: int) -> np.ndarray:
    if not 0 <= stratum < schedule.alpha:
        raise IndexError(f"stratum {stratum} out of range for alpha={schedule.alpha}")
    mask = np.zeros(schedule.shape, dtype=np.uint8)
    for idx in schedule.draws[stratum]:
        mask.flat[idx] = 1
    return mask


@dataclass(frozen=True)
class ClassWeights:
    delta: float
    counts: np.ndarray
    m: np.ndarray
    q: np.ndarray
    weights: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.weights)


def class_weights(counts, delta: float) -> ClassWeights:
    """Effective-number weights ``w_j = q_j / sum(q) * M`` with ``q = (1-delta)/(1-delta^n)``."""
    n = np.asarray(counts, dtype=np.float64)
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if n.ndim != 1 or len(n) == 0 or np.any(n < 1):
        raise ValueError("class counts must be a non-empty vector of values >= 1")
    m = -np.expm1(n * np.log(delta))
    q = (1.0 - delta) / m
    w = q / q.sum() * len(n)
    return ClassWeights(delta, n, m, q, w)


def unit_weights(num_classes: int) -> ClassWeights:
    ones = np.ones(num_classes)
    return ClassWeights(0.0, ones, ones, ones, ones)


def sampling_prob(counts, q: float) -> np.ndarray:
    """Class sampling probabilities ``n_j^q / sum_i n_i^q`` (q=1 instance, 0 class, 1/2 sqrt)."""
    n = np.asarray(counts, dtype=np.float64)
    if np.any(n < 1):
        raise ValueError("class sizes must be >= 1")
    if not 0 <= q <= 1:
        raise ValueError(f"exponent q must lie in [0, 1], got {q}")
    p = n**q
    return p / p.sum()
