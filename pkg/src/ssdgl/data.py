"""Hyperspectral cubes, label rasters, their binary formats, and a synthetic generator.

File layouts (all little-endian):

* ``HSIC`` cube: magic, u32 version=1, u32 H, u32 W, u32 C, then C*H*W float32
  values, band-sequential (band-major, row-major within a band).
* ``HSIG`` labels: magic, u32 version=1, u32 H, u32 W, then H*W u16 labels,
  row-major, 0 = unlabeled.
* Classification maps are binary P6 pixmaps.
"""

from __future__ import annotations

import colorsys
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

CUBE_MAGIC = b"HSIC"
LABEL_MAGIC = b"HSIG"
FORMAT_VERSION = 1
ALIGN = 16


class LoadError(ValueError):
    pass


class BadMagicError(LoadError):
    pass


class TruncatedError(LoadError):
    pass


class EmptyDimensionError(LoadError):
    pass


class NoLabelsError(ValueError):
    """Raised when a raster carries no labeled pixels."""


@dataclass
class HsiCube:
    """Spectral cube stored as a ``[C, H, W]`` float32 array.

    ``original_dims`` holds ``(H, W)`` before network padding.
    """

    values: np.ndarray
    original_dims: tuple[int, int] | None = None

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValueError(f"cube must be a non-empty [C,H,W] array, got {self.values.shape}")
        if self.original_dims is None:
            self.original_dims = (self.height, self.width)

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelRaster:
    labels: np.ndarray
    num_classes: int = field(init=False)

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError(f"label raster must be 2-d, got shape {self.labels.shape}")
        self.labels = self.labels.astype(np.int64, copy=False)
        if self.labels.min(initial=0) < 0:
            raise ValueError("labels must be non-negative")
        self.num_classes = int(self.labels.max(initial=0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def labeled_count(self) -> int:
        return int(np.count_nonzero(self.labels))

    def class_counts(self) -> np.ndarray:
        """Pixel count per class 1..M."""
        return np.bincount(self.labels.ravel(), minlength=self.num_classes + 1)[1:]

    def require_labels(self) -> None:
        if self.num_classes == 0:
            raise NoLabelsError("label raster has no labeled pixels")


# -- binary formats --------------------------------------------------------------


def _read(path) -> bytes:
    return Path(path).read_bytes()


def _header(raw: bytes, magic: bytes, nfields: int) -> tuple[int, ...]:
    size = 4 + 4 * nfields
    if raw[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {raw[:4]!r}")
    if len(raw) < size:
        raise TruncatedError(f"header needs {size} bytes, file has {len(raw)}")
    version, *dims = struct.unpack_from(f"<{nfields}I", raw, 4)
    if version != FORMAT_VERSION:
        raise LoadError(f"unsupported format version {version}")
    if min(dims) == 0:
        raise EmptyDimensionError(f"zero dimension in header {tuple(dims)}")
    return tuple(dims)


def _check_payload(raw: bytes, offset: int, expected: int) -> None:
    actual = len(raw) - offset
    if actual != expected:
        kind = "truncated" if actual < expected else "oversized"
        raise TruncatedError(f"{kind} payload: expected {expected} bytes, got {actual}")


def save_cube(cube: HsiCube, path) -> None:
    c, h, w = cube.values.shape
    head = CUBE_MAGIC + struct.pack("<4I", FORMAT_VERSION, h, w, c)
    Path(path).write_bytes(head + cube.values.astype("<f4").tobytes())


def load_cube(path) -> HsiCube:
    raw = _read(path)
    h, w, c = _header(raw, CUBE_MAGIC, 4)
    _check_payload(raw, 20, 4 * c * h * w)
    values = np.frombuffer(raw, dtype="<f4", offset=20).reshape(c, h, w).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise LoadError("cube contains non-finite values")
    return HsiCube(values)


def save_labels(raster: LabelRaster | np.ndarray, path) -> None:
    arr = raster.labels if isinstance(raster, LabelRaster) else np.asarray(raster)
    if arr.max(initial=0) > 0xFFFF or arr.min(initial=0) < 0:
        raise ValueError("labels must fit in an unsigned 16-bit integer")
    h, w = arr.shape
    head = LABEL_MAGIC + struct.pack("<3I", FORMAT_VERSION, h, w)
    Path(path).write_bytes(head + arr.astype("<u2").tobytes())


def load_labels(path) -> LabelRaster:
    raw = _read(path)
    h, w = _header(raw, LABEL_MAGIC, 3)
    _check_payload(raw, 16, 2 * h * w)
    return LabelRaster(np.frombuffer(raw, dtype="<u2", offset=16).reshape(h, w))


# -- preprocessing -----------------------------------------------------------------


def padded_size(n: int, align: int = ALIGN) -> int:
    return -(-n // align) * align


def pad_for_network(cube: HsiCube) -> tuple[HsiCube, tuple[int, int]]:
    """Zero-pad bottom/right so H and W become multiples of 16."""
    dims = cube.original_dims
    c, h, w = cube.values.shape
    hp, wp = padded_size(h), padded_size(w)
    if (hp, wp) == (h, w):
        return HsiCube(cube.values, original_dims=dims), dims
    out = np.zeros((c, hp, wp), dtype=cube.values.dtype)
    out[:, :h, :w] = cube.values
    return HsiCube(out, original_dims=dims), dims


def crop(cube: HsiCube, dims: tuple[int, int]) -> HsiCube:
    h, w = dims
    return HsiCube(np.ascontiguousarray(cube.values[:, :h, :w]))


def normalize(cube: HsiCube) -> HsiCube:
    """Per-band population standardization; constant bands become zeros."""
    v = cube.values.astype(np.float64)
    flat = v.reshape(v.shape[0], -1)
    mean = flat.mean(axis=1)
    std = flat.std(axis=1)
    safe = np.where(std > 0, std, 1.0)
    out = (flat - mean[:, None]) / safe[:, None]
    out[std == 0] = 0.0
    return HsiCube(out.reshape(v.shape).astype(np.float32), original_dims=cube.original_dims)


# -- synthetic data -----------------------------------------------------------------


def _quota(fractions: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``fractions * total`` without exceeding the sum."""
    raw = fractions * total
    counts = np.floor(raw).astype(np.int64)
    target = min(total, int(round(raw.sum())))
    order = np.argsort(-(raw - counts), kind="stable")
    for k in order[: max(0, target - counts.sum())]:
        counts[k] += 1
    return counts


def synth_cube(
    seed: int,
    height: int,
    width: int,
    bands: int,
    num_classes: int,
    class_fractions,
    noise: float = 0.15,
    blob_scale: float | None = None,
) -> tuple[HsiCube, LabelRaster]:
    """Deterministic synthetic scene with blob-shaped classes.

    Each class claims exactly its quota of pixels from the highest values of
    its own smoothed random field, so regions are spatially coherent. Every
    class gets a smooth spectral signature; pixels add Gaussian noise and a
    mild smooth brightness variation.
    """
    fr = np.asarray(class_fractions, dtype=np.float64)
    if num_classes < 1 or fr.shape != (num_classes,):
        raise ValueError(f"need {num_classes} class fractions, got {fr.shape}")
    if np.any(fr <= 0) or fr.sum() > 1 + 1e-9:
        raise ValueError("class fractions must be positive and sum to at most 1")
    if min(height, width, bands) < 1:
        raise ValueError("cube dimensions must be positive")

    rng = np.random.default_rng(seed)
    n = height * width
    counts = _quota(fr, n)
    if np.any(counts == 0):
        raise ValueError("a requested class fraction rounds to zero pixels")
    if fr.sum() >= 1 - 1e-9:
        counts[-1] = n - counts[:-1].sum()

    sigma = blob_scale if blob_scale is not None else max(height, width) / 10.0
    labels = np.zeros(n, dtype=np.int64)
    free = np.ones(n, dtype=bool)
    # smallest classes pick first so their blobs stay compact
    for k in np.argsort(counts, kind="stable"):
        score = gaussian_filter(rng.standard_normal((height, width)), sigma, mode="wrap").ravel()
        score = np.where(free, score, -np.inf)
        take = np.argsort(-score, kind="stable")[: counts[k]]
        labels[take] = k + 1
        free[take] = False

    grid = np.linspace(0.0, 1.0, bands)
    signatures = np.empty((num_classes + 1, bands))
    for k in range(num_classes + 1):
        base = rng.uniform(0.2, 0.6) + rng.uniform(-0.3, 0.3) * grid
        for _ in range(3):
            centre, width_, amp = rng.uniform(0, 1), rng.uniform(0.05, 0.25), rng.uniform(-0.5, 0.5)
            base = base + amp * np.exp(-0.5 * ((grid - centre) / width_) ** 2)
        signatures[k] = base

    shade = 1.0 + 0.1 * gaussian_filter(rng.standard_normal((height, width)), sigma, mode="wrap")
    spectra = signatures[labels].reshape(height, width, bands) * shade[..., None]
    spectra = spectra + noise * rng.standard_normal((height, width, bands))
    cube = HsiCube(np.ascontiguousarray(spectra.transpose(2, 0, 1)).astype(np.float32))
    return cube, LabelRaster(labels.reshape(height, width))


# -- rendering --------------------------------------------------------------------------


def palette(num_classes: int) -> np.ndarray:
    """RGB triples for labels 0..M: black background, class k at hue k/M."""
    out = np.zeros((num_classes + 1, 3), dtype=np.uint8)
    for k in range(1, num_classes + 1):
        rgb = colorsys.hsv_to_rgb((k / num_classes) % 1.0, 1.0, 1.0)
        out[k] = [int(round(255 * c)) for c in rgb]
    return out


def render_map(labels: LabelRaster | np.ndarray, colors: np.ndarray, path) -> None:
    arr = labels.labels if isinstance(labels, LabelRaster) else np.asarray(labels)
    if arr.min(initial=0) < 0 or arr.max(initial=0) > len(colors) - 1:
        raise ValueError(f"label out of range for a palette of {len(colors)} entries")
    h, w = arr.shape
    pixels = colors[arr].astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels)
