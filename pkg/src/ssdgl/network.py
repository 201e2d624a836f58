"""Whole-image spectral-spatial network.

Pipeline: grouped-band ConvLSTM stem (two stacked layers over band groups),
channel attention, spatial attention, a 1x1 projection, then a four-stage
encoder-decoder with projected additive skips and a 1x1 classifier head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    in_bands: int
    num_classes: int
    time_steps: int = 8
    cell_kernel: int = 5
    hidden_channels: int = 64
    reduction_ratio: int = 16
    spatial_kernel: int = 7
    gn_groups: int = 4
    skip_channels: int = 128
    encoder_channels: tuple[int, ...] = (64, 96, 128, 192)
    use_gcl: bool = True
    use_gjam: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        self.validate()

    def validate(self) -> None:
        if self.in_bands < 1:
            raise ConfigError("in_bands must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.cell_kernel % 2 == 0 or self.spatial_kernel % 2 == 0:
            raise ConfigError("cell_kernel and spatial_kernel must be odd")
        if len(self.encoder_channels) != 4:
            raise ConfigError("encoder_channels needs exactly 4 stage widths")
        g = self.gn_groups
        if g < 1:
            raise ConfigError("gn_groups must be >= 1")
        widths = {"skip_channels": self.skip_channels, "hidden_channels": self.hidden_channels}
        widths.update({f"encoder_channels[{i}]": c for i, c in enumerate(self.encoder_channels)})
        for name, c in widths.items():
            if c < 1 or c % g:
                raise ConfigError(f"{name}={c} is not a positive multiple of gn_groups={g}")
        if self.use_gcl and not 1 <= self.time_steps <= self.in_bands:
            raise ConfigError(
                f"time_steps={self.time_steps} needs 1 <= time_steps <= bands ({self.in_bands})"
            )
        if self.use_gjam and not 1 <= self.reduction_ratio <= self.stem_channels:
            raise ConfigError(
                f"reduction_ratio={self.reduction_ratio} exceeds attention width {self.stem_channels}"
            )

    @property
    def stem_channels(self) -> int:
        return self.time_steps * self.hidden_channels if self.use_gcl else self.in_bands

    @property
    def group_sizes(self) -> list[int]:
        base, extra = divmod(self.in_bands, self.time_steps)
        return [base + 1 if i < extra else base for i in range(self.time_steps)]

    def to_header(self) -> dict[str, str]:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            out[k] = str(v)
        return out

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "NetConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in header:
                continue
            raw = header[f.name]
            if f.name == "encoder_channels":
                kwargs[f.name] = tuple(int(x) for x in raw.split(","))
            elif f.name.startswith("use_"):
                kwargs[f.name] = raw.lower() == "true"
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


# -- initialisation ------------------------------------------------------------


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name with its shape, in initialisation order."""
    s: dict[str, tuple[int, ...]] = {}
    hid, k = cfg.hidden_channels, cfg.cell_kernel
    if cfg.use_gcl:
        gmax = max(cfg.group_sizes)
        s["gcl.l1.weight"] = (4 * hid, gmax + hid, k, k)
        s["gcl.l1.bias"] = (4 * hid,)
        s["gcl.l2.weight"] = (4 * hid, 2 * hid, k, k)
        s["gcl.l2.bias"] = (4 * hid,)
    c = cfg.stem_channels
    if cfg.use_gjam:
        mid = max(1, c // cfg.reduction_ratio)
        s["spec_att.w0"] = (mid, c)
        s["spec_att.b0"] = (mid,)
        s["spec_att.w1"] = (c, mid)
        s["spec_att.b1"] = (c,)
        n = cfg.spatial_kernel
        s["spat_att.weight"] = (1, 2, n, n)
        s["spat_att.bias"] = (1,)
    enc = cfg.encoder_channels
    s["stem.weight"] = (enc[0], c, 1, 1)
    s["stem.bias"] = (enc[0],)
    prev = enc[0]
    for i, width in enumerate(enc):
        for j, cin in ((1, prev), (2, width)):
            s[f"enc.{i}.conv{j}.weight"] = (width, cin, 3, 3)
            s[f"enc.{i}.conv{j}.bias"] = (width,)
            s[f"enc.{i}.gn{j}.gamma"] = (width,)
            s[f"enc.{i}.gn{j}.beta"] = (width,)
        s[f"enc.{i}.down.weight"] = (width, width, 3, 3)
        s[f"enc.{i}.down.bias"] = (width,)
        s[f"enc.{i}.down_gn.gamma"] = (width,)
        s[f"enc.{i}.down_gn.beta"] = (width,)
        prev = width
    skip = cfg.skip_channels
    incoming = enc[-1]
    for i in reversed(range(4)):
        s[f"dec.{i}.skip.weight"] = (skip, enc[i], 1, 1)
        s[f"dec.{i}.skip.bias"] = (skip,)
        s[f"dec.{i}.up.weight"] = (skip, incoming, 1, 1)
        s[f"dec.{i}.up.bias"] = (skip,)
        s[f"dec.{i}.conv.weight"] = (skip, skip, 3, 3)
        s[f"dec.{i}.conv.bias"] = (skip,)
        s[f"dec.{i}.gn.gamma"] = (skip,)
        s[f"dec.{i}.gn.beta"] = (skip,)
        incoming = skip
    s["head.weight"] = (cfg.num_classes, skip, 1, 1)
    s["head.bias"] = (cfg.num_classes,)
    return s


def fan_in(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape[1:]))


def init_params(cfg: NetConfig, seed: int = 0, dtype=np.float32) -> ParamStore:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, forget-gate bias 1, GN identity."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    hid = cfg.hidden_channels
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gamma"):
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
            if name.startswith("gcl.") and name.endswith(".bias"):
                arr[hid : 2 * hid] = 1.0
        else:
            bound = np.sqrt(6.0 / fan_in(shape))
            arr = rng.uniform(-bound, bound, size=shape)
        store.add(name, arr.astype(dtype))
    return store


# -- building blocks ------------------------------------------------------------------


class CellState(NamedTuple):
    h: Tensor
    c: Tensor


def zero_state(hidden: int, height: int, width: int, dtype=np.float32) -> CellState:
    z = np.zeros((hidden, height, width), dtype=dtype)
    return CellState(Tensor(z), Tensor(z))


def convlstm_cell(x: Tensor, state: CellState, weight: Tensor, bias: Tensor) -> CellState:
    """One ConvLSTM step; gate blocks in the kernel are ordered input, forget, output, candidate."""
    hid = state.h.shape[0]
    if x.shape[1:] != state.h.shape[1:]:
        raise ad.ShapeError(f"input spatial dims {x.shape[1:]} differ from state {state.h.shape[1:]}")
    k = weight.shape[-1]
    z = ad.conv2d(ad.concat([x, state.h]), weight, bias, stride=1, padding=k // 2)
    i = ad.sigmoid(ad.channels(z, 0, hid))
    f = ad.sigmoid(ad.channels(z, hid, 2 * hid))
    o = ad.sigmoid(ad.channels(z, 2 * hid, 3 * hid))
    g = ad.tanh(ad.channels(z, 3 * hid, 4 * hid))
    c = ad.add(ad.mul(f, state.c), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return CellState(h, c)


def band_groups(x: Tensor, cfg: NetConfig) -> list[Tensor]:
    """Split bands into contiguous groups, zero-padding short groups to the widest."""
    sizes = cfg.group_sizes
    width = max(sizes)
    _, h, w = x.shape
    out, start = [], 0
    for n in sizes:
        part = ad.channels(x, start, start + n)
        if n < width:
            part = ad.concat([part, Tensor(np.zeros((width - n, h, w), dtype=x.dtype))])
        out.append(part)
        start += n
    return out


def gcl_forward(x: Tensor, params: ParamStore, cfg: NetConfig) -> Tensor:
    """Two stacked ConvLSTM layers over band groups; concatenated layer-2 hidden states."""
    c, h, w = x.shape
    if c < cfg.time_steps:
        raise ConfigError(f"{c} bands cannot fill {cfg.time_steps} time steps")
    if c != cfg.in_bands:
        raise ad.ShapeError(f"cube has {c} bands, network expects {cfg.in_bands}")
    hid = cfg.hidden_channels
    s1 = zero_state(hid, h, w, x.dtype)
    s2 = zero_state(hid, h, w, x.dtype)
    w1, b1 = params["gcl.l1.weight"], params["gcl.l1.bias"]
    w2, b2 = params["gcl.l2.weight"], params["gcl.l2.bias"]
    outs = []
    for xt in band_groups(x, cfg):
        s1 = convlstm_cell(xt, s1, w1, b1)
        s2 = convlstm_cell(s1.h, s2, w2, b2)
        outs.append(s2.h)
    return ad.concat(outs)


def spectral_weights(f: Tensor, params: ParamStore) -> Tensor:
    """Channel weights ``sigmoid(MLP(avg) + MLP(max))`` with a shared two-layer MLP, shape [C]."""
    w0, b0 = params["spec_att.w0"], params["spec_att.b0"]
    w1, b1 = params["spec_att.w1"], params["spec_att.b1"]

    def mlp(v):
        return ad.linear(ad.relu(ad.linear(v, w0, b0)), w1, b1)

    return ad.sigmoid(ad.add(mlp(ad.pool_global(f, "avg")), mlp(ad.pool_global(f, "max"))))


def spectral_attention(f: Tensor, params: ParamStore) -> Tensor:
    s = spectral_weights(f, params)
    return ad.mul(f, ad.reshape(s, (f.shape[0], 1, 1)))


def spatial_map(f: Tensor, params: ParamStore) -> Tensor:
    """Attention map ``sigmoid(conv([avg_c; max_c]))`` of shape [1, H, W]."""
    weight, bias = params["spat_att.weight"], params["spat_att.bias"]
    pooled = ad.concat([ad.pool_channel(f, "avg"), ad.pool_channel(f, "max")])
    return ad.sigmoid(ad.conv2d(pooled, weight, bias, stride=1, padding=weight.shape[-1] // 2))


def spatial_attention(f: Tensor, params: ParamStore) -> Tensor:
    return ad.mul(f, spatial_map(f, params))


def _conv(x: Tensor, params: ParamStore, name: str, stride: int = 1) -> Tensor:
    weight = params[f"{name}.weight"]
    return ad.conv2d(x, weight, params[f"{name}.bias"], stride=stride, padding=weight.shape[-1] // 2)


def _conv_gn_relu(x: Tensor, params: ParamStore, conv: str, gn: str, groups: int, stride: int = 1) -> Tensor:
    y = _conv(x, params, conv, stride)
    return ad.relu(ad.group_norm(y, groups, params[f"{gn}.gamma"], params[f"{gn}.beta"]))


def encoder_decoder(f: Tensor, params: ParamStore, cfg: NetConfig, trace: list | None = None) -> Tensor:
    """Map ``[C0, H, W]`` features to ``[M, H, W]`` logits. H and W must be multiples of 16.

    When ``trace`` is a list, the spatial size after every downsample is appended.
    """
    _, h, w = f.shape
    if h % 16 or w % 16:
        raise ad.ShapeError(f"encoder-decoder input {h}x{w} is not a multiple of 16; pad first")
    g = cfg.gn_groups
    skips = []
    x = f
    for i in range(4):
        x = _conv_gn_relu(x, params, f"enc.{i}.conv1", f"enc.{i}.gn1", g)
        x = _conv_gn_relu(x, params, f"enc.{i}.conv2", f"enc.{i}.gn2", g)
        skips.append(x)
        x = _conv_gn_relu(x, params, f"enc.{i}.down", f"enc.{i}.down_gn", g, stride=2)
        if trace is not None:
            trace.append(x.shape[1:])
    for i in reversed(range(4)):
        up = _conv(ad.upsample2x(x), params, f"dec.{i}.up")
        fused = ad.add(up, _conv(skips[i], params, f"dec.{i}.skip"))
        x = _conv_gn_relu(fused, params, f"dec.{i}.conv", f"dec.{i}.gn", g)
    return _conv(x, params, "head")


def stem_forward(x: Tensor, params: ParamStore, cfg: NetConfig) -> Tensor:
    """Spectral stem (GCL and attention, as enabled) ending in the 1x1 projection."""
    f = x
    if cfg.use_gcl:
        f = gcl_forward(f, params, cfg)
    elif f.shape[0] != cfg.in_bands:
        raise ad.ShapeError(f"cube has {f.shape[0]} bands, network expects {cfg.in_bands}")
    if cfg.use_gjam:
        f = spatial_attention(spectral_attention(f, params), params)
    return _conv(f, params, "stem")


def ssdgl_forward(x: Tensor | np.ndarray, params: ParamStore, cfg: NetConfig) -> Tensor:
    """Per-pixel class scores ``[M, H, W]`` for a padded, normalised ``[C, H, W]`` cube."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    return encoder_decoder(stem_forward(x, params, cfg), params, cfg)


def predict_labels(logits: Tensor | np.ndarray, dims: tuple[int, int] | None = None) -> np.ndarray:
    """Argmax class (1-based; ties go to the lowest index), cropped to ``dims``."""
    arr = logits.data if isinstance(logits, Tensor) else logits
    if dims is not None:
        arr = arr[:, : dims[0], : dims[1]]
    return arr.argmax(axis=0).astype(np.int64) + 1
