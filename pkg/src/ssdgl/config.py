"""Run configuration: flat ``key = value`` text with ``#`` comments."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .network import NetConfig
from .trainer import TrainSettings


class ConfigValidationError(ValueError):
    pass


# file key -> attribute name, where they differ
ALIASES = {"lambda": "train_ratio"}
KEY_OF = {v: k for k, v in ALIASES.items()}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    train_ratio: float = 0.05
    train_count: int = 0  # > 0 switches to a fixed count per class
    min_train: int = 5
    alpha_strata: int = 10
    beta: int = 10
    delta: float = 0.999
    time_steps: int = 8
    cell_kernel: int = 5
    hidden_channels: int = 64
    reduction_ratio: int = 16
    spatial_kernel: int = 7
    gn_groups: int = 4
    skip_channels: int = 128
    encoder_channels: tuple[int, ...] = (64, 96, 128, 192)
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.001
    power: float = 0.8
    max_iter: int = 1000
    epochs: int = 600
    checkpoint_every: int = 50
    early_stop: bool = False
    use_gcl: bool = True
    use_gjam: bool = True
    use_hbwl: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigValidationError(msg)

        need(0 < self.train_ratio <= 1, f"lambda must lie in (0, 1], got {self.train_ratio}")
        need(self.train_count >= 0, "train_count must be >= 0")
        need(self.min_train >= 1, "min_train must be >= 1")
        need(self.alpha_strata >= 1, "alpha_strata must be >= 1")
        need(self.beta >= 1, "beta must be >= 1")
        need(0 < self.delta < 1, f"delta must lie in (0, 1), got {self.delta}")
        need(self.time_steps >= 1, "time_steps must be >= 1")
        need(self.cell_kernel >= 1 and self.cell_kernel % 2 == 1, "cell_kernel must be odd")
        need(self.spatial_kernel >= 1 and self.spatial_kernel % 2 == 1, "spatial_kernel must be odd")
        need(self.hidden_channels >= 1, "hidden_channels must be >= 1")
        need(self.reduction_ratio >= 1, "reduction_ratio must be >= 1")
        need(self.gn_groups >= 1, "gn_groups must be >= 1")
        need(len(self.encoder_channels) == 4, "encoder_channels needs 4 comma-separated widths")
        for name in ("skip_channels", "hidden_channels"):
            need(getattr(self, name) % self.gn_groups == 0,
                 f"{name} must be a multiple of gn_groups={self.gn_groups}")
        need(all(c >= 1 and c % self.gn_groups == 0 for c in self.encoder_channels),
             f"encoder_channels must be positive multiples of gn_groups={self.gn_groups}")
        need(self.lr > 0, "lr must be positive")
        need(0 <= self.momentum < 1, "momentum must lie in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(self.power >= 0, "power must be >= 0")
        need(self.max_iter >= 1, "max_iter must be >= 1")
        need(self.epochs >= 0, "epochs must be >= 0")
        need(self.checkpoint_every >= 0, "checkpoint_every must be >= 0")

    # -- conversions -------------------------------------------------------------

    def net_config(self, in_bands: int, num_classes: int) -> NetConfig:
        return NetConfig(
            in_bands=in_bands,
            num_classes=num_classes,
            time_steps=self.time_steps,
            cell_kernel=self.cell_kernel,
            hidden_channels=self.hidden_channels,
            reduction_ratio=self.reduction_ratio,
            spatial_kernel=self.spatial_kernel,
            gn_groups=self.gn_groups,
            skip_channels=self.skip_channels,
            encoder_channels=self.encoder_channels,
            use_gcl=self.use_gcl,
            use_gjam=self.use_gjam,
        )

    def train_settings(self, checkpoint_path: str | None = None) -> TrainSettings:
        return TrainSettings(
            epochs=self.epochs,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            power=self.power,
            max_iter=self.max_iter,
            checkpoint_every=self.checkpoint_every,
            checkpoint_path=checkpoint_path,
            early_stop=self.early_stop,
        )

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, tuple):
                s = ",".join(str(x) for x in v)
            else:
                s = repr(v) if isinstance(v, float) else str(v)
            out[KEY_OF.get(f.name, f.name)] = s
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(name: str, raw: str):
    kind = _TYPES[name]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigValidationError(f"bad value {raw!r} for {name} ({kind})") from None


def parse_pairs(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    kw = {}
    for key, raw in pairs.items():
        name = ALIASES.get(key, key)
        if name not in _TYPES:
            raise ConfigValidationError(f"unknown config key {key!r}")
        kw[name] = _convert(name, raw)
    return replace(base or RunConfig(), **kw)


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigValidationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key in pairs:
            raise ConfigValidationError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return parse_pairs(pairs, base)


def load_config(path) -> RunConfig:
    return parse_text(Path(path).read_text())
