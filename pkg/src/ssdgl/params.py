"""Named parameter collection and the SSDM model file.

SSDM layout (little-endian): magic ``SSDM``, u32 version=1, u32 header length
followed by that many bytes of ``key = value`` text, u32 tensor count, then per
tensor: u32 name length, name bytes (utf-8), u32 rank, rank x u32 dims, float32
payload.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterator

import numpy as np

from .autodiff import Tensor
from .data import LoadError

MODEL_MAGIC = b"SSDM"
MODEL_VERSION = 1

# name prefixes of the encoder side; everything else belongs to the decoder
ENCODER_PREFIXES = ("gcl.", "spec_att.", "spat_att.", "stem.", "enc.")


class ParamStore:
    """Ordered map of parameter name to leaf ``Tensor``."""

    def __init__(self, tensors: dict[str, np.ndarray] | None = None):
        self._items: OrderedDict[str, Tensor] = OrderedDict()
        for name, arr in (tensors or {}).items():
            self.add(name, arr)

    def add(self, name: str, arr: np.ndarray) -> Tensor:
        if name in self._items:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.ascontiguousarray(arr), requires_grad=True, name=name)
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return self._items.items()

    def tensors(self) -> list[Tensor]:
        return list(self._items.values())

    @property
    def encoder_names(self) -> list[str]:
        return [n for n in self._items if n.startswith(ENCODER_PREFIXES)]

    @property
    def decoder_names(self) -> list[str]:
        return [n for n in self._items if not n.startswith(ENCODER_PREFIXES)]

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({n: t.data.astype(dtype) for n, t in self._items.items()})

    def copy(self) -> "ParamStore":
        return ParamStore({n: t.data.copy() for n, t in self._items.items()})

    def num_values(self) -> int:
        return sum(t.size for t in self._items.values())

    def equal(self, other: "ParamStore") -> bool:
        return list(self) == list(other) and all(
            np.array_equal(self[n].data, other[n].data) for n in self
        )


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def save_model(path, params: ParamStore, header: dict[str, str]) -> None:
    text = "".join(f"{k} = {v}\n" for k, v in header.items()).encode("utf-8")
    parts = [MODEL_MAGIC, _u32(MODEL_VERSION), _u32(len(text)), text, _u32(len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts += [_u32(len(raw)), raw, _u32(t.data.ndim)]
        parts += [_u32(d) for d in t.shape]
        parts.append(t.data.astype("<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise LoadError(f"truncated model file: need {self.pos + n} bytes, have {len(self.raw)}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def parse_header(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise LoadError(f"malformed header line {line!r}")
        out[key.strip()] = value.strip()
    return out


def load_model(path) -> tuple[dict[str, str], ParamStore]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MODEL_MAGIC:
        raise LoadError("not an SSDM model file")
    if (v := r.u32()) != MODEL_VERSION:
        raise LoadError(f"unsupported model version {v}")
    header = parse_header(r.take(r.u32()).decode("utf-8"))
    store = ParamStore()
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        dims = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(dims))
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
        store.add(name, arr)
    if r.pos != len(r.raw):
        raise LoadError(f"{len(r.raw) - r.pos} trailing bytes in model file")
    return header, store
