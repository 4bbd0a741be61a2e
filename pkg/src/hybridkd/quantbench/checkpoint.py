"""KDF1 checkpoint files.

Layout, all integers little-endian::

    b"KDF1"  u32 version  u32 descriptor_len  descriptor (UTF-8 JSON)
    then n_tensors records:
      u32 name_len  name (UTF-8)  u8 dtype (0 = f32, 1 = i8)  u32 ndim  u32 dims[ndim]
      [f32 scale  i8 zero_point]   (i8 records only)
      payload, row-major little-endian

The descriptor holds the model configuration under ``"model"``, the record
count under ``"n_tensors"``, the precision, and for int8 files the
activation ranges.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO, Dict, List, Tuple, Union

import numpy as np

from ..errors import ConfigError, DimensionError, FormatError
from ..layers import Module
from ..models import build_model, describe
from .quantize import QuantModel

MAGIC = b"KDF1"
VERSION = 1
F32, I8 = 0, 1
_DTYPES = {F32: np.dtype("<f4"), I8: np.dtype("i1")}


def _descriptor_bytes(d: Dict) -> bytes:
    return json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_record(f: BinaryIO, name: str, arr: np.ndarray, scale: float = None, zero_point: int = 0) -> None:
    nb = name.encode("utf-8")
    tag = F32 if scale is None else I8
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<BI", tag, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    if tag == I8:
        f.write(struct.pack("<fb", scale, zero_point))
    f.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())


def checkpoint_bytes(model: Union[Module, QuantModel]) -> bytes:
    buf = io.BytesIO()
    if isinstance(model, QuantModel):
        names = model.tensor_names()
        desc = {
            "model": model.descriptor,
            "n_tensors": len(names),
            "precision": "int8",
            "activation_ranges": {k: [float(lo), float(hi)] for k, (lo, hi) in model.act_ranges.items()},
        }
        records = []
        for name in names:
            if name in model.qweights:
                q, s = model.qweights[name]
                records.append((name, q, s))
            else:
                records.append((name, model.floats[name], None))
    else:
        params = list(model.named_parameters())
        desc = {"model": describe(model), "n_tensors": len(params), "precision": "float32"}
        records = [(name, p.data, None) for name, p in params]
    db = _descriptor_bytes(desc)
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(db)))
    buf.write(db)
    for name, arr, scale in records:
        _write_record(buf, name, arr, scale)
    return buf.getvalue()


def save_checkpoint(model: Union[Module, QuantModel], path) -> int:
    """Write ``model`` to ``path``; returns the file size in bytes."""
    data = checkpoint_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(data: bytes) -> Tuple[Dict, List[Tuple[str, np.ndarray, float, int]]]:
    """Parse raw bytes into (descriptor, [(name, array, scale or None, zero_point)])."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not a KDF1 checkpoint (bad magic)")
    version, dlen = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported KDF1 version {version}")
    try:
        desc = json.loads(r.take(dlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt descriptor: {e}") from e
    if not isinstance(desc, dict) or "n_tensors" not in desc or "model" not in desc:
        raise FormatError("descriptor lacks 'model' or 'n_tensors'")
    records = []
    for _ in range(int(desc["n_tensors"])):
        (nlen,) = r.unpack("<I")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"corrupt tensor name: {e}") from e
        tag, ndim = r.unpack("<BI")
        if tag not in _DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for {name!r}")
        dims = r.unpack(f"<{ndim}I")
        scale, zp = None, 0
        if tag == I8:
            scale, zp = r.unpack("<fb")
        dt = _DTYPES[tag]
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(dims)
        records.append((name, arr.astype(dt.newbyteorder("=")), scale, zp))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after the last tensor")
    return desc, records


def load_checkpoint(path) -> Union[Module, QuantModel]:
    desc, records = read_checkpoint(Path(path).read_bytes())
    try:
        if desc.get("precision") == "int8":
            qweights = {n: (a, s) for n, a, s, _ in records if s is not None}
            floats = {n: a for n, a, s, _ in records if s is None}
            ranges = {k: (v[0], v[1]) for k, v in desc.get("activation_ranges", {}).items()}
            return QuantModel(desc["model"], qweights, floats, ranges)
        model = build_model(desc["model"])
        model.load_state_dict({n: a for n, a, _, _ in records})
        return model
    except (TypeError, KeyError, ConfigError, DimensionError) as e:
        raise FormatError(f"checkpoint does not match its descriptor: {e}") from e
