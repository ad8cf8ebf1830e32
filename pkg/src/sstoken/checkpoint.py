"""Binary checkpoint container.

Layout::

    b"SSTKCKPT" | u32 format version | u64 header length | JSON header | array data

The header records the model config, role tag, dtype, float width, byte
order, and per-array name/shape/offset. Arrays are stored little-endian in
header order. Headers are written with sorted keys and carry no timestamps,
so equal parameters produce byte-identical files.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, ShapeError
from .model import ModelConfig, ModelSnapshot, param_shapes

MAGIC = b"SSTKCKPT"
FORMAT_VERSION = 1
_DTYPES = {torch.float64: "float64", torch.float32: "float32"}


def save_checkpoint(model: ModelSnapshot, path: str | Path, role: str = "model") -> None:
    dtype_name = _DTYPES[model.dtype]
    np_dtype = np.dtype(dtype_name).newbyteorder("<")
    arrays, blobs, offset = [], [], 0
    for name in param_shapes(model.config):
        data = model.params[name].detach().cpu().numpy().astype(np_dtype, copy=False).tobytes()
        arrays.append({"name": name, "shape": list(model.params[name].shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "role": role,
        "version_tag": model.version,
        "config": model.config.to_dict(),
        "dtype": dtype_name,
        "itemsize": np_dtype.itemsize,
        "byteorder": "little",
        "arrays": arrays,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_header(path: str | Path) -> dict:
    with Path(path).open("rb") as fh:
        return _read_header(fh)[0]


def _read_header(fh):
    if fh.read(len(MAGIC)) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", fh.read(12))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format version {version}")
    return json.loads(fh.read(hlen).decode("utf-8")), len(MAGIC) + 12 + hlen


def load_checkpoint(path: str | Path) -> tuple[ModelSnapshot, str]:
    """Load a checkpoint, returning ``(snapshot, role)``. Every shape is validated."""
    raw = Path(path).read_bytes()
    header, start = _read_header(io.BytesIO(raw))
    cfg = ModelConfig(**header["config"])
    order = "<" if header["byteorder"] == "little" else ">"
    np_dtype = np.dtype(header["dtype"]).newbyteorder(order)
    if np_dtype.itemsize != header["itemsize"]:
        raise FormatError("itemsize does not match dtype")
    expected = param_shapes(cfg)
    params = {}
    for entry in header["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise ShapeError(f"{name}: header shape {shape} does not match config ({expected.get(name)})")
        n = int(np.prod(shape)) * np_dtype.itemsize
        if n != entry["nbytes"]:
            raise ShapeError(f"{name}: byte count {entry['nbytes']} does not match shape")
        buf = raw[start + entry["offset"] : start + entry["offset"] + n]
        if len(buf) != n:
            raise FormatError(f"{name}: truncated data")
        arr = np.frombuffer(buf, dtype=np_dtype).reshape(shape).astype(np_dtype.newbyteorder("="))
        params[name] = torch.from_numpy(arr.copy())
    snap = ModelSnapshot(cfg, params, version=header.get("version_tag", "init"))
    if not snap.is_finite():
        raise FormatError("checkpoint contains non-finite values")
    return snap, header["role"]
