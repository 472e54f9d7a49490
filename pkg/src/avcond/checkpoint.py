"""Flat float64 checkpoint format with a JSON header.

Layout: 8-byte little-endian header length, UTF-8 JSON header listing tensor
names/shapes plus free-form metadata, then the raw little-endian float64
data of every tensor concatenated in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ShapeMismatch

_HEADER_LEN = struct.Struct("<Q")


def save_params(module: nn.Module, path: str | Path, meta: dict | None = None) -> None:
    """Write all named parameters of ``module`` in declaration order."""
    names, shapes, blobs = [], [], []
    for name, p in module.named_parameters():
        names.append(name)
        shapes.append(list(p.shape))
        blobs.append(p.detach().to(torch.float64).numpy().astype("<f8").tobytes())
    header = {
        "tensors": [{"name": n, "shape": s} for n, s in zip(names, shapes)],
        "meta": meta or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER_LEN.pack(len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        (raw_len,) = _HEADER_LEN.unpack(fh.read(_HEADER_LEN.size))
        return json.loads(fh.read(raw_len).decode("utf-8"))


def load_params(module: nn.Module, path: str | Path) -> dict:
    """Load a checkpoint into ``module``, validating names and shapes.

    Returns the header metadata. Raises ShapeMismatch when the stored
    tensors do not line up with the module's parameters.
    """
    with open(path, "rb") as fh:
        (raw_len,) = _HEADER_LEN.unpack(fh.read(_HEADER_LEN.size))
        header = json.loads(fh.read(raw_len).decode("utf-8"))
        stored = {e["name"]: tuple(e["shape"]) for e in header["tensors"]}
        params = dict(module.named_parameters())
        if set(stored) != set(params):
            missing = sorted(set(params) - set(stored))
            extra = sorted(set(stored) - set(params))
            raise ShapeMismatch(
                f"checkpoint tensors do not match module: missing {missing}, "
                f"unexpected {extra}"
            )
        for entry in header["tensors"]:
            name, shape = entry["name"], tuple(entry["shape"])
            want = tuple(params[name].shape)
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8", count=count)
            if shape != want:
                raise ShapeMismatch(
                    f"tensor '{name}' has shape {shape}, module expects {want}"
                )
            with torch.no_grad():
                params[name].copy_(torch.from_numpy(data.copy()).reshape(shape))
    return header.get("meta", {})
