"""Model checkpoint files.

Layout (all integers little-endian)::

    magic  b"GAPFILLCKPT\\0"            12 bytes
    version                            uint32
    header length, header JSON         uint32, utf-8 bytes
    tensor count                       uint32
    per tensor: name length, name, ndim, dims (uint32 each), float32 data

The header carries the network configuration, the training step and any
caller metadata. Loading rebuilds the network from the configuration, which
re-validates the shape pipeline, before any weight is accepted.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .network import NetworkConfig, NetworkModel
from .optim import Adam

MAGIC = b"GAPFILLCKPT\0"
VERSION = 1


def _write_tensor(buf, name: str, arr: np.ndarray):
    raw = name.encode()
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(path: str | Path, model: NetworkModel, optimizer: Adam | None = None,
                    meta: dict | None = None) -> None:
    header = {
        "config": model.config.to_dict(),
        "step": model.step,
        "adam_t": optimizer.t if optimizer else None,
        "meta": meta or {},
    }
    tensors = {key: p for key, _, _, p in model.named_params()}
    tensors.update(dict(model.named_buffers()))
    if optimizer is not None:
        tensors.update(optimizer.state())
    hjson = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(hjson)))
    buf.write(hjson)
    buf.write(struct.pack("<I", len(tensors)))
    for name in tensors:
        _write_tensor(buf, name, tensors[name])
    Path(path).write_bytes(buf.getvalue())


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    data = buf.read(size)
    if len(data) != size:
        raise ValueError("truncated checkpoint")
    return struct.unpack(fmt, data)


def load_checkpoint(path: str | Path, with_optimizer: bool = True):
    """Returns ``(model, optimizer or None, meta)``."""
    buf = io.BytesIO(Path(path).read_bytes())
    if buf.read(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    version, hlen = _read(buf, "<II")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(buf.read(hlen).decode())
    config = NetworkConfig.from_dict(header["config"])
    (count,) = _read(buf, "<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = _read(buf, "<I")
        name = buf.read(nlen).decode()
        (ndim,) = _read(buf, "<I")
        shape = _read(buf, f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(buf.read(4 * n), dtype="<f4")
        if data.size != n:
            raise ValueError("truncated checkpoint")
        tensors[name] = data.reshape(shape)

    model = NetworkModel(config)
    for key, layer, name, p in model.named_params():
        if key not in tensors or tensors[key].shape != p.shape:
            raise ValueError(f"checkpoint tensor {key} missing or mis-shaped")
        p[...] = tensors[key]
    for key, b in model.named_buffers():
        if key not in tensors or tensors[key].shape != b.shape:
            raise ValueError(f"checkpoint buffer {key} missing or mis-shaped")
        b[...] = tensors[key]
    model.step = int(header["step"])

    optimizer = None
    if with_optimizer and header.get("adam_t") is not None:
        optimizer = Adam(model)
        optimizer.load_state(tensors, header["adam_t"])
    return model, optimizer, header.get("meta", {})
