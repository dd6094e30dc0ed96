"""Binary model checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"FDYK"
    version u32      currently 1
    cfg_len u32      followed by cfg_len bytes of canonical [model] text
    count   u32      number of tensor records, then per record:
        name_len u16, name utf-8
        kind     u8   0 = trainable parameter, 1 = running-statistics buffer
        rank     u8, dims u32 * rank
        payload  float32 little-endian, prod(dims) values

Records appear in the model's fixed enumeration order, so saving the same
model twice yields byte-identical files. Values are stored as float32; a
float32 model round-trips bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .config import model_config_text, parse_model_config_text
from .errors import CheckpointError
from .model import SEDModel, build_model

MAGIC = b"FDYK"
VERSION = 1
_KIND = {"param": 0, "buffer": 1}


def save_checkpoint(model: SEDModel, path) -> None:
    cfg_bytes = model_config_text(model.config).encode("utf-8")
    records = list(model.state_arrays())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<I", len(records)))
        for name, array, kind in records:
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<BB", _KIND[kind], array.ndim))
            fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
            fh.write(np.ascontiguousarray(
                array, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(
            f"truncated checkpoint: expected {n} bytes for {what}, "
            f"got {len(data)}")
    return data


def load_checkpoint(path, dtype=np.float32) -> SEDModel:
    """Rebuild the model from its embedded config and stored tensors."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint "
                                  f"(bad magic)")
        version, = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version}, expected "
                f"{VERSION}")
        cfg_len, = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        cfg_text = _read_exact(fh, cfg_len, "config block").decode("utf-8")
        config = parse_model_config_text(cfg_text)
        model = build_model(config, seed=0, dtype=dtype)
        targets = {name: (array, kind)
                   for name, array, kind in model.state_arrays()}
        count, = struct.unpack("<I", _read_exact(fh, 4, "record count"))
        if count != len(targets):
            raise CheckpointError(
                f"checkpoint holds {count} tensors but the rebuilt model "
                f"has {len(targets)}")
        for _ in range(count):
            name_len, = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            kind_code, rank = struct.unpack(
                "<BB", _read_exact(fh, 2, "record header"))
            dims = struct.unpack(f"<{rank}I",
                                 _read_exact(fh, 4 * rank, "dims"))
            payload = _read_exact(fh, 4 * int(np.prod(dims, dtype=np.int64)),
                                  f"payload of {name}")
            if name not in targets:
                raise CheckpointError(f"unknown tensor {name!r} in checkpoint")
            array, kind = targets.pop(name)
            if _KIND[kind] != kind_code:
                raise CheckpointError(
                    f"tensor {name!r} kind mismatch in checkpoint")
            if tuple(dims) != array.shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {tuple(dims)} in the "
                    f"checkpoint but {array.shape} in the model")
            values = np.frombuffer(payload, dtype="<f4").reshape(dims)
            array[...] = values.astype(array.dtype)
        if targets:
            raise CheckpointError(
                f"checkpoint is missing tensors: {sorted(targets)[:3]}...")
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last record")
    return model
