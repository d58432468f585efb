"""Binary model checkpoint.

Layout (all integers little-endian):
    magic           8 bytes  b"TAGASC\\x00\\x01"
    config_len      uint32
    config          config_len bytes, UTF-8 JSON (backbone, fusion, num_events, seed, train_ids,
                                     pre_emphasis_beta)
    n_tensors       uint32
    n_tensors times:
        name_len    uint16
        name        name_len bytes, UTF-8
        ndim        uint8
        dims        ndim x uint32
        data        prod(dims) x float64 little-endian
Parameters come first in build order, followed by batch-norm running statistics.
"""
import json
import struct
import numpy as np

from pathlib import Path
from typing import Union

from core.backbone import BackboneConfig
from core.errors import MalformedHeaderError, TruncatedDataError
from core.fusion import FusionConfig
from core.model import TagASCModel

__all__ = ["MAGIC", "save_checkpoint", "load_checkpoint", "checkpoint_bytes", "model_from_bytes"]


MAGIC = b"TAGASC\x00\x01"


def checkpoint_bytes(model: TagASCModel) -> bytes:
    config = {
        "backbone": model.backbone_cfg.to_dict(),
        "fusion": model.fusion_cfg.to_dict(),
        "num_events": model.num_events,
        "seed": model.seed,
        "train_ids": list(model.train_ids),
        "pre_emphasis_beta": model.pre_emphasis_beta,
    }
    config_raw = json.dumps(config, sort_keys=True).encode("utf-8")
    tensors = [(name, p.data) for name, p in model.parameters()] + list(model.buffers())

    chunks = [MAGIC, struct.pack("<I", len(config_raw)), config_raw,
              struct.pack("<I", len(tensors))]
    for name, data in tensors:
        name_raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_raw)))
        chunks.append(name_raw)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(model: TagASCModel, path: Union[str, Path]):
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:

    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedDataError("checkpoint", f"{what} needs {n} bytes at offset {self.pos}, "
                                                   f"file has {len(self.raw)}", offset=self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def model_from_bytes(raw: bytes) -> TagASCModel:
    reader = _Reader(raw)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise MalformedHeaderError("checkpoint", "bad magic at offset 0", offset=0)
    (config_len,) = reader.unpack("<I", "config length")
    config = json.loads(reader.take(config_len, "config").decode("utf-8"))

    model = TagASCModel(BackboneConfig.from_dict(config["backbone"]),
                        FusionConfig.from_dict(config["fusion"]),
                        config["num_events"], config["seed"],
                        config.get("pre_emphasis_beta", 0.97))
    model.train_ids = list(config.get("train_ids", []))

    params = dict(model.parameters())
    norms = {bn.name: bn for bn in model.backbone.batch_norms()}
    buffers = {}

    (n_tensors,) = reader.unpack("<I", "tensor count")
    for _ in range(n_tensors):
        offset = reader.pos
        (name_len,) = reader.unpack("<H", "name length")
        name = reader.take(name_len, "name").decode("utf-8")
        (ndim,) = reader.unpack("<B", "ndim")
        dims = reader.unpack(f"<{ndim}I", "dims")
        count = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(reader.take(8 * count, name), dtype="<f8").reshape(dims)
        if name in params:
            if params[name].shape != tuple(dims):
                raise MalformedHeaderError("checkpoint", f"'{name}' has shape {tuple(dims)}, "
                                                         f"model expects {params[name].shape}",
                                           offset=offset)
            params[name].data = data.astype(np.float64)
        else:
            buffers[name] = data.astype(np.float64)

    for name, bn in norms.items():
        mean, var = buffers.get(f"{name}.running_mean"), buffers.get(f"{name}.running_var")
        if mean is None or var is None:
            raise MalformedHeaderError("checkpoint", f"missing running statistics of '{name}'")
        bn.load_buffers(mean, var)
    return model


def load_checkpoint(path: Union[str, Path]) -> TagASCModel:
    return model_from_bytes(Path(path).read_bytes())
