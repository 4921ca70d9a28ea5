"""Binary model checkpoints.

Layout (all integers little-endian uint32 unless noted):

    magic    4 bytes  b"RHAR"
    version  uint32   currently 1
    clen     uint32   length of the embedded architecture config text
    config   clen bytes of UTF-8 ([model] and [backbone] sections)
    nparams  uint32
    then per parameter, in canonical model traversal order:
        nlen   uint32, name  nlen bytes UTF-8
        rank   uint32, dims  rank x uint32
        data   prod(dims) float32, little-endian

Parameters are stored float32; computation stays float64, so a load-save
round trip reproduces model outputs to 32-bit precision.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import TwoStreamModel, build_model

__all__ = ["save_checkpoint", "load_checkpoint", "CHECKPOINT_MAGIC"]

CHECKPOINT_MAGIC = b"RHAR"
CHECKPOINT_VERSION = 1


def _architecture_text(model: TwoStreamModel) -> str:
    cfg = model.backbone_frame.config
    lines = [
        "[model]",
        f"num_categories = {model.num_categories}",
        f"time_step = {model.time_step}",
        f"lstm_hidden = {model.lstm1.hidden}",
        f"representation = {model.representation}",
        "",
        "[backbone]",
        f"input_size = {cfg.input_size[0]}, {cfg.input_size[1]}",
        "stage_channels = " + ", ".join(str(c) for c in cfg.stage_channels),
        "convs_per_stage = " + ", ".join(str(c) for c in cfg.convs_per_stage),
        "",
    ]
    return "\n".join(lines)


def save_checkpoint(model: TwoStreamModel, path) -> None:
    config_bytes = _architecture_text(model).encode("utf-8")
    params = model.parameters()
    chunks = [CHECKPOINT_MAGIC,
              struct.pack("<II", CHECKPOINT_VERSION, len(config_bytes)),
              config_bytes,
              struct.pack("<I", len(params))]
    for name, tensor in params:
        name_bytes = name.encode("utf-8")
        dims = tensor.data.shape
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}I", *dims))
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.payload):
            raise DataError(f"checkpoint {self.source} truncated at byte {self.offset}")
        out = self.payload[self.offset:self.offset + count]
        self.offset += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> TwoStreamModel:
    """Rebuild the model from the embedded architecture text and install
    the stored parameters (cast back up to float64)."""
    from .config import parse_config

    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise DataError(f"checkpoint {path} has wrong magic")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise DataError(f"checkpoint {path} has unsupported version {version}")
    config_text = reader.take(reader.u32()).decode("utf-8")
    run_config = parse_config(config_text)

    model = build_model(
        num_categories=run_config.model.num_categories,
        time_step=run_config.model.time_step,
        backbone_config=run_config.backbone,
        seed=0,
        lstm_hidden=run_config.model.lstm_hidden,
        representation=run_config.model.representation,
    )
    params = model.parameters()
    nparams = reader.u32()
    if nparams != len(params):
        raise DataError(f"checkpoint {path} holds {nparams} parameters, model needs {len(params)}")
    for name, tensor in params:
        stored_name = reader.take(reader.u32()).decode("utf-8")
        if stored_name != name:
            raise DataError(f"checkpoint {path}: expected parameter {name!r}, found {stored_name!r}")
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        if dims != tensor.data.shape:
            raise DataError(f"checkpoint {path}: {name} has dims {dims}, model needs {tensor.data.shape}")
        count = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(reader.take(4 * count), dtype="<f4").astype(np.float64)
        tensor.assign(values.reshape(dims))
    return model
