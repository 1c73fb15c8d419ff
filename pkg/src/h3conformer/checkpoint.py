"""HPCK checkpoint container.

Layout (little-endian)::

    b"HPCK"  u32 version
    u32 n  utf-8[n] config text (INI, plus a [checkpoint] section)
    u32 tensor_count
    per tensor: u32 n  utf-8[n] name  u8 dtype  u32 rank  u32[rank] dims  raw data
"""

from __future__ import annotations

import configparser
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, _from_parser
from .conformer import Encoder
from .data import CorpusStats

MAGIC = b"HPCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8"), 3: np.dtype("<u4")}
_CODES = {v.newbyteorder("="): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


class MissingTensorError(CheckpointError):
    def __init__(self, name: str):
        super().__init__(f"checkpoint has no tensor named {name!r}")
        self.name = name


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict[str, np.ndarray]
    epoch: int = 0
    step: int = 0
    rng_state: dict = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(self.config_text)
        return _from_parser(cp)

    def full_text(self) -> str:
        meta = {"epoch": self.epoch, "step": self.step, "rng": json.dumps(self.rng_state)}
        body = "".join(f"{k} = {v}\n" for k, v in meta.items())
        return self.config_text.rstrip("\n") + "\n\n[checkpoint]\n" + body


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    text = ckpt.full_text().encode("utf-8")
    out += struct.pack("<I", len(text)) + text
    out += struct.pack("<I", len(ckpt.tensors))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("="))
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<BI", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expected: TrainConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expected`` the model sections must agree."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not an HPCK checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        text = r.take(r.u32()).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: config text is not UTF-8") from exc
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        code = r.take(1)[0]
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        dt = _DTYPES[code]
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(dt.itemsize * count), dtype=dt).reshape(dims)
        tensors[name] = data.astype(dt.newbyteorder("="))
    if r.pos != len(r.blob):
        raise CheckpointError(f"{path}: {len(r.blob) - r.pos} trailing bytes")

    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise CheckpointError(f"{path}: unreadable config text: {exc}") from exc
    meta = dict(cp["checkpoint"]) if cp.has_section("checkpoint") else {}
    config_text = text.split("\n[checkpoint]\n")[0].rstrip("\n") + "\n"
    ckpt = Checkpoint(config_text, tensors, int(meta.get("epoch", 0)), int(meta.get("step", 0)),
                      json.loads(meta.get("rng", "{}")))
    if expected is not None:
        mine = ckpt.train_config().model_section()
        theirs = expected.model_section()
        if mine != theirs:
            diff = [f"{a.strip()} vs {b.strip()}" for a, b in
                    zip(mine.splitlines(), theirs.splitlines()) if a != b]
            raise ConfigMismatchError(f"{path}: model config differs: {'; '.join(diff)}")
    return ckpt


# ------------------------------------------------------------- model binding

def model_tensors(model: Encoder, stats: CorpusStats | None = None) -> dict[str, np.ndarray]:
    out = {f"param.{k}": p.data.copy() for k, p in model.parameters().items()}
    out.update({f"buffer.{k}": np.array(v) for k, v in model.named_buffers().items()})
    if stats is not None:
        out["stats.mean"] = stats.mean.copy()
        out["stats.var"] = stats.var.copy()
    return out


def _fetch(tensors: dict, name: str, shape) -> np.ndarray:
    if name not in tensors:
        raise MissingTensorError(name)
    arr = tensors[name]
    if arr.shape != tuple(shape):
        raise CheckpointError(f"tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def load_into(model: Encoder, tensors: dict[str, np.ndarray]) -> Encoder:
    for k, p in model.parameters().items():
        p.data = np.array(_fetch(tensors, f"param.{k}", p.shape), dtype=np.float64)
    for k, buf in model.named_buffers().items():
        buf[...] = _fetch(tensors, f"buffer.{k}", buf.shape)
    return model


def restore_model(ckpt: Checkpoint) -> tuple[Encoder, CorpusStats | None]:
    """Rebuild the encoder (eval mode) and normalisation stats stored in ``ckpt``."""
    cfg = ckpt.train_config()
    model = load_into(Encoder(cfg.model, seed=cfg.seed), ckpt.tensors).eval()
    stats = None
    if "stats.mean" in ckpt.tensors:
        stats = CorpusStats(ckpt.tensors["stats.mean"], _fetch(ckpt.tensors, "stats.var",
                                                                 ckpt.tensors["stats.mean"].shape))
    return model, stats
