"""Portable binary checkpoints for FusionNet models.

Byte layout (all integers little-endian):

    bytes 0-7    magic b"DXPCKPT1"
    bytes 8-11   format version (uint32)
    bytes 12-19  metadata length M (uint64)
    bytes 20-..  UTF-8 metadata block of M bytes:
                     [config]
                     key=value          (one line per ModelConfig field)
                     [tensors]
                     name=shape@offset  (shape comma-separated, offset into
                                         the payload section)
    then         raw float32 payloads, little-endian, in directory order

Loading a checkpoint reproduces bit-identical eval-mode forward outputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from dxpipe.nnet import FusionNet, ModelConfig

MAGIC = b"DXPCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, mismatched, or truncated checkpoint files."""


@dataclass
class Checkpoint:
    version: int
    config: ModelConfig
    tensors: dict[str, np.ndarray]


def checkpoint_from_model(model: FusionNet) -> Checkpoint:
    return Checkpoint(
        version=VERSION,
        config=model.config,
        tensors={k: v.copy() for k, v in model.params.items()},
    )


def model_from_checkpoint(ckpt: Checkpoint, validate: bool = True) -> FusionNet:
    model = FusionNet(ckpt.config, seed=0)
    if validate:
        missing = set(model.params) - set(ckpt.tensors)
        if missing:
            raise CheckpointError(f"checkpoint missing tensors: {sorted(missing)}")
        for name, ref in model.params.items():
            if ckpt.tensors[name].shape != ref.shape:
                raise CheckpointError(
                    f"tensor {name} has shape {ckpt.tensors[name].shape}, expected {ref.shape}"
                )
    model.params = {k: np.array(v, dtype=np.float32) for k, v in ckpt.tensors.items()}
    return model


def _config_lines(config: ModelConfig) -> list[str]:
    lines = []
    for f in fields(ModelConfig):
        v = getattr(config, f.name)
        lines.append(f"{f.name}={v}")
    return lines


def _parse_config(lines: list[str]) -> ModelConfig:
    kwargs = {}
    types = {f.name: f.type for f in fields(ModelConfig)}
    for line in lines:
        key, _, raw = line.partition("=")
        if key not in types:
            raise CheckpointError(f"unknown config key {key!r}")
        if key == "full_scale":
            kwargs[key] = raw == "True"
        elif key == "dropout_rate":
            kwargs[key] = float(raw)
        else:
            kwargs[key] = int(raw)
    cfg = ModelConfig(**{k: v for k, v in kwargs.items() if k != "full_scale"})
    # dims were already resolved at save time; keep them authoritative
    cfg.full_scale = kwargs.get("full_scale", False)
    return cfg


def save_checkpoint(ckpt: Checkpoint, path: Path | str) -> None:
    meta_lines = ["[config]"]
    meta_lines += _config_lines(ckpt.config)
    meta_lines.append("[tensors]")
    offset = 0
    payloads = []
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        shape = ",".join(str(d) for d in arr.shape)
        meta_lines.append(f"{name}={shape}@{offset}")
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    meta = ("\n".join(meta_lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        for blob in payloads:
            fh.write(blob)


def save_model(model: FusionNet, path: Path | str) -> None:
    save_checkpoint(checkpoint_from_model(model), path)


def load_checkpoint(path: Path | str) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12:
        raise CheckpointError("corrupt checkpoint: file too short")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"corrupt checkpoint: bad magic {data[:8]!r}")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if pos + meta_len > len(data):
        raise CheckpointError("corrupt checkpoint: truncated metadata")
    meta = data[pos : pos + meta_len].decode("utf-8")
    payload = data[pos + meta_len :]

    lines = [ln for ln in meta.splitlines() if ln]
    try:
        cfg_start = lines.index("[config]") + 1
        tens_start = lines.index("[tensors]")
    except ValueError:
        raise CheckpointError("corrupt checkpoint: missing metadata sections") from None
    config = _parse_config(lines[cfg_start:tens_start])

    tensors: dict[str, np.ndarray] = {}
    for line in lines[tens_start + 1 :]:
        name, _, rest = line.partition("=")
        shape_str, _, offset_str = rest.partition("@")
        try:
            shape = tuple(int(d) for d in shape_str.split(","))
            offset = int(offset_str)
        except ValueError:
            raise CheckpointError(f"corrupt checkpoint: bad tensor line {line!r}") from None
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(payload):
            raise CheckpointError(f"corrupt checkpoint: truncated payload for {name}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float32)
    return Checkpoint(version=version, config=config, tensors=tensors)


def load_model(path: Path | str) -> FusionNet:
    return model_from_checkpoint(load_checkpoint(path))
