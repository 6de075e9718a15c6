"""Binary checkpoints: parameters, optimizer accumulators, configs and signal statistics.

Layout: ``MOEFCKPT`` magic, little-endian u32 format version, u64 header
length, a UTF-8 JSON header, then every array as raw little-endian float64
in header order. Writing the same state twice yields identical bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from moef.config import TrainConfig, from_dict, to_dict
from moef.errors import DataError, IncompatibleCheckpointError
from moef.mixture import ModelConfig, MoefModel
from moef.numerics import AdagradState
from moef.signals import SignalStats

MAGIC = b"MOEFCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    model: MoefModel
    optimizer: AdagradState
    train_config: TrainConfig
    stats: SignalStats
    meta: dict = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return self.model.cfg


def _arrays(ckpt: Checkpoint) -> list:
    arrays = [("param/" + name, p.data) for name, p in ckpt.model.named_parameters(include_frozen=True)]
    arrays += [("accum/" + name, acc) for name, acc in sorted(ckpt.optimizer.accumulators.items())]
    arrays += [("stats/mean", ckpt.stats.mean), ("stats/std", ckpt.stats.std)]
    return arrays


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays = _arrays(ckpt)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": to_dict(ckpt.model_config),
        "train_config": to_dict(ckpt.train_config),
        "optimizer": {"learning_rate": ckpt.optimizer.learning_rate, "epsilon": ckpt.optimizer.epsilon},
        "meta": ckpt.meta,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
            fh.write(blob)
            for _, a in arrays:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise IncompatibleCheckpointError(f"{path} is not a checkpoint (too short)")
    magic, version, size = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise IncompatibleCheckpointError(f"{path} is not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(
            f"{path} has checkpoint format version {version}; this build reads version {FORMAT_VERSION}"
        )
    header = json.loads(raw[_PREFIX.size : _PREFIX.size + size].decode("utf-8"))
    cfg = from_dict(ModelConfig, header["model_config"])
    model = MoefModel(cfg, seed=0)
    params = dict(model.named_parameters(include_frozen=True))
    optimizer = AdagradState(**header["optimizer"])
    offset = _PREFIX.size + size
    stats = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
        kind, _, name = entry["name"].partition("/")
        if kind == "param":
            if name not in params or params[name].shape != shape:
                raise IncompatibleCheckpointError(f"{path}: parameter {name!r} does not fit the model")
            params[name].data[...] = data
        elif kind == "accum":
            optimizer.accumulators[name] = data.copy()
        else:
            stats[name] = data.copy()
    if offset != len(raw):
        raise IncompatibleCheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return Checkpoint(
        model,
        optimizer,
        from_dict(TrainConfig, header["train_config"]),
        SignalStats(stats["mean"], stats["std"]),
        header.get("meta", {}),
    )
