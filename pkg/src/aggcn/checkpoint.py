"""Binary checkpoints.

Layout (all integers little-endian)::

    b"AGGCN1"
    u64  header length in bytes
    header: UTF-8 JSON with "model" (ModelConfig fields), "vocab", "labels",
            "train" (free-form run settings) and "params" (list of
            {"name", "shape"} in parameter order)
    u64  parameter count
    for each parameter: float64 values, row-major, shape as in the header

Parameter order is :meth:`AggcnModel.parameters`: embeddings, input
projection (w, b), then per block and per head w_q, w_k and each dense
group's (w_l, b_l) pairs, then the block's w_comb, b_comb; finally the FFNN
(w1, b1, w2, b2) and the classifier (w, b).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from . import depgraph as dg
from .model import AggcnModel, ModelConfig, init_model
from .numerics import Rng

MAGIC = b"AGGCN1"


class CheckpointError(ValueError):
    """Unreadable checkpoint or one whose shapes do not match its config."""


def config_to_dict(cfg: ModelConfig) -> dict:
    out = asdict(cfg)
    out["sublayers"] = list(cfg.sublayers)
    out["pruning"] = cfg.pruning if cfg.pruning == dg.FULL else int(cfg.pruning)
    return out


def config_from_dict(raw: dict) -> ModelConfig:
    known = set(ModelConfig.__dataclass_fields__)
    return ModelConfig(**{k: v for k, v in raw.items() if k in known})


def dumps(model: AggcnModel, train_settings: dict | None = None) -> bytes:
    params = model.parameters()
    header = {
        "model": config_to_dict(model.config),
        "vocab": model.vocab,
        "labels": model.labels,
        "train": train_settings or {},
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    chunks = [MAGIC, struct.pack("<Q", len(blob)), blob, struct.pack("<Q", len(params))]
    chunks += [np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in params]
    return b"".join(chunks)


def save(model: AggcnModel, path, train_settings: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model, train_settings))


def loads(buf: bytes) -> tuple[AggcnModel, dict]:
    """Rebuild a model, auditing every parameter shape against the config."""
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not an AGGCN1 checkpoint (bad magic)")
    pos = len(MAGIC)
    try:
        (hlen,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    cfg = config_from_dict(header["model"])
    try:
        model = init_model(cfg, header["vocab"], header["labels"], Rng(0))
    except ValueError as exc:
        raise CheckpointError(f"checkpoint config rejected: {exc}") from None
    params = model.parameters()
    if count != len(params) or len(header["params"]) != len(params):
        raise CheckpointError(f"checkpoint has {count} parameters, config implies {len(params)}")
    for p, meta in zip(params, header["params"]):
        if tuple(meta["shape"]) != p.shape:
            raise CheckpointError(f"parameter {meta['name']}: shape {meta['shape']} != expected {list(p.shape)}")
        nbytes = 8 * p.size
        if pos + nbytes > len(buf):
            raise CheckpointError("checkpoint truncated")
        p.data[...] = np.frombuffer(buf, dtype="<f8", count=p.size, offset=pos).reshape(p.shape)
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after parameters")
    return model, header.get("train", {})


def load(path) -> tuple[AggcnModel, dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())
