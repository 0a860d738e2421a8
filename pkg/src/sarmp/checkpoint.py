"""Binary checkpoint container.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"SARMPCKP"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length H
    20      H     UTF-8 JSON header
    20+H    ...   float64 little-endian tensors, concatenated in header order
    end-32  32    SHA-256 of every preceding byte

The header records hyperparameters, training config, vocabulary hash, the
dataset directory, counters, and the ``tensors`` list of
``{"name", "shape", "kind"}`` entries (``kind`` is ``param`` or ``optim``).
Parameters come first, in the model's declared order.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import HyperParams, ModelParams
from .tensor import Tensor

MAGIC = b"SARMPCKP"
VERSION = 1
_LE_F64 = np.dtype("<f8")


class CheckpointError(Exception):
    pass


def save_checkpoint(path, state, kg, data_dir=None) -> None:
    from .training import TrainConfig  # noqa: F401  (type only)

    params: ModelParams = state.params
    opt_state = state.optimizer.state() if state.optimizer is not None else {}
    entries, blobs = [], []
    for kind, items in (("param", params.arrays().items()), ("optim", opt_state.items())):
        for name, arr in items:
            arr = np.ascontiguousarray(arr, dtype=_LE_F64)
            entries.append({"name": name, "shape": list(arr.shape), "kind": kind})
            blobs.append(arr.tobytes())
    header = {
        "format_version": VERSION,
        "hyper": params.hyper.to_dict(),
        "config": asdict(state.config),
        "vocab_hash": kg.vocab_hash(),
        "num_entities": kg.num_entities,
        "num_relations": kg.num_relations,
        "dataset": kg.name,
        "data_dir": str(data_dir) if data_dir is not None else getattr(kg, "source", None),
        "epoch": state.epoch,
        "best_mrr": state.best_mrr,
        "best_epoch": state.best_epoch,
        "optimizer": {"name": state.config.optimizer,
                      "t": getattr(state.optimizer, "t", 0)},
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(body)
            fh.write(digest)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Header and ``name -> array`` map (optimizer arrays keyed as stored)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 20 + 32 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic or too short)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt file)")
    try:
        header = json.loads(body[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    arrays = {}
    offset = 20 + hlen
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path}: payload shorter than header declares")
        arr = np.frombuffer(body, dtype=_LE_F64, count=nbytes // 8, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes after payload")
    return header, arrays


def load_checkpoint(path, kg=None):
    """Rebuild a :class:`~sarmp.training.TrainState`.

    With ``kg`` given, the vocabulary hash must match.
    """
    from .training import TrainConfig, TrainState, make_optimizer

    header, arrays = read_checkpoint(path)
    if kg is not None and header["vocab_hash"] != kg.vocab_hash():
        raise CheckpointError(
            f"{path}: vocabulary hash {header['vocab_hash'][:12]} does not match dataset "
            f"{kg.vocab_hash()[:12]}; checkpoint was trained on different data")
    hyper = HyperParams(**header["hyper"])
    config = TrainConfig(**header["config"])
    tensors = {e["name"]: Tensor(arrays[e["name"]], requires_grad=True, name=e["name"])
               for e in header["tensors"] if e["kind"] == "param"}
    params = ModelParams(tensors, header["num_relations"], hyper)
    optimizer = make_optimizer(params, config)
    opt = {e["name"]: arrays[e["name"]] for e in header["tensors"] if e["kind"] == "optim"}
    optimizer.load_state(opt, header["optimizer"]["t"])
    state = TrainState(params, optimizer, config, epoch=header["epoch"],
                       best_mrr=header["best_mrr"], best_epoch=header["best_epoch"])
    state.best_params = params
    state.header = header
    return state
