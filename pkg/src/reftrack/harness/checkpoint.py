"""Checkpoint format: one JSON header line + packed float32 payload.

The header records the format version, the config hash the weights were
trained under, the vocabulary token list, and an ordered array index
(name + shape). The payload is the concatenation of every array as
little-endian float32 in index order. Loading into a config whose hash
differs is an error unless explicitly overridden.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from reftrack.harness.config import RunConfig, config_hash
from reftrack.harness.datafiles import atomic_write
from reftrack.harness.errors import DataError
from reftrack.model import TrackingModel, Vocabulary

FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    model: TrackingModel,
    config: RunConfig,
    vocab: Vocabulary,
    extra: dict | None = None,
) -> None:
    state = model.state_dict()
    index = []
    chunks = []
    for name in sorted(state):
        tensor = state[name]
        if tensor.dtype != torch.float32:
            raise ValueError(f"checkpoint arrays must be float32, got {tensor.dtype} for {name}")
        arr = tensor.detach().cpu().numpy().astype("<f4")
        index.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash(config),
        "vocab": list(vocab.tokens),
        "arrays": index,
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(chunks)
    atomic_write(path, blob)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing checkpoint: {path}")
    blob = path.read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise DataError(f"corrupt checkpoint (no header line): {path}")
    try:
        header = json.loads(blob[:newline].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint header in {path}: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"unsupported checkpoint format {header.get('format_version')!r} in {path}"
        )
    payload = blob[newline + 1 :]
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(payload):
            raise DataError(f"truncated checkpoint payload: {path}")
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=offset
        ).reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise DataError(f"trailing bytes in checkpoint payload: {path}")
    return header, arrays


def restore_model(
    path: str | Path,
    config: RunConfig,
    allow_hash_mismatch: bool = False,
) -> tuple[TrackingModel, Vocabulary]:
    header, arrays = load_checkpoint(path)
    saved_hash = header.get("config_hash")
    expected = config_hash(config)
    if saved_hash != expected and not allow_hash_mismatch:
        raise DataError(
            f"checkpoint config hash {saved_hash} does not match current config "
            f"{expected}; pass the override flag to load anyway"
        )
    vocab = Vocabulary(list(header.get("vocab", [])))
    model = TrackingModel(config.model, config.temporal, vocab_size=len(vocab))
    state = {name: torch.from_numpy(arr.copy()) for name, arr in arrays.items()}
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise DataError(f"checkpoint does not fit the configured model: {exc}") from exc
    return model, vocab
