"""Binary checkpoints: magic, header length, JSON header, little-endian float64 payload.

The header records the model kind, its config, vocabularies and the name,
shape and offset of every tensor, plus a SHA-256 of the payload.  Saving the
same model twice gives identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import HeraConfig

MAGIC = b"HFCK"
VERSION = 1


def checkpoint_bytes(model) -> bytes:
    params = model.named_parameters()
    tensors = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.array(params[name].value, dtype="<f8", order="C")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    payload = b"".join(chunks)
    vocab = model.vocab
    header = {
        "version": VERSION,
        "kind": model.kind,
        "n_coarse": model.n_coarse,
        "n_fine": model.n_fine,
        "config": model.config.to_dict(),
        "vocab": [list(vocab[0]), list(vocab[1])] if vocab is not None else None,
        "tensors": tensors,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def save_model(model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def read_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < 8 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + n:
        raise CheckpointError("checkpoint truncated inside the header")
    try:
        header = json.loads(data[8:8 + n].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"checkpoint format version {header.get('version')} cannot be read "
                              f"by this build (version {VERSION})")
    payload = data[8 + n:]
    expected = sum(int(np.prod(t["shape"], dtype=int)) for t in header["tensors"]) * 8
    if len(payload) != expected:
        raise CheckpointError(f"checkpoint payload has {len(payload)} bytes, expected {expected} (truncated?)")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError("checkpoint payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8")
    tensors = {}
    for t in header["tensors"]:
        size = int(np.prod(t["shape"], dtype=int))
        tensors[t["name"]] = flat[t["offset"]:t["offset"] + size].reshape(t["shape"]).astype(np.float64)
    return header, tensors


def load_model(path):
    from .baselines import build_model

    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    header, tensors = read_checkpoint(path.read_bytes())
    vocab = tuple(header["vocab"]) if header["vocab"] is not None else None
    model = build_model(header["kind"], header["n_coarse"], header["n_fine"],
                        HeraConfig.from_dict(header["config"]), vocab)
    params = model.named_parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) ^ set(tensors))
        raise CheckpointError(f"checkpoint tensors do not match the model: {missing[:3]}")
    for name, p in params.items():
        if p.value.shape != tensors[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {tensors[name].shape} vs {p.value.shape}")
        p.value[...] = tensors[name]
    return model
