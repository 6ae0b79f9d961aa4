"""Binary checkpoint format.

Layout::

    b"TMSE" | version (1 byte) | header length (uint32 LE) | header JSON (UTF-8)
    | tensor payloads (float32 LE, manifest order)

The header holds ``config``, ``tensors`` (name, shape, byte offset from the
start of the payload) and free-form ``metadata``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..exceptions import CheckpointFormatError, CheckpointShapeError, CheckpointVersionError
from .model import TmtpnConfig, TmtpnModel
from .training import TrainLog

MAGIC = b"TMSE"
VERSION = 1
_PREFIX = struct.Struct("<4sBI")


def _encode(model):
    tensors = []
    chunks = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name} is not finite")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    metadata = {}
    log = getattr(model, "train_log", None)
    if log is not None:
        metadata["train_log"] = log.to_dict()
    header = {"config": model.config.to_dict(), "tensors": tensors, "metadata": metadata}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header_bytes)) + header_bytes + b"".join(chunks)


def save_checkpoint(model, path):
    path = Path(path)
    path.write_bytes(_encode(model))
    return path


def load_checkpoint(path):
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise CheckpointFormatError(f"{path}: file too short ({len(blob)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported format version {version} (expected {VERSION})")
    start = _PREFIX.size
    if len(blob) < start + header_len:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
        config = TmtpnConfig.from_dict(header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from None
    payload = memoryview(blob)[start + header_len :]

    model = TmtpnModel(config)
    expected = {name: tuple(t.shape) for name, t in model.state_dict().items()}
    if [m["name"] for m in manifest] != list(expected):
        raise CheckpointShapeError(f"{path}: tensor names do not match the configured architecture")
    state = {}
    for entry in manifest:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if shape != expected[name]:
            raise CheckpointShapeError(f"{path}: tensor {name} has shape {shape}, expected {expected[name]}")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointFormatError(f"{path}: truncated payload for tensor {name}")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state)
    model.eval()
    log = header.get("metadata", {}).get("train_log")
    if log is not None:
        model.train_log = TrainLog.from_dict(log)
    return model
