"""Single-file model checkpoints.

Layout: the 8-byte magic ``FUFICKP1``, a little-endian u64 header length,
a UTF-8 JSON header, then raw little-endian float32 payloads. The header
echoes the full model configuration and lists every tensor with its shape,
byte offset (relative to the payload start) and dtype tag, so a checkpoint
can be rebuilt without the original config file.
"""
from __future__ import annotations

import json
import struct

import numpy as np
import torch

from .errors import DatasetFormatError
from .urbanfm import UrbanFM
from .urbanpy import UrbanPy

MAGIC = b"FUFICKP1"
MODEL_TYPES = {"urbanfm": UrbanFM, "fm-sl": UrbanFM, "urbanpy": UrbanPy}


def model_kind(model):
    if isinstance(model, UrbanPy):
        return "urbanpy"
    return "urbanfm" if model.cfg.distributional else "fm-sl"


def save_checkpoint(model, path, extra=None):
    state = model.state_dict()
    entries, blobs, offset = [], [], 0
    for name, tensor in state.items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        blob = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32le", "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": "fufi-checkpoint",
        "version": 1,
        "kind": model_kind(model),
        "config": model.config_dict(),
        "tensors": entries,
        "extra": extra or {},
    }
    raw = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_header(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise DatasetFormatError(f"{path} is not a checkpoint file")
        (size,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(size).decode("utf-8")), 16 + size


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns ``(model, extra)``."""
    header, start = read_header(path)
    kind = header.get("kind")
    if kind not in MODEL_TYPES:
        raise DatasetFormatError(f"unknown model kind {kind!r}")
    model = MODEL_TYPES[kind].from_config(header["config"])
    with open(path, "rb") as fh:
        fh.seek(start)
        payload = fh.read()
    state = {}
    template = model.state_dict()
    for entry in header["tensors"]:
        if entry["dtype"] != "f32le":
            raise DatasetFormatError(f"unknown dtype tag {entry['dtype']!r}")
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise DatasetFormatError(f"checkpoint truncated inside tensor {entry['name']!r}")
        arr = np.frombuffer(payload[lo:hi], dtype="<f4").reshape(entry["shape"])
        ref = template.get(entry["name"])
        if ref is None:
            raise DatasetFormatError(f"checkpoint tensor {entry['name']!r} does not belong to a {kind} model")
        state[entry["name"]] = torch.from_numpy(arr.copy()).to(ref.dtype)
    model.load_state_dict(state)
    model.eval()
    return model, header.get("extra", {})
