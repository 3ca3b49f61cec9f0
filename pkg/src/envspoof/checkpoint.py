"""Single-file checkpoints of named float32 arrays.

Layout (all integers little-endian)::

    b"ESPCKPT1"                 8-byte magic
    u64 header_len
    header                      UTF-8 JSON, header_len bytes:
                                  {"config": {flat experiment config},
                                   "meta": {...},
                                   "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}
    data                        float32 arrays, row-major, back to back;
                                offsets are relative to the start of data
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from .config import ExperimentConfig

MAGIC = b"ESPCKPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: torch.nn.Module, config: ExperimentConfig, meta: dict | None = None):
    entries, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        data = arr.tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = json.dumps(
        {"config": config.to_flat(), "meta": meta or {}, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<Q", len(header)) + header)
        for chunk in chunks:
            f.write(chunk)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], ExperimentConfig, dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    data = memoryview(blob)[16 + header_len :]
    arrays = {}
    for e in header["tensors"]:
        if e["offset"] + e["nbytes"] > len(data):
            raise CheckpointError(f"{path}: tensor {e['name']} runs past end of file")
        raw = data[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).copy()
    config = ExperimentConfig()
    for key, value in header["config"].items():
        config.set(key, str(value).lower() if isinstance(value, bool) else str(value))
    return arrays, config, header["meta"]


def load_model(path, config: ExperimentConfig | None = None):
    """Rebuild a Detector from a checkpoint; ``config`` must match the stored one if given."""
    from .model import Detector

    arrays, stored, meta = read_checkpoint(path)
    if config is not None and config.model_kwargs() != stored.model_kwargs():
        diff = {
            k: (v, stored.model_kwargs()[k])
            for k, v in config.model_kwargs().items()
            if stored.model_kwargs()[k] != v
        }
        raise CheckpointError(f"config does not match checkpoint (given, stored): {diff}")
    model = Detector(**stored.model_kwargs())
    state = model.state_dict()
    for name, value in state.items():
        if name not in arrays or tuple(arrays[name].shape) != tuple(value.shape):
            raise CheckpointError(f"checkpoint tensor {name} missing or mis-shaped")
    model.load_state_dict({k: torch.from_numpy(arrays[k]) for k in state})
    model.eval()
    return model, stored, meta
