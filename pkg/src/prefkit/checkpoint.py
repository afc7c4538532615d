"""Bit-exact checkpoint store.

A checkpoint is a directory holding manifest.json and params.bin. The
manifest records the model config and a tensor index {name, shape,
offset, nbytes}; the payload is the concatenated little-endian float64
data. Resume state (optimizer moments, rng, sampler cursors) rides in
the same payload/manifest so a split run can continue bit-exactly.
"""

import hashlib
import json
import os

import numpy as np

from .autodiff import Tensor
from .errors import (
    CheckpointChecksumError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .model import Model, ModelConfig, _param_shapes

FORMAT_VERSION = 1


def save_checkpoint(path: str, model, resume: dict | None = None):
    """Write manifest.json + params.bin under `path` (created if needed).

    `resume`, when given, is {"optimizer": AdamW-state-dict, "rng": dict,
    "sampler": dict, "global_step": int}; its moment buffers go into the
    payload alongside the model parameters.
    """
    os.makedirs(path, exist_ok=True)
    entries = []
    chunks = []
    offset = 0

    def put(name, arr):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)

    for name in _param_shapes(model.config):
        put(name, model.params[name].data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
    }
    if resume is not None:
        opt = resume["optimizer"]
        for key in sorted(opt["m"]):
            put(f"optim.m.{key}", opt["m"][key])
        for key in sorted(opt["v"]):
            put(f"optim.v.{key}", opt["v"][key])
        manifest["resume"] = {
            "optimizer": {k: opt[k] for k in ("beta1", "beta2", "eps", "weight_decay", "step_count")},
            "rng": resume["rng"],
            "sampler": resume["sampler"],
            "global_step": resume["global_step"],
        }
    payload = b"".join(chunks)
    manifest["tensors"] = entries
    manifest["payload_nbytes"] = len(payload)
    manifest["payload_sha256"] = hashlib.sha256(payload).hexdigest()
    with open(os.path.join(path, "params.bin"), "wb") as f:
        f.write(payload)
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path: str):
    """Read a checkpoint directory back; returns (Model, resume_or_None).

    Raises CheckpointVersionError / CheckpointTruncatedError /
    CheckpointChecksumError / CheckpointShapeError as distinct failures.
    """
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported format_version {manifest.get('format_version')}")
    config = ModelConfig.from_dict(manifest["model_config"])
    with open(os.path.join(path, "params.bin"), "rb") as f:
        payload = f.read()
    if len(payload) < manifest["payload_nbytes"]:
        raise CheckpointTruncatedError(
            f"payload is {len(payload)} bytes, manifest says {manifest['payload_nbytes']}")
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointChecksumError("payload checksum mismatch")

    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry["nbytes"] != count * 8:
            raise CheckpointShapeError(f"{entry['name']}: shape/nbytes disagree")
        if entry["offset"] + entry["nbytes"] > len(payload):
            raise CheckpointTruncatedError(f"{entry['name']}: slice past end of payload")
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    params = {}
    for name, shape in _param_shapes(config).items():
        if name not in tensors:
            raise CheckpointShapeError(f"missing parameter {name}")
        if tensors[name].shape != shape:
            raise CheckpointShapeError(
                f"{name}: shape {tensors[name].shape}, expected {shape}")
        params[name] = Tensor(tensors[name], requires_grad=True)
    model = Model(config, params)

    resume = None
    if "resume" in manifest:
        r = manifest["resume"]
        opt = dict(r["optimizer"])
        opt["m"] = {k[len("optim.m."):]: a for k, a in tensors.items() if k.startswith("optim.m.")}
        opt["v"] = {k[len("optim.v."):]: a for k, a in tensors.items() if k.startswith("optim.v.")}
        resume = {
            "optimizer": opt,
            "rng": r["rng"],
            "sampler": r["sampler"],
            "global_step": r["global_step"],
        }
    return model, resume
