"""Weights on disk: a JSON manifest plus one little-endian float32 blob per tensor."""

import hashlib
import json
import os

import numpy as np

from .network import NetworkConfig, NetworkParams, param_shapes

MANIFEST = "weights.json"
FORMAT = "soymat-weights-1"


def save_params(directory, config, params):
    """Write ``params`` under ``directory``; returns the manifest path.

    Tensors are stored as float32 regardless of working precision, so a
    float32 model round-trips bit-exactly.
    """
    os.makedirs(directory, exist_ok=True)
    layers = []
    for name, w in params.weights.items():
        fname = f"{name}.bin"
        data = np.ascontiguousarray(w, dtype="<f4").tobytes()
        with open(os.path.join(directory, fname), "wb") as fh:
            fh.write(data)
        layers.append({"name": name, "shape": list(w.shape), "file": fname,
                       "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {
        "format": FORMAT,
        "config": config.to_dict(),
        "target_offset": params.target_offset,
        "target_scale": params.target_scale,
        "meta": params.meta,
        "layers": layers,
    }
    path = os.path.join(directory, MANIFEST)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_params(path):
    """Read a manifest (or its directory); returns ``(config, params)`` in float32."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST)
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path}: unknown weights format {manifest.get('format')!r}")
    config = NetworkConfig.from_dict(manifest["config"])
    expected = param_shapes(config)
    root = os.path.dirname(path)
    weights = {}
    for layer in manifest["layers"]:
        name, shape = layer["name"], tuple(layer["shape"])
        if expected.get(name) != shape:
            raise ValueError(f"{path}: tensor {name} has shape {shape}, config expects {expected.get(name)}")
        with open(os.path.join(root, layer["file"]), "rb") as fh:
            data = fh.read()
        if hashlib.sha256(data).hexdigest() != layer["sha256"]:
            raise ValueError(f"{path}: checksum mismatch for {name}")
        weights[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)
    missing = set(expected) - set(weights)
    if missing:
        raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    params = NetworkParams({k: weights[k] for k in expected}, manifest["target_offset"],
                           manifest["target_scale"], manifest.get("meta", {}))
    return config, params
