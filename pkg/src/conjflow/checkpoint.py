"""Model checkpoints: JSON documents with hex-float parameter arrays.

Hex encoding makes the write/read round trip value-exact for 64-bit
floats; the architecture descriptor plus the run seed is enough to
rebuild the model object before loading the arrays into it.
"""

from __future__ import annotations

import json

import numpy as np


def save_checkpoint(path, descriptor, seed, params):
    """Write architecture descriptor, rng seed, and flat parameter arrays."""
    doc = {
        "architecture": descriptor,
        "topology_mode": descriptor.get("topology_mode"),
        "seed": int(seed),
        "params": [
            {"shape": list(p.values.shape),
             "hex": [v.hex() for v in p.values.ravel().tolist()]}
            for p in params
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Returns (descriptor, seed, list of ndarrays)."""
    with open(path) as fh:
        doc = json.load(fh)
    arrays = [
        np.array([float.fromhex(h) for h in entry["hex"]]).reshape(entry["shape"])
        for entry in doc["params"]
    ]
    return doc["architecture"], doc["seed"], arrays


def restore_params(model, arrays):
    params = model.params()
    if len(params) != len(arrays):
        raise ValueError(f"checkpoint has {len(arrays)} arrays, model has {len(params)} parameters")
    for p, a in zip(params, arrays):
        if p.values.shape != tuple(a.shape):
            raise ValueError(f"parameter shape {p.values.shape} != stored {a.shape}")
        p.values[:] = a
