"""Versioned JSON model checkpoints.

A checkpoint stores layer shapes, one flat parameter vector (full float
precision, so save/load round-trips bitwise), the outcome standardization
constants, and the hash of the training configuration that produced it.
"""

import json

import numpy as np

from .errors import SchemaError
from .network import TarnetParams

FORMAT_VERSION = 1


def _stack_dims(layers):
    return [int(layers[0][0].shape[0])] + [int(w.shape[1]) for w, _ in layers]


def _zero_stack(dims):
    return [
        (np.zeros((dims[i], dims[i + 1])), np.zeros(dims[i + 1]))
        for i in range(len(dims) - 1)
    ]


def checkpoint_dict(params, y_mean, y_std, config_hash=""):
    return {
        "format_version": FORMAT_VERSION,
        "activation": params.activation,
        "psi_dims": _stack_dims(params.psi_layers),
        "head0_dims": _stack_dims(params.head0_layers),
        "head1_dims": _stack_dims(params.head1_layers),
        "y_mean": float(y_mean),
        "y_std": float(y_std),
        "config_hash": config_hash,
        "flat_params": [float(v) for v in params.flatten()],
    }


def save_checkpoint(path, params, y_mean, y_std, config_hash=""):
    payload = checkpoint_dict(params, y_mean, y_std, config_hash)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle)
        handle.write("\n")


def load_checkpoint(path):
    """Returns ``(params, y_mean, y_std, config_hash)``."""
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: not a version-{FORMAT_VERSION} checkpoint")
    required = ("activation", "psi_dims", "head0_dims", "head1_dims", "y_mean", "y_std", "flat_params")
    for key in required:
        if key not in payload:
            raise SchemaError(f"{path}: checkpoint is missing field {key!r}")
    template = TarnetParams(
        _zero_stack(payload["psi_dims"]),
        _zero_stack(payload["head0_dims"]),
        _zero_stack(payload["head1_dims"]),
        activation=payload["activation"],
    )
    flat = np.asarray(payload["flat_params"], dtype=np.float64)
    if flat.shape != (template.n_params,):
        raise SchemaError(
            f"{path}: checkpoint holds {flat.size} parameters, shapes imply {template.n_params}"
        )
    params = template.with_flat(flat)
    return params, float(payload["y_mean"]), float(payload["y_std"]), payload.get("config_hash", "")
