"""Versioned ``.npz`` container for encoder parameters."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .gnn import LAYER_FIELDS, EncoderParams, LayerParams

FORMAT = "sgkit-encoder"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(params: EncoderParams, path) -> Path:
    path = Path(path)
    arrays = {
        "format": np.array(FORMAT),
        "version": np.array(VERSION),
        "dim": np.array(params.dim),
        "hidden": np.array(params.hidden),
        "n_layers": np.array(len(params.layers)),
        "alpha": np.array(params.alpha, dtype=np.float64),
    }
    for name, arr in params.named_arrays():
        arrays[name] = arr
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_params(path, expected_dim: int | None = None) -> EncoderParams:
    with np.load(path, allow_pickle=False) as z:
        if "format" not in z or str(z["format"]) != FORMAT:
            raise CheckpointError(f"{path} is not an encoder checkpoint")
        if int(z["version"]) != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {int(z['version'])}")
        dim, hidden, n_layers = int(z["dim"]), int(z["hidden"]), int(z["n_layers"])
        if expected_dim is not None and dim != expected_dim:
            raise CheckpointError(f"checkpoint dimension {dim} does not match expected {expected_dim}")
        layers = []
        for i in range(n_layers):
            try:
                layer = LayerParams(*(np.array(z[f"layers.{i}.{f}"], dtype=np.float64) for f in LAYER_FIELDS))
            except KeyError as exc:
                raise CheckpointError(f"checkpoint lacks {exc}") from None
            try:
                layer.check()
            except ValueError as exc:
                raise CheckpointError(str(exc)) from None
            if layer.dim != dim or layer.hidden != hidden:
                raise CheckpointError(f"layer {i} dimensions disagree with header")
            layers.append(layer)
        return EncoderParams(layers, float(z["alpha"]))
