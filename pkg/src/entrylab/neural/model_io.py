"""Model container: a versioned .npz holding every parameter tensor
(row-major float64), the architecture hyperparameters, normalization
statistics, and the training seed."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .lstm import LstmLayerParams, LstmModel, NormStats

FORMAT_VERSION = 1


def save_model(path, model: LstmModel) -> None:
    meta = {
        "format": "entrylab-lstm",
        "version": FORMAT_VERSION,
        "input_size": model.input_size,
        "hidden_size": model.hidden_size,
        "output_size": model.output_size,
        "n_layers": len(model.layers),
        "dropout_rate": model.dropout_rate,
        "hidden_activation": model.hidden_activation,
        "seed": model.seed,
        "has_stats": model.stats is not None,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for li, layer in enumerate(model.layers):
        arrays[f"layer{li}_w"] = layer.w
        arrays[f"layer{li}_u"] = layer.u
        arrays[f"layer{li}_b"] = layer.b
    arrays["dense_w"] = model.dense_w
    arrays["dense_b"] = model.dense_b
    if model.stats is not None:
        arrays["feature_mean"] = model.stats.feature_mean
        arrays["feature_std"] = model.stats.feature_std
        arrays["target_mean"] = model.stats.target_mean
        arrays["target_std"] = model.stats.target_std
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def load_model(path) -> LstmModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != "entrylab-lstm" or meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"unrecognized model container: {path}")
        layers = [
            LstmLayerParams(data[f"layer{li}_w"].astype(float),
                            data[f"layer{li}_u"].astype(float),
                            data[f"layer{li}_b"].astype(float))
            for li in range(meta["n_layers"])
        ]
        stats = None
        if meta["has_stats"]:
            stats = NormStats(data["feature_mean"].astype(float),
                              data["feature_std"].astype(float),
                              data["target_mean"].astype(float),
                              data["target_std"].astype(float))
        return LstmModel(layers=layers,
                         dense_w=data["dense_w"].astype(float),
                         dense_b=data["dense_b"].astype(float),
                         dropout_rate=meta["dropout_rate"],
                         hidden_activation=meta["hidden_activation"],
                         stats=stats,
                         seed=meta["seed"])
