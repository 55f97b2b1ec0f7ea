"""Versioned model checkpoints: weights, normalization, training history."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .network import LstmConfig, LstmModel

SCHEMA_VERSION = 1


def _weights_checksum(model: LstmModel) -> str:
    h = hashlib.sha256()
    for name, arr in model.parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def save_model(model: LstmModel, path) -> None:
    meta = {
        "schema_version": SCHEMA_VERSION,
        "target": model.target,
        "config": asdict(model.config),
        "target_mean": model.target_mean,
        "target_std": model.target_std,
        "history": model.history,
        "checksum": _weights_checksum(model),
    }
    arrays = {name.replace(".", "__"): arr for name, arr in model.parameters()}
    if model.feature_mean is not None:
        arrays["norm__feature_mean"] = model.feature_mean
        arrays["norm__feature_std"] = model.feature_std
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        **arrays,
    )


def load_model(path) -> LstmModel:
    data = np.load(path)
    meta = json.loads(bytes(data["meta"]).decode())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"checkpoint schema {meta.get('schema_version')!r} not supported"
        )
    config = LstmConfig(**meta["config"])
    model = LstmModel.initialize(config, meta["target"])
    for name, arr in model.parameters():
        np.copyto(arr, data[name.replace(".", "__")])
    if _weights_checksum(model) != meta["checksum"]:
        raise ValueError("checkpoint weight checksum mismatch")
    if "norm__feature_mean" in data:
        model.feature_mean = data["norm__feature_mean"]
        model.feature_std = data["norm__feature_std"]
    model.target_mean = meta["target_mean"]
    model.target_std = meta["target_std"]
    model.history = meta["history"]
    return model


def save_learning_curve(model: LstmModel, path) -> None:
    """Per-epoch train/validation losses as CSV for plotting."""
    hist = model.history
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for i, (tr, vl, lr) in enumerate(
            zip(hist["train_loss"], hist["val_loss"], hist["lr"]), start=1
        ):
            writer.writerow([i, tr, vl, lr])


def save_registry(models: dict, directory) -> None:
    """Persist a {target: model} registry as one checkpoint per target."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for target, model in models.items():
        fname = f"{target}.npz"
        save_model(model, directory / fname)
        index[target] = fname
    with open(directory / "registry.json", "w") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, "models": index}, fh, indent=2)


def load_registry(directory) -> dict:
    directory = Path(directory)
    with open(directory / "registry.json") as fh:
        index = json.load(fh)
    if index.get("schema_version") != SCHEMA_VERSION:
        raise ValueError("unsupported registry schema")
    return {
        target: load_model(directory / fname)
        for target, fname in index["models"].items()
    }
