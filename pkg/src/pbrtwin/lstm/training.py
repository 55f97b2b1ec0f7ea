"""Training loop with early stopping, evaluation, and k-fold architecture
selection. One model is trained per target variable."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .adam import AdamState, adam_step, learning_rate
from .network import LstmConfig, LstmModel


class EarlyStopper:
    """Stops after `patience` epochs without improvement, never before
    `min_epochs`; remembers which epoch held the best loss."""

    def __init__(self, patience: int, min_epochs: int):
        self.patience = patience
        self.min_epochs = min_epochs
        self.best_loss = math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, val_loss: float) -> tuple[bool, bool]:
        """(improved, stop) for a 1-based epoch number."""
        improved = val_loss < self.best_loss
        if improved:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        stop = epoch >= self.min_epochs and self.stale >= self.patience
        return improved, stop


def _fit(
    config: LstmConfig,
    X_train,
    y_train,
    X_val,
    y_val,
    target: str = "",
    adam: AdamState | None = None,
    log=None,
) -> LstmModel:
    model = LstmModel.initialize(config, target)
    adam = adam or AdamState()
    rng = np.random.default_rng([config.seed & 0x7FFFFFFF, 0x7EA1])
    stopper = EarlyStopper(config.patience, config.min_epochs)
    best_weights = model.copy_weights()
    history = {"train_loss": [], "val_loss": [], "lr": [], "diverged": False}

    n = X_train.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                pred, cache = model.forward(
                    X_train[idx], train_mode=True, dropout_rng=rng
                )
                grads = model.backward(cache, y_train[idx])
                lr = learning_rate(
                    adam.step, config.lr0, config.lr_decay_factor, config.lr_decay_every
                )
                adam_step(adam, model, grads, lr)
                epoch_loss += float(np.sum((pred - y_train[idx]) ** 2))
        train_loss = epoch_loss / n + model.l2_penalty()
        val_pred = model.forward(X_val)
        val_loss = float(np.mean((val_pred - y_val) ** 2))
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        history["lr"].append(
            learning_rate(adam.step, config.lr0, config.lr_decay_factor, config.lr_decay_every)
        )
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            history["diverged"] = True
            break
        improved, stop = stopper.update(epoch, val_loss)
        if improved:
            best_weights = model.copy_weights()
        if log:
            log(epoch, train_loss, val_loss)
        if stop:
            break

    model.load_weights(best_weights)
    history["best_epoch"] = stopper.best_epoch
    history["best_val_loss"] = stopper.best_loss
    history["stopped_epoch"] = len(history["val_loss"])
    model.history = history
    return model


def train(config: LstmConfig, dataset, target: str, log=None) -> LstmModel:
    """Train one target's model on the dataset's train/val splits."""
    if target not in dataset.targets:
        raise KeyError(f"dataset has no target {target!r}")
    model = _fit(
        config,
        dataset.inputs("train"),
        dataset.target_values(target, "train"),
        dataset.inputs("val"),
        dataset.target_values(target, "val"),
        target=target,
        log=log,
    )
    model.feature_mean = dataset.feature_mean.copy()
    model.feature_std = dataset.feature_std.copy()
    mean, std = dataset.target_stats[target]
    model.target_mean = mean
    model.target_std = std
    return model


@dataclass
class EvalResult:
    r_squared: float | None  # None when the target has zero variance
    mae: float
    n: int


def evaluate(model: LstmModel, dataset, split: str = "test") -> EvalResult:
    """R^2 and MAE in physical units on one split."""
    idx = dataset.split[split]
    if idx.size == 0:
        raise ValueError(f"split {split!r} is empty")
    y = dataset.targets[model.target][idx]
    pred_std = model.forward(dataset.inputs(split))
    pred = dataset.destandardize_target(model.target, pred_std)
    mae = float(np.mean(np.abs(pred - y)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0.0:
        return EvalResult(None, mae, int(idx.size))
    ss_res = float(np.sum((y - pred) ** 2))
    return EvalResult(1.0 - ss_res / ss_tot, mae, int(idx.size))


def kfold_tune(
    candidates: list[list[int]],
    dataset,
    target: str,
    k: int = 5,
    base_config: LstmConfig | None = None,
) -> tuple[list, dict]:
    """Pick the architecture with the lowest mean validation loss across
    k folds of the training samples; ties break toward fewer parameters."""
    if k < 2:
        raise ValueError("k-fold tuning needs k >= 2")
    if not candidates:
        raise ValueError("no candidate architectures")
    base = base_config or LstmConfig(hidden_layer_sizes=[32])
    train_idx = dataset.split["train"]
    rng = np.random.default_rng([base.seed & 0x7FFFFFFF, 0xF01D])
    order = rng.permutation(len(train_idx))
    folds = np.array_split(order, k)

    X_all = dataset.standardize_inputs(dataset.X[train_idx])
    mean, std = dataset.target_stats[target]
    y_all = (dataset.targets[target][train_idx] - mean) / std

    report = {}
    for layers in candidates:
        losses = []
        for fi, fold in enumerate(folds):
            val_mask = np.zeros(len(train_idx), dtype=bool)
            val_mask[fold] = True
            config = replace(
                base, hidden_layer_sizes=list(layers), seed=base.seed + fi
            )
            model = _fit(
                config,
                X_all[~val_mask],
                y_all[~val_mask],
                X_all[val_mask],
                y_all[val_mask],
                target=target,
            )
            losses.append(model.history["best_val_loss"])
        probe = LstmModel.initialize(
            replace(base, hidden_layer_sizes=list(layers)), target
        )
        report[tuple(layers)] = {
            "mean_val_loss": float(np.mean(losses)),
            "fold_losses": [float(v) for v in losses],
            "n_parameters": probe.n_parameters(),
        }

    best = min(
        report.items(), key=lambda kv: (kv[1]["mean_val_loss"], kv[1]["n_parameters"])
    )
    return list(best[0]), report
