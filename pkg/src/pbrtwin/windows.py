"""Fixed-window training tensors with train/validation/test splits.

A sample covering steps [t-7 .. t] predicts the state targets (reactivity
and mesh principal components) at t and the dependent input features at
t+1. Windows never span two sequences, inputs are z-scored with
training-split statistics only, and the split is a random partition of
samples with a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import meshpca
from .features import FEATURE_NAMES
from .sequences import OperationSequence

WINDOW_DEFAULT = 8

POWER_PC_NAMES = [f"power_pc{i + 1}" for i in range(5)]
FLUX_PC_NAMES = [f"flux_pc{i + 1}" for i in range(5)]
NEXT_STEP_TARGETS = [
    "avg_discharge_burnup",
    "lastpass_r1",
    "lastpass_r2",
    "lastpass_r3",
    "lastpass_r4",
    "discarded_count",
    "bu_bin_1",
    "bu_bin_2",
    "bu_bin_3",
    "bu_bin_4",
    "bu_bin_5",
    "bu_bin_6",
    "bu_bin_7",
    "bu_bin_8",
    "bu_bin_9",
    "power_per_pebble",
]
TARGET_NAMES = ["reactivity"] + POWER_PC_NAMES + FLUX_PC_NAMES + NEXT_STEP_TARGETS

# Table of per-target hidden layer sizes used as training defaults.
DEFAULT_LAYERS = {
    "reactivity": [256, 128],
    "power_pc1": [64],
    "power_pc2": [256, 128],
    "power_pc3": [32],
    "power_pc4": [256, 128],
    "power_pc5": [256, 128],
    "flux_pc1": [256],
    "flux_pc2": [256],
    "flux_pc3": [64, 4],
    "flux_pc4": [256, 128],
    "flux_pc5": [128, 64],
    "avg_discharge_burnup": [256],
    "lastpass_r1": [64],
    "lastpass_r2": [256],
    "lastpass_r3": [64],
    "lastpass_r4": [256],
    "discarded_count": [32],
    "bu_bin_1": [32],
    "bu_bin_2": [128, 64],
    "bu_bin_3": [128, 8],
    "bu_bin_4": [64],
    "bu_bin_5": [256, 128],
    "bu_bin_6": [128, 64],
    "bu_bin_7": [64, 4],
    "bu_bin_8": [256, 128],
    "bu_bin_9": [16, 8],
    "power_per_pebble": [32, 4],
}


def per_kw_meshes(seq: OperationSequence) -> tuple[np.ndarray, np.ndarray]:
    """Meshes scaled to unit total power: the shape is what PCA compresses.

    Raw tallies scale with the operating power over four decades, which
    would collapse nearly all variance into a single magnitude component.
    """
    power = np.maximum(seq.features[:, 1], 1e-9)[:, None]
    return seq.power_mesh / power, seq.flux_mesh / power


def fit_mesh_pca(
    sequences: list[OperationSequence], n_components: int = 5
) -> tuple[meshpca.PcaModel, meshpca.PcaModel]:
    """Fit power and (jointly over all three groups) flux PCA models."""
    train = [s for s in sequences if not s.holdout]
    p = np.concatenate([per_kw_meshes(s)[0] for s in train])
    f = np.concatenate([per_kw_meshes(s)[1] for s in train])
    return (
        meshpca.fit(p, n_components, tag="power"),
        meshpca.fit(f, n_components, tag="flux"),
    )


@dataclass
class WindowedDataset:
    X: np.ndarray                      # (n, window, n_features) raw
    targets: dict                      # name -> (n,) raw
    split: dict                        # "train"/"val"/"test" -> index arrays
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_stats: dict                 # name -> (mean, std)
    window: int
    feature_names: list = field(default_factory=lambda: list(FEATURE_NAMES))
    target_names: list = field(default_factory=lambda: list(TARGET_NAMES))
    sample_sequence: np.ndarray | None = None  # sequence id per sample

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    def standardize_inputs(self, X: np.ndarray) -> np.ndarray:
        return (X - self.feature_mean) / self.feature_std

    def inputs(self, split: str) -> np.ndarray:
        return self.standardize_inputs(self.X[self.split[split]])

    def target_values(self, name: str, split: str, standardized: bool = True):
        y = self.targets[name][self.split[split]]
        if not standardized:
            return y
        mean, std = self.target_stats[name]
        return (y - mean) / std

    def destandardize_target(self, name: str, y):
        mean, std = self.target_stats[name]
        return y * std + mean


def window_dataset(
    sequences: list[OperationSequence],
    window: int = WINDOW_DEFAULT,
    pca_power: meshpca.PcaModel | None = None,
    pca_flux: meshpca.PcaModel | None = None,
    split_fractions: tuple = (0.70, 0.15, 0.15),
    seed: int = 0,
    include_holdout: bool = False,
) -> WindowedDataset:
    """Slide windows within each sequence and split samples 70/15/15."""
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    usable = [s for s in sequences if include_holdout or not s.holdout]
    if pca_power is None or pca_flux is None:
        pca_power, pca_flux = fit_mesh_pca(usable)

    xs, ys, seq_ids = [], {name: [] for name in TARGET_NAMES}, []
    for sid, seq in enumerate(usable):
        if seq.length < window:
            import warnings

            warnings.warn(f"sequence {seq.name} shorter than window; skipped")
            continue
        pkw, fkw = per_kw_meshes(seq)
        p_scores = meshpca.transform(pca_power, pkw)
        f_scores = meshpca.transform(pca_flux, fkw)
        feats = seq.features
        for t in range(window - 1, seq.length):
            xs.append(feats[t - window + 1 : t + 1])
            seq_ids.append(sid)
            ys["reactivity"].append(seq.reactivity[t])
            for i, name in enumerate(POWER_PC_NAMES):
                ys[name].append(p_scores[t, i])
            for i, name in enumerate(FLUX_PC_NAMES):
                ys[name].append(f_scores[t, i])
            nxt = feats[t + 1]
            for name in NEXT_STEP_TARGETS:
                ys[name].append(nxt[FEATURE_NAMES.index(name)])

    X = np.array(xs)
    targets = {name: np.array(v) for name, v in ys.items()}
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(round(split_fractions[0] * n))
    n_val = int(round(split_fractions[1] * n))
    split = {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train : n_train + n_val]),
        "test": np.sort(order[n_train + n_val :]),
    }

    train_X = X[split["train"]]
    flat = train_X.reshape(-1, X.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std[std < 1e-12] = 1.0
    target_stats = {}
    for name, y in targets.items():
        ty = y[split["train"]]
        t_std = float(ty.std())
        target_stats[name] = (float(ty.mean()), t_std if t_std > 1e-12 else 1.0)

    return WindowedDataset(
        X=X,
        targets=targets,
        split=split,
        feature_mean=mean,
        feature_std=std,
        target_stats=target_stats,
        window=window,
        sample_sequence=np.array(seq_ids),
    )
