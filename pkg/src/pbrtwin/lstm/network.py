"""From-scratch LSTM sequence regressor: forward pass and full BPTT.

Gate order in the fused weight matrices is (input, forget, candidate,
output). Recurrent dropout uses the inverted convention with one mask per
sample per layer, fixed across the window's time steps and applied only
to the hidden state entering the recurrent matmul.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LstmConfig:
    hidden_layer_sizes: list
    input_dim: int = 21
    window: int = 8
    l2_lambda: float = 1e-4         # paper states L2 without a value
    recurrent_dropout: float = 0.10
    lr0: float = 0.01
    lr_decay_factor: float = 0.9
    lr_decay_every: int = 10_000    # optimizer steps
    patience: int = 25
    min_epochs: int = 10
    max_epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.hidden_layer_sizes or any(s <= 0 for s in self.hidden_layer_sizes):
            raise ValueError("hidden layer sizes must be positive")
        if not 0.0 <= self.recurrent_dropout < 1.0:
            raise ValueError("recurrent dropout must lie in [0, 1)")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValueError("lr decay factor must lie in (0, 1]")
        if self.l2_lambda < 0.0:
            raise ValueError("l2_lambda must be non-negative")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class LstmModel:
    """Weights plus the normalization statistics needed to predict raw data."""

    config: LstmConfig
    layers: list            # per layer: {"Wx": (D,4H), "Wh": (H,4H), "b": (4H,)}
    dense_w: np.ndarray     # (H_last, 1)
    dense_b: np.ndarray     # (1,)
    target: str = ""
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    target_mean: float = 0.0
    target_std: float = 1.0
    history: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: LstmConfig, target: str = "") -> "LstmModel":
        rng = np.random.default_rng([config.seed & 0x7FFFFFFF, 0x1257])
        layers = []
        d = config.input_dim
        for h in config.hidden_layer_sizes:
            limit = np.sqrt(6.0 / (d + 4 * h))  # Glorot bounds on the fused kernel
            wx = rng.uniform(-limit, limit, size=(d, 4 * h))
            wh = np.concatenate([_orthogonal(rng, h) for _ in range(4)], axis=1)
            b = np.zeros(4 * h)
            b[h : 2 * h] = 1.0  # forget gate opens at init
            layers.append({"Wx": wx, "Wh": wh, "b": b})
            d = h
        limit = np.sqrt(6.0 / (d + 1))
        dense_w = rng.uniform(-limit, limit, size=(d, 1))
        return cls(
            config=config,
            layers=layers,
            dense_w=dense_w,
            dense_b=np.zeros(1),
            target=target,
        )

    # ---------------------------------------------------------------- params

    def parameters(self):
        """(name, array) pairs in a fixed order."""
        for i, layer in enumerate(self.layers):
            for key in ("Wx", "Wh", "b"):
                yield f"layer{i}.{key}", layer[key]
        yield "dense.W", self.dense_w
        yield "dense.b", self.dense_b

    def copy_weights(self) -> dict:
        return {name: arr.copy() for name, arr in self.parameters()}

    def load_weights(self, weights: dict) -> None:
        for name, arr in self.parameters():
            np.copyto(arr, weights[name])

    def weight_matrices(self):
        """Matrices subject to L2 (biases excluded)."""
        for name, arr in self.parameters():
            if not name.endswith(".b"):
                yield name, arr

    def l2_penalty(self) -> float:
        lam = self.config.l2_lambda
        if lam == 0.0:
            return 0.0
        return lam * sum(float((w ** 2).sum()) for _, w in self.weight_matrices())

    # ---------------------------------------------------------------- forward

    def forward(self, X, train_mode: bool = False, dropout_rng=None):
        """Predict (batch,) from (batch, window, input_dim); cache if training."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 2
        if single:
            X = X[None]
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite input sample")
        batch, T, d = X.shape
        if (T, d) != (self.config.window, self.config.input_dim):
            raise ValueError(
                f"sample shape {(T, d)} does not match config "
                f"{(self.config.window, self.config.input_dim)}"
            )

        p = self.config.recurrent_dropout if train_mode else 0.0
        cache = {"X": X, "layers": []} if train_mode else None
        inputs = X
        for layer in self.layers:
            h_size = layer["Wh"].shape[0]
            if p > 0.0:
                if dropout_rng is None:
                    raise ValueError("train_mode with dropout needs an rng")
                mask = (dropout_rng.random((batch, h_size)) >= p) / (1.0 - p)
            else:
                mask = np.ones((batch, h_size))
            h = np.zeros((batch, h_size))
            c = np.zeros((batch, h_size))
            steps = []
            hs = np.empty((batch, T, h_size))
            for t in range(T):
                h_drop = h * mask
                z = inputs[:, t] @ layer["Wx"] + h_drop @ layer["Wh"] + layer["b"]
                a_i = _sigmoid(z[:, :h_size])
                a_f = _sigmoid(z[:, h_size : 2 * h_size])
                a_g = np.tanh(z[:, 2 * h_size : 3 * h_size])
                a_o = _sigmoid(z[:, 3 * h_size :])
                c_new = a_f * c + a_i * a_g
                tanh_c = np.tanh(c_new)
                h_new = a_o * tanh_c
                if train_mode:
                    steps.append(
                        {
                            "x": inputs[:, t],
                            "h_drop": h_drop,
                            "c_prev": c,
                            "a_i": a_i,
                            "a_f": a_f,
                            "a_g": a_g,
                            "a_o": a_o,
                            "tanh_c": tanh_c,
                        }
                    )
                h, c = h_new, c_new
                hs[:, t] = h
            if train_mode:
                cache["layers"].append({"mask": mask, "steps": steps, "h_seq": hs})
            inputs = hs
        pred = (inputs[:, -1] @ self.dense_w)[:, 0] + self.dense_b[0]
        if train_mode:
            cache["h_last"] = inputs[:, -1]
            cache["pred"] = pred
        if single:
            pred = pred[0] if not train_mode else pred
        return (pred, cache) if train_mode else pred

    # ---------------------------------------------------------------- backward

    def backward(self, cache, y) -> dict:
        """Gradients of MSE + L2 for every parameter, via BPTT."""
        y = np.asarray(y, dtype=float)
        pred = cache["pred"]
        batch = pred.shape[0]
        dpred = 2.0 * (pred - y) / batch

        grads = {name: np.zeros_like(arr) for name, arr in self.parameters()}
        grads["dense.W"] += cache["h_last"].T @ dpred[:, None]
        grads["dense.b"] += np.array([dpred.sum()])
        dh_top = dpred[:, None] * self.dense_w[:, 0][None, :]

        T = self.config.window
        # d(loss)/d(h_t) of the topmost layer: only the last step feeds dense
        d_inputs = None
        for li in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[li]
            lc = cache["layers"][li]
            h_size = layer["Wh"].shape[0]
            mask = lc["mask"]
            dh_seq = np.zeros((batch, T, h_size))
            if li == len(self.layers) - 1:
                dh_seq[:, -1] = dh_top
            else:
                dh_seq = d_inputs

            dx_seq = np.zeros((batch, T, layer["Wx"].shape[0]))
            dh_next = np.zeros((batch, h_size))
            dc_next = np.zeros((batch, h_size))
            for t in range(T - 1, -1, -1):
                s = lc["steps"][t]
                dh = dh_seq[:, t] + dh_next
                dc = dc_next + dh * s["a_o"] * (1.0 - s["tanh_c"] ** 2)
                da_o = dh * s["tanh_c"]
                da_f = dc * s["c_prev"]
                da_i = dc * s["a_g"]
                da_g = dc * s["a_i"]
                dz = np.concatenate(
                    [
                        da_i * s["a_i"] * (1.0 - s["a_i"]),
                        da_f * s["a_f"] * (1.0 - s["a_f"]),
                        da_g * (1.0 - s["a_g"] ** 2),
                        da_o * s["a_o"] * (1.0 - s["a_o"]),
                    ],
                    axis=1,
                )
                grads[f"layer{li}.Wx"] += s["x"].T @ dz
                grads[f"layer{li}.Wh"] += s["h_drop"].T @ dz
                grads[f"layer{li}.b"] += dz.sum(axis=0)
                dx_seq[:, t] = dz @ layer["Wx"].T
                dh_next = (dz @ layer["Wh"].T) * mask
                dc_next = dc * s["a_f"]
            d_inputs = dx_seq

        lam = self.config.l2_lambda
        if lam > 0.0:
            for name, w in self.weight_matrices():
                grads[name] += 2.0 * lam * w
        return grads

    # ---------------------------------------------------------------- loss

    def loss(self, X, y, train_mode=False, dropout_rng=None):
        """MSE + L2 penalty; used directly by the finite-difference checks."""
        if train_mode:
            pred, _ = self.forward(X, train_mode=True, dropout_rng=dropout_rng)
        else:
            pred = self.forward(X)
        y = np.asarray(y, dtype=float)
        return float(np.mean((pred - y) ** 2)) + self.l2_penalty()

    # ---------------------------------------------------------------- predict

    def predict_raw(self, X_raw) -> np.ndarray:
        """Predict physical-unit targets from raw (unstandardized) windows."""
        if self.feature_mean is None:
            raise ValueError("model carries no normalization statistics")
        X = (np.asarray(X_raw, dtype=float) - self.feature_mean) / self.feature_std
        pred = self.forward(X)
        return pred * self.target_std + self.target_mean

    def n_parameters(self) -> int:
        return sum(arr.size for _, arr in self.parameters())
