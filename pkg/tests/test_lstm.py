import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbrtwin.lstm import (
    AdamState,
    EarlyStopper,
    LstmConfig,
    LstmModel,
    adam_step,
    evaluate,
    kfold_tune,
    learning_rate,
    load_model,
    save_model,
    train,
)


def zeroed_model(config, target=""):
    model = LstmModel.initialize(config, target)
    for _, arr in model.parameters():
        arr[...] = 0.0
    return model


# ---------------------------------------------------------------- forward


def test_zero_network_outputs_dense_bias():
    config = LstmConfig(hidden_layer_sizes=[4, 3], input_dim=5, window=6)
    model = zeroed_model(config)
    model.dense_b[0] = 0.73
    X = np.random.default_rng(0).standard_normal((7, 6, 5))
    pred = model.forward(X)
    assert np.allclose(pred, 0.73, atol=1e-15)


def test_forward_eval_deterministic():
    config = LstmConfig(hidden_layer_sizes=[8], input_dim=4, window=5, seed=3)
    model = LstmModel.initialize(config)
    X = np.random.default_rng(1).standard_normal((3, 5, 4))
    assert np.array_equal(model.forward(X), model.forward(X))


def test_forward_rejects_nonfinite_and_bad_shape():
    config = LstmConfig(hidden_layer_sizes=[4], input_dim=3, window=4)
    model = LstmModel.initialize(config)
    bad = np.full((1, 4, 3), np.nan)
    with pytest.raises(ValueError):
        model.forward(bad)
    with pytest.raises(ValueError):
        model.forward(np.zeros((1, 4, 2)))


def test_single_unit_hand_computed_recurrence():
    """Pencil-and-paper oracle for one unit over a two-step window."""
    config = LstmConfig(
        hidden_layer_sizes=[1], input_dim=1, window=2, l2_lambda=0.0,
        recurrent_dropout=0.0,
    )
    model = zeroed_model(config)
    wx = [0.5, -0.3, 0.8, 0.2]     # gates i, f, g, o
    wh = [0.1, 0.4, -0.2, 0.3]
    b = [0.1, 1.0, 0.0, -0.1]
    model.layers[0]["Wx"][0, :] = wx
    model.layers[0]["Wh"][0, :] = wh
    model.layers[0]["b"][:] = b
    model.dense_w[0, 0] = 2.0
    model.dense_b[0] = 0.5

    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    x = [0.7, -0.4]
    h = c = 0.0
    for t in range(2):
        zi = wx[0] * x[t] + wh[0] * h + b[0]
        zf = wx[1] * x[t] + wh[1] * h + b[1]
        zg = wx[2] * x[t] + wh[2] * h + b[2]
        zo = wx[3] * x[t] + wh[3] * h + b[3]
        c = sig(zf) * c + sig(zi) * math.tanh(zg)
        h = sig(zo) * math.tanh(c)
    expected = 2.0 * h + 0.5

    got = model.forward(np.array(x).reshape(2, 1))
    assert got == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------- gradients


def numeric_gradients(model, X, y, h=1e-5):
    grads = {}
    for name, arr in model.parameters():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = model.loss(X, y)
            flat[i] = orig - h
            down = model.loss(X, y)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def check_gradients(config, seed, batch=4):
    rng = np.random.default_rng(seed)
    model = LstmModel.initialize(config)
    X = rng.standard_normal((batch, config.window, config.input_dim))
    y = rng.standard_normal(batch)
    _, cache = model.forward(X, train_mode=True, dropout_rng=rng)
    analytic = model.backward(cache, y)
    numeric = numeric_gradients(model, X, y)
    # denominator floored at 1e-6 of the gradient scale: differences on
    # near-zero entries are central-difference cancellation noise
    gmax = max(float(np.max(np.abs(a))) for a in analytic.values())
    floor = max(1e-8, 1e-6 * gmax)
    worst = 0.0
    for name in numeric:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def test_gradients_match_finite_differences_basic():
    config = LstmConfig(
        hidden_layer_sizes=[3], input_dim=3, window=3,
        l2_lambda=1e-3, recurrent_dropout=0.0, seed=0,
    )
    assert check_gradients(config, seed=0) < 1e-4


def test_gradients_match_finite_differences_two_layers():
    config = LstmConfig(
        hidden_layer_sizes=[4, 2], input_dim=2, window=4,
        l2_lambda=0.0, recurrent_dropout=0.0, seed=1,
    )
    assert check_gradients(config, seed=1) < 1e-4


@given(seed=st.integers(0, 10_000))
@settings(max_examples=12, deadline=None)
def test_gradients_property_random_configs(seed):
    rng = np.random.default_rng(seed)
    layers = [int(rng.integers(2, 5)) for _ in range(int(rng.integers(1, 3)))]
    config = LstmConfig(
        hidden_layer_sizes=layers,
        input_dim=int(rng.integers(1, 4)),
        window=int(rng.integers(2, 5)),
        l2_lambda=float(rng.choice([0.0, 1e-3])),
        recurrent_dropout=0.0,
        seed=seed,
    )
    assert check_gradients(config, seed=seed, batch=3) < 1e-4


def test_zero_residual_gradients():
    config = LstmConfig(
        hidden_layer_sizes=[3], input_dim=2, window=3,
        l2_lambda=0.0, recurrent_dropout=0.0,
    )
    model = LstmModel.initialize(config)
    rng = np.random.default_rng(2)
    X = rng.standard_normal((5, 3, 2))
    pred, cache = model.forward(X, train_mode=True, dropout_rng=rng)
    grads = model.backward(cache, pred)  # y == prediction, zero residual
    for name, g in grads.items():
        assert np.allclose(g, 0.0, atol=1e-14), name


def test_l2_only_gradient_is_two_lambda_w():
    lam = 0.37
    config = LstmConfig(
        hidden_layer_sizes=[3], input_dim=2, window=3,
        l2_lambda=lam, recurrent_dropout=0.0,
    )
    model = LstmModel.initialize(config)
    rng = np.random.default_rng(3)
    X = rng.standard_normal((5, 3, 2))
    pred, cache = model.forward(X, train_mode=True, dropout_rng=rng)
    grads = model.backward(cache, pred)
    for name, arr in model.parameters():
        if name.endswith(".b"):
            assert np.allclose(grads[name], 0.0, atol=1e-14)
        else:
            assert np.allclose(grads[name], 2.0 * lam * arr, atol=1e-12), name


def test_dropout_mask_expectation():
    # averaging train-mode predictions over many masks approaches the
    # dropout-free prediction (inverted dropout)
    config = LstmConfig(
        hidden_layer_sizes=[12], input_dim=3, window=4,
        recurrent_dropout=0.10, seed=5, l2_lambda=0.0,
    )
    model = LstmModel.initialize(config)
    for _, arr in model.parameters():
        arr *= 0.4  # keep the net near-linear so the Jensen bias stays small
    rng = np.random.default_rng(6)
    X = rng.standard_normal((1, 4, 3))
    clean = model.forward(X)[0]
    draws = np.array(
        [model.forward(X, train_mode=True, dropout_rng=rng)[0][0] for _ in range(4000)]
    )
    stderr = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - clean) < 4 * stderr + 5e-3


# ---------------------------------------------------------------- adam


def test_adam_first_step_is_signed_lr():
    config = LstmConfig(hidden_layer_sizes=[2], input_dim=2, window=2)
    model = zeroed_model(config)
    grads = {name: np.full_like(arr, 0.0) for name, arr in model.parameters()}
    grads["dense.W"] = np.array([[3.0], [-0.5]])
    state = AdamState()
    adam_step(state, model, grads, lr=0.01)
    assert model.dense_w[0, 0] == pytest.approx(-0.01, rel=1e-6)
    assert model.dense_w[1, 0] == pytest.approx(+0.01, rel=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_decays_moments():
    config = LstmConfig(hidden_layer_sizes=[2], input_dim=2, window=2)
    model = zeroed_model(config)
    g1 = {name: np.ones_like(arr) for name, arr in model.parameters()}
    g0 = {name: np.zeros_like(arr) for name, arr in model.parameters()}
    state = AdamState()
    adam_step(state, model, g1, lr=0.0)  # lr 0: only moments move
    m_before = state.m["dense.W"].copy()
    w_before = model.dense_w.copy()
    adam_step(state, model, g0, lr=0.0)
    assert np.allclose(state.m["dense.W"], state.beta1 * m_before)
    assert np.array_equal(model.dense_w, w_before)
    assert state.step == 2


def test_learning_rate_schedule():
    assert learning_rate(0) == 0.01
    assert learning_rate(10_000) == pytest.approx(0.009, rel=1e-12)
    assert learning_rate(20_000) == pytest.approx(0.01 * 0.81, rel=1e-12)
    ts = np.arange(0, 50_000, 500)
    lrs = [learning_rate(int(t)) for t in ts]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


# ---------------------------------------------------------------- early stopping


def test_early_stopper_never_triggers_while_improving():
    stopper = EarlyStopper(patience=25, min_epochs=10)
    for epoch in range(1, 51):
        improved, stop = stopper.update(epoch, 1.0 / epoch)
        assert improved and not stop


def test_early_stopper_patience_arithmetic():
    stopper = EarlyStopper(patience=25, min_epochs=10)
    stops = []
    for epoch in range(1, 60):
        loss = 1.0 - 0.05 * min(epoch, 12)  # improves until epoch 12, then flat
        _, stop = stopper.update(epoch, loss)
        if stop:
            stops.append(epoch)
            break
    assert stops == [37]
    assert stopper.best_epoch == 12


def test_early_stopper_respects_min_epochs():
    stopper = EarlyStopper(patience=2, min_epochs=10)
    for epoch in range(1, 20):
        _, stop = stopper.update(epoch, 5.0)
        if stop:
            assert epoch == 10
            break
    else:
        pytest.fail("never stopped")


# ---------------------------------------------------------------- training


class SyntheticDataset:
    """Tiny in-memory dataset with the WindowedDataset interface."""

    def __init__(self, n=260, window=4, dim=3, seed=0, target="y"):
        rng = np.random.default_rng(seed)
        self.X = rng.standard_normal((n, window, dim))
        y = self.X[:, -1, 0] * 1.5 + 0.5 * np.tanh(self.X[:, 0, 1]) + 0.2
        self.targets = {target: y}
        idx = rng.permutation(n)
        self.split = {
            "train": np.sort(idx[: int(0.7 * n)]),
            "val": np.sort(idx[int(0.7 * n) : int(0.85 * n)]),
            "test": np.sort(idx[int(0.85 * n) :]),
        }
        flat = self.X[self.split["train"]].reshape(-1, dim)
        self.feature_mean = flat.mean(axis=0)
        self.feature_std = np.where(flat.std(axis=0) > 1e-12, flat.std(axis=0), 1.0)
        ty = y[self.split["train"]]
        self.target_stats = {target: (float(ty.mean()), float(ty.std()))}

    def standardize_inputs(self, X):
        return (X - self.feature_mean) / self.feature_std

    def inputs(self, split):
        return self.standardize_inputs(self.X[self.split[split]])

    def target_values(self, name, split, standardized=True):
        y = self.targets[name][self.split[split]]
        if not standardized:
            return y
        mean, std = self.target_stats[name]
        return (y - mean) / std

    def destandardize_target(self, name, y):
        mean, std = self.target_stats[name]
        return y * std + mean


def small_config(**kw):
    base = dict(
        hidden_layer_sizes=[8],
        input_dim=3,
        window=4,
        l2_lambda=1e-5,
        recurrent_dropout=0.05,
        max_epochs=30,
        patience=8,
        min_epochs=5,
        batch_size=32,
        seed=11,
    )
    base.update(kw)
    return LstmConfig(**base)


def test_train_learns_synthetic_signal():
    ds = SyntheticDataset()
    model = train(small_config(), ds, "y")
    result = evaluate(model, ds, "test")
    assert result.r_squared is not None and result.r_squared > 0.8
    assert model.history["best_epoch"] >= 1
    # returned weights achieve the minimum recorded validation loss
    val_pred = model.forward(ds.inputs("val"))
    val_loss = float(np.mean((val_pred - ds.target_values("y", "val")) ** 2))
    assert val_loss == pytest.approx(min(model.history["val_loss"]), rel=1e-9)


def test_train_bit_identical_under_seed():
    ds = SyntheticDataset()
    a = train(small_config(), ds, "y")
    b = train(small_config(), ds, "y")
    for (na, wa), (nb, wb) in zip(a.parameters(), b.parameters()):
        assert na == nb and np.array_equal(wa, wb)
    assert a.history["val_loss"] == b.history["val_loss"]


def test_train_divergence_flagged():
    ds = SyntheticDataset()
    model = train(small_config(lr0=1e200, max_epochs=15), ds, "y")
    assert model.history["diverged"]
    for _, arr in model.parameters():
        assert np.all(np.isfinite(arr))


def test_train_unknown_target():
    ds = SyntheticDataset()
    with pytest.raises(KeyError):
        train(small_config(), ds, "nope")


# ---------------------------------------------------------------- evaluation


class _StubModel:
    def __init__(self, preds, target="y"):
        self.preds = np.asarray(preds, dtype=float)
        self.target = target

    def forward(self, X):
        return self.preds


def _metric_dataset(y):
    class DS:
        pass

    ds = DS()
    y = np.asarray(y, dtype=float)
    ds.targets = {"y": y}
    ds.split = {"test": np.arange(len(y))}
    ds.inputs = lambda split: np.zeros((len(y), 1, 1))
    ds.destandardize_target = lambda name, v: v
    return ds


def test_evaluate_reference_points():
    ds = _metric_dataset([1.0, 2.0, 3.0])
    perfect = evaluate(_StubModel([1.0, 2.0, 3.0]), ds, "test")
    assert perfect.r_squared == pytest.approx(1.0) and perfect.mae == 0.0
    mean_model = evaluate(_StubModel([2.0, 2.0, 2.0]), ds, "test")
    assert mean_model.r_squared == pytest.approx(0.0, abs=1e-12)
    off = evaluate(_StubModel([1.0, 2.0, 4.0]), ds, "test")
    assert off.r_squared == pytest.approx(0.5)
    assert off.mae == pytest.approx(1.0 / 3.0)


def test_evaluate_zero_variance_target():
    ds = _metric_dataset([5.0, 5.0, 5.0])
    res = evaluate(_StubModel([5.0, 5.1, 4.9]), ds, "test")
    assert res.r_squared is None


# ---------------------------------------------------------------- kfold


def test_kfold_single_candidate_and_partition():
    ds = SyntheticDataset(n=140)
    base = small_config(max_epochs=6, min_epochs=2, patience=2)
    best, report = kfold_tune([[4]], ds, "y", k=5, base_config=base)
    assert best == [4]
    assert report[(4,)]["n_parameters"] > 0
    assert len(report[(4,)]["fold_losses"]) == 5


def test_kfold_picks_lower_loss(monkeypatch):
    ds = SyntheticDataset(n=120)
    base = small_config(max_epochs=4, min_epochs=2, patience=2)
    best, report = kfold_tune([[2], [6]], ds, "y", k=3, base_config=base)
    losses = {k: v["mean_val_loss"] for k, v in report.items()}
    assert tuple(best) == min(
        report, key=lambda k: (report[k]["mean_val_loss"], report[k]["n_parameters"])
    )
    assert set(losses) == {(2,), (6,)}
    with pytest.raises(ValueError):
        kfold_tune([[4]], ds, "y", k=1, base_config=base)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path):
    ds = SyntheticDataset()
    model = train(small_config(max_epochs=8), ds, "y")
    path = tmp_path / "model.npz"
    save_model(model, path)
    loaded = load_model(path)
    X = ds.X[:5]
    assert np.allclose(loaded.predict_raw(X), model.predict_raw(X), atol=0, rtol=0)
    assert loaded.target == "y"
    assert loaded.history["best_epoch"] == model.history["best_epoch"]


def test_checkpoint_rejects_corruption(tmp_path):
    ds = SyntheticDataset()
    model = train(small_config(max_epochs=6), ds, "y")
    path = tmp_path / "model.npz"
    save_model(model, path)
    import json

    import numpy as np_

    data = dict(np_.load(path))
    meta = json.loads(bytes(data["meta"]).decode())
    meta["checksum"] = "0" * 16
    data["meta"] = np_.frombuffer(json.dumps(meta).encode(), dtype=np_.uint8)
    np_.savez(path, **data)
    with pytest.raises(ValueError):
        load_model(path)
