import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbrtwin.meshpca import (
    PcaModel,
    fit,
    inverse_transform,
    load_model,
    save_model,
    select_components,
    transform,
)


def low_rank_data(n, d, rank, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((d, rank)))[0].T
    scores = rng.standard_normal((n, rank)) * np.array(
        [10.0 / (i + 1) for i in range(rank)]
    )
    X = 5.0 + scores @ basis
    if noise:
        X = X + noise * rng.standard_normal(X.shape)
    return X


def test_exact_plane_two_components():
    X = low_rank_data(40, 160, rank=2, seed=1)
    model = fit(X, n_components=5, tag="power")
    cum = np.cumsum(model.explained_variance_ratio)
    assert cum[1] == pytest.approx(1.0, abs=1e-10)
    assert model.explained_variance_ratio[2:].sum() <= 1e-10


def test_rank3_cumulative_and_roundtrip():
    X = low_rank_data(60, 160, rank=3, seed=2)
    model = fit(X, n_components=5)
    cum = np.cumsum(model.explained_variance_ratio)
    assert cum[2] == pytest.approx(1.0, abs=1e-10)
    recon = inverse_transform(model, transform(model, X))
    assert np.max(np.abs(recon - X)) < 1e-10


def test_fit_is_deterministic():
    X = low_rank_data(50, 80, rank=4, seed=3, noise=0.01)
    a = fit(X, n_components=5)
    b = fit(X, n_components=5)
    assert np.array_equal(a.components, b.components)
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.explained_variance_ratio, b.explained_variance_ratio)


def test_sign_convention():
    X = low_rank_data(50, 80, rank=4, seed=4, noise=0.01)
    model = fit(X, n_components=4)
    for row in model.components:
        assert row[np.argmax(np.abs(row))] > 0.0


def test_orthonormal_and_variance_invariants():
    X = low_rank_data(50, 120, rank=6, seed=5, noise=0.05)
    model = fit(X, n_components=6)
    gram = model.components @ model.components.T
    assert np.max(np.abs(gram - np.eye(6))) < 1e-10
    evr = model.explained_variance_ratio
    assert np.all(np.diff(evr) <= 1e-12)
    assert evr.sum() == pytest.approx(1.0, abs=1e-12)


def test_transform_reference_points():
    X = low_rank_data(30, 60, rank=3, seed=6)
    model = fit(X, n_components=5)
    scores = transform(model, model.mean)
    assert np.max(np.abs(scores)) < 1e-10
    mesh = model.mean + 2.0 * model.components[0]
    scores = transform(model, mesh)
    assert scores[0] == pytest.approx(2.0, abs=1e-10)
    assert np.max(np.abs(scores[1:])) < 1e-10


def test_transform_dimension_mismatch():
    X = low_rank_data(30, 60, rank=3, seed=7)
    model = fit(X, n_components=3)
    with pytest.raises(ValueError):
        transform(model, np.zeros(61))
    with pytest.raises(ValueError):
        inverse_transform(model, np.zeros(4))


def test_mask_zeroes_component():
    X = low_rank_data(30, 60, rank=5, seed=8)
    model = fit(X, n_components=5)
    scores = np.array([1.0, -2.0, 0.5, 3.0, 10.0])
    full = inverse_transform(model, scores)
    masked = inverse_transform(model, scores, mask=[0, 1, 2, 3])
    changed = inverse_transform(model, scores * [1, 1, 1, 1, -7], mask=[0, 1, 2, 3])
    assert np.array_equal(masked, changed)  # score 5 has no influence
    assert not np.array_equal(full, masked)
    assert np.array_equal(inverse_transform(model, np.zeros(5)), model.mean)


def test_reconstruction_error_monotone_in_mask():
    X = low_rank_data(80, 100, rank=8, seed=9, noise=0.1)
    model = fit(X, n_components=8)
    scores = transform(model, X)
    errs = []
    for k in range(1, 9):
        recon = inverse_transform(model, scores, mask=range(k))
        errs.append(np.mean((recon - X) ** 2))
    assert all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))


def test_select_components():
    model = fit(low_rank_data(30, 40, rank=5, seed=10), n_components=5)
    model.explained_variance_ratio = np.array([0.9, 0.08, 0.02] + [0.0] * 24)
    assert select_components(model, 0.95) == 2
    assert select_components(model, 1e-9) == 1
    model.explained_variance_ratio = np.array([0.5, 0.3] + [0.0] * 25)
    with pytest.warns(UserWarning):
        assert select_components(model, 0.99) == 27
    with pytest.raises(ValueError):
        select_components(model, 1.5)


def test_rank_deficient_padding():
    X = low_rank_data(30, 50, rank=2, seed=11)
    model = fit(X, n_components=5)
    assert model.components.shape == (5, 50)
    gram = model.components @ model.components.T
    assert np.max(np.abs(gram - np.eye(5))) < 1e-10


def test_save_load_roundtrip(tmp_path):
    X = low_rank_data(40, 60, rank=4, seed=12, noise=0.02)
    model = fit(X, n_components=5, tag="flux")
    path = tmp_path / "pca_flux.npz"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.tag == "flux"
    assert np.array_equal(loaded.components, model.components)
    assert np.array_equal(loaded.mean, model.mean)


@given(
    rank=st.integers(1, 5),
    n=st.integers(12, 40),
    seed=st.integers(0, 1000),
)
@settings(max_examples=25, deadline=None)
def test_roundtrip_property(rank, n, seed):
    X = low_rank_data(n, 30, rank=rank, seed=seed)
    model = fit(X, n_components=min(rank + 2, n - 1))
    recon = inverse_transform(model, transform(model, X))
    assert np.max(np.abs(recon - X)) < 1e-8
