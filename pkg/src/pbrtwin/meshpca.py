"""PCA compression of the flattened power (160) and flux (480) meshes.

Plain mean-centered PCA via SVD with a deterministic sign convention so
fitted models are reproducible and serializable. Reconstruction accepts a
component mask: masked-out scores are zeroed before the inverse transform.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class PcaModel:
    mean: np.ndarray                      # (d,)
    components: np.ndarray                # (k, d), orthonormal rows
    explained_variance_ratio: np.ndarray  # full spectrum, sums to 1
    n_components: int
    tag: str = ""

    def __post_init__(self):
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(len(self.components)), atol=1e-10):
            raise ValueError("component rows must be orthonormal")
        evr = self.explained_variance_ratio
        if np.any(np.diff(evr) > 1e-12) or np.any(evr < -1e-15):
            raise ValueError("explained variance ratios must be non-increasing")

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.mean, self.components, self.explained_variance_ratio):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def fit(samples, n_components: int, tag: str = "") -> PcaModel:
    """Mean-centered SVD fit; surplus components carry ~zero variance."""
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise ValueError("samples must be a 2-D array (n_samples, n_cells)")
    n, d = X.shape
    if n < n_components + 1:
        raise ValueError("need at least n_components + 1 samples")
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s ** 2
    total = var.sum()
    evr = var / total if total > 0.0 else np.zeros_like(var)

    k = min(n_components, vt.shape[0])
    comps = vt[:k].copy()
    # sign convention: the largest-magnitude entry of each component positive
    for row in comps:
        j = np.argmax(np.abs(row))
        if row[j] < 0.0:
            row *= -1.0
    if k < n_components:
        # rank-deficient data: pad with arbitrary orthonormal directions of
        # zero variance so the requested component count is still emitted
        comps = _pad_orthonormal(comps, n_components, d)
        evr = np.concatenate([evr, np.zeros(n_components - len(evr))])
        k = n_components
    return PcaModel(
        mean=mean,
        components=comps,
        explained_variance_ratio=evr,
        n_components=k,
        tag=tag,
    )


def _pad_orthonormal(comps: np.ndarray, k: int, d: int) -> np.ndarray:
    rng = np.random.default_rng(0)
    rows = list(comps)
    while len(rows) < k:
        v = rng.standard_normal(d)
        for r in rows:
            v -= (v @ r) * r
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            rows.append(v / norm)
    return np.array(rows)


def transform(model: PcaModel, mesh) -> np.ndarray:
    """Project one flattened mesh (or a batch) onto the components."""
    arr = np.asarray(mesh, dtype=float)
    if arr.shape[-1] != model.mean.shape[0]:
        raise ValueError(
            f"mesh has {arr.shape[-1]} cells, model expects {model.mean.shape[0]}"
        )
    return (arr - model.mean) @ model.components.T


def inverse_transform(model: PcaModel, scores, mask=None) -> np.ndarray:
    """Reconstruct a mesh; components outside `mask` have their scores zeroed."""
    arr = np.asarray(scores, dtype=float)
    if arr.shape[-1] != model.n_components:
        raise ValueError(
            f"got {arr.shape[-1]} scores, model has {model.n_components} components"
        )
    if mask is not None:
        keep = np.zeros(model.n_components)
        keep[list(mask)] = 1.0
        arr = arr * keep
    return model.mean + arr @ model.components


def select_components(model: PcaModel, variance_floor: float) -> int:
    """Smallest count whose cumulative explained variance reaches the floor."""
    if not 0.0 < variance_floor < 1.0:
        raise ValueError("variance floor must lie in (0, 1)")
    cum = np.cumsum(model.explained_variance_ratio)
    hit = np.nonzero(cum >= variance_floor - 1e-12)[0]
    if hit.size == 0:
        warnings.warn(
            f"variance floor {variance_floor} unreachable; returning all "
            f"{len(cum)} components",
            stacklevel=2,
        )
        return len(cum)
    return int(hit[0]) + 1


def save_model(model: PcaModel, path) -> None:
    header = {
        "schema_version": 1,
        "tag": model.tag,
        "dims": int(model.mean.shape[0]),
        "n_components": int(model.n_components),
        "checksum": model.checksum(),
    }
    np.savez(
        path,
        header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
        mean=model.mean,
        components=model.components,
        explained_variance_ratio=model.explained_variance_ratio,
    )


def load_model(path) -> PcaModel:
    data = np.load(path)
    header = json.loads(bytes(data["header"]).decode())
    if header.get("schema_version") != 1:
        raise ValueError("unsupported PCA model schema")
    model = PcaModel(
        mean=data["mean"],
        components=data["components"],
        explained_variance_ratio=data["explained_variance_ratio"],
        n_components=header["n_components"],
        tag=header["tag"],
    )
    if model.checksum() != header["checksum"]:
        raise ValueError("PCA model checksum mismatch")
    return model
