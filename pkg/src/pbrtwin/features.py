"""Model input features computed from each step's discharge batch.

The 21 features are the five controls, the average power per fuel pebble,
and 15 observables emulating batch measurements of discharged pebbles:
per-radial-zone average last-pass burnup (4), counts in nine total-burnup
bins, the average discharge burnup, and the number of discarded pebbles.
Measurement noise follows a per-family mean-absolute-percent-error model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .coresim.stepper import DischargeBatch

N_RADIAL_FEATURES = 4
N_BURNUP_BINS = 9
BURNUP_BIN_TOP = 22.5  # %FIMA; overflow lands in the last bin

CONTROL_NAMES = [
    "graphite_fraction",
    "power",
    "rod_depth",
    "timestep",
    "discard_threshold",
]

FEATURE_NAMES = (
    CONTROL_NAMES
    + ["power_per_pebble"]
    + [f"lastpass_r{i + 1}" for i in range(N_RADIAL_FEATURES)]
    + [f"bu_bin_{i + 1}" for i in range(N_BURNUP_BINS)]
    + ["avg_discharge_burnup", "discarded_count"]
)

# features receiving measurement noise (controls and power/pebble are known)
DEPENDENT_FEATURE_NAMES = FEATURE_NAMES[6:]


@dataclass
class FeatureVector:
    graphite_fraction: float
    power: float
    rod_depth: float
    timestep: float
    discard_threshold: float
    power_per_pebble: float
    lastpass: np.ndarray          # shape (4,), %FIMA
    burnup_bins: np.ndarray       # shape (9,), pebble counts
    avg_discharge_burnup: float
    discarded_count: float

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [
                [
                    self.graphite_fraction,
                    self.power,
                    self.rod_depth,
                    self.timestep,
                    self.discard_threshold,
                    self.power_per_pebble,
                ],
                self.lastpass,
                self.burnup_bins,
                [self.avg_discharge_burnup, self.discarded_count],
            ]
        ).astype(float)

    @classmethod
    def from_array(cls, arr) -> "FeatureVector":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features, got {arr.shape}")
        return cls(
            graphite_fraction=float(arr[0]),
            power=float(arr[1]),
            rod_depth=float(arr[2]),
            timestep=float(arr[3]),
            discard_threshold=float(arr[4]),
            power_per_pebble=float(arr[5]),
            lastpass=arr[6:10].copy(),
            burnup_bins=arr[10:19].copy(),
            avg_discharge_burnup=float(arr[19]),
            discarded_count=float(arr[20]),
        )


def radial_lastpass_burnup(
    batch: DischargeBatch, previous: np.ndarray | None = None
) -> np.ndarray:
    """Count-weighted average last-pass burnup per discharge radial zone.

    Zones that discharged nothing this step carry the previous value
    forward (a real measurement window with no pebbles yields no datum).
    """
    prev = (
        np.zeros(len(batch.fuel_by_radial))
        if previous is None
        else np.asarray(previous, dtype=float)
    )
    out = prev.copy()
    for r, zone in enumerate(batch.fuel_by_radial):
        total = sum(c for c, _, _ in zone)
        if total > 0.0:
            out[r] = sum(c * lp for c, lp, _ in zone) / total
    return out


def bin_burnups(batch: DischargeBatch) -> np.ndarray:
    """Counts of discharged pebbles in nine equal burnup bins on [0, 22.5)."""
    width = BURNUP_BIN_TOP / N_BURNUP_BINS
    counts = np.zeros(N_BURNUP_BINS)
    for zone in batch.fuel_by_radial:
        for c, _, b in zone:
            idx = min(int(b / width), N_BURNUP_BINS - 1)
            counts[idx] += c
    return counts


def summary_features(
    batch: DischargeBatch, previous_avg: float = 0.0
) -> tuple[float, float]:
    """(average total burnup of the discharge, discarded pebble count)."""
    total = batch.fuel_count()
    if total <= 0.0:
        return previous_avg, batch.discarded_count
    avg = (
        sum(c * b for zone in batch.fuel_by_radial for c, _, b in zone) / total
    )
    return avg, batch.discarded_count


@dataclass
class NoisePolicy:
    """MAPE applied per dependent feature family (per-cent units)."""

    mape_burnup_bins: float = 5.0
    mape_avg_discharge: float = 2.5
    mape_discarded: float = 5.0
    mape_lastpass: float = 10.0
    seed: int = 0

    def __post_init__(self):
        for v in (
            self.mape_burnup_bins,
            self.mape_avg_discharge,
            self.mape_discarded,
            self.mape_lastpass,
        ):
            if v < 0.0:
                raise ValueError("MAPE values must be non-negative")


def sigma_from_mape(mape: float) -> float:
    """Gaussian sigma giving a mean absolute relative error of MAPE percent."""
    return mape / (100.0 * math.sqrt(2.0 / math.pi))


def apply_noise(
    features: FeatureVector,
    policy: NoisePolicy,
    step_index: int = 0,
    rng: np.random.Generator | None = None,
) -> FeatureVector:
    """Multiply each dependent feature by (1 + eps), eps ~ N(0, sigma^2).

    Controls and power-per-pebble are operator-known and stay untouched;
    negative results are clamped to zero. Deterministic for a fixed
    (policy.seed, step_index).
    """
    if rng is None:
        rng = np.random.default_rng([policy.seed & 0x7FFFFFFF, step_index, 0xFEA7])

    def jitter(x, mape, n=None):
        sigma = sigma_from_mape(mape)
        if n is None:
            return float(max(0.0, x * (1.0 + sigma * rng.standard_normal())))
        return np.maximum(0.0, x * (1.0 + sigma * rng.standard_normal(n)))

    return replace(
        features,
        lastpass=jitter(features.lastpass, policy.mape_lastpass, len(features.lastpass)),
        burnup_bins=jitter(
            features.burnup_bins, policy.mape_burnup_bins, len(features.burnup_bins)
        ),
        avg_discharge_burnup=jitter(
            features.avg_discharge_burnup, policy.mape_avg_discharge
        ),
        discarded_count=jitter(features.discarded_count, policy.mape_discarded),
    )


class FeatureExtractor:
    """Stateful extractor carrying forward empty-window values."""

    def __init__(self, n_radial: int = N_RADIAL_FEATURES):
        self._lastpass = np.zeros(n_radial)
        self._avg_discharge = 0.0

    def extract(self, controls, batch: DischargeBatch, fuel_count: float) -> FeatureVector:
        lastpass = radial_lastpass_burnup(batch, self._lastpass)
        avg, discarded = summary_features(batch, self._avg_discharge)
        self._lastpass = lastpass
        self._avg_discharge = avg
        return FeatureVector(
            graphite_fraction=controls.graphite_fraction,
            power=controls.power,
            rod_depth=controls.rod_depth,
            timestep=controls.timestep,
            discard_threshold=controls.discard_threshold,
            power_per_pebble=controls.power / fuel_count if fuel_count > 0.0 else 0.0,
            lastpass=lastpass,
            burnup_bins=bin_burnups(batch),
            avg_discharge_burnup=avg,
            discarded_count=discarded,
        )
