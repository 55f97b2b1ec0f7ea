"""Kernel calibration constants and run configuration.

All physics constants of the reduced-order core kernel live in one
versioned, human-readable YAML file so that calibrated values are never
hard-coded. `CoreConfig.default()` loads the calibration shipped with the
package; `pbrtwin calibrate` regenerates it.
"""

from __future__ import annotations

import hashlib
import importlib.resources
from dataclasses import dataclass, asdict, fields, replace

import yaml

CONFIG_SCHEMA_VERSION = 1

# Unit conversion documented here once: the discard threshold is stored in
# %FIMA internally; configuration may give MWd/kgHM instead.
MWD_PER_KG_PER_FIMA = 9.4


@dataclass(frozen=True)
class CoreConfig:
    """Constants of the zone simulator and its neutronics kernel.

    Fields marked (calibrated) are produced by `pbrtwin.coresim.calibrate`
    and should not be edited by hand.
    """

    schema_version: int = CONFIG_SCHEMA_VERSION

    # -- geometry -----------------------------------------------------
    core_height_cm: float = 309.22        # active core height, equals rod travel
    core_radius_cm: float = 120.0         # cm
    n_radial: int = 4                     # equal-volume radial zones
    n_axial: int = 10                     # axial zones, index 0 at the bottom
    total_pebbles: int = 250_190

    # -- tally mesh ---------------------------------------------------
    mesh_axial: int = 20
    mesh_radial: int = 8
    energy_bound_thermal_ev: float = 0.625
    energy_bound_fast_ev: float = 1000.0

    # -- benchmark operating point -------------------------------------
    benchmark_power_kw: float = 280_000.0
    benchmark_timestep_days: float = 6.525
    discard_threshold_fima: float = 19.149   # = 180 MWd/kgHM / 9.4

    # -- fuel worth model (calibrated) ----------------------------------
    k_fresh: float = 1.2000               # (calibrated) multiplication of fresh fuel
    worth_lin: float = 0.30               # linear burnup worth loss coefficient
    worth_quad: float = 0.05              # quadratic worth recovery coefficient
    burnup_scale_fima: float = 19.149     # worth curve burnup normalization
    kappa_fima_per_kwd: float = 0.032778  # (calibrated) %FIMA per kW·d per pebble
    non_leakage: float = 0.97

    # -- graphite dilution / moderation ---------------------------------
    dilution_mu: float = 12.0             # saturation of the moderation benefit
    runin_fuel_fraction: float = 0.3327   # (calibrated) critical fresh loading

    # -- control rods ----------------------------------------------------
    rod_parked_cm: float = 60.25          # fully withdrawn; R = 1
    rod_max_cm: float = 369.47            # full insertion
    rod_worth: float = 0.04               # total k multiplier removed at full depth
    rod_dip: float = 0.30                 # rod flux-tilt amplitude at full insertion

    # -- flux/power mesh shape -------------------------------------------
    axial_extrap: float = 1.10            # extrapolated-height factor for cosine
    radial_extrap: float = 1.60           # extrapolated-radius factor for J0
    mod_gain: float = 0.75                # zone-multiplication shape modulation
    fiss_contrast: float = 6.0            # power-peaking exponent on fissile worth
    thermal_base: float = 0.42
    thermal_graphite_shift: float = 0.22  # thermal share rises with graphite
    fast_base: float = 0.22
    fast_graphite_shift: float = -0.08
    flux_per_kw: float = 3.2e9            # n/cm²·s per kW, sets flux magnitude

    # -- synthetic measurement noise -------------------------------------
    rel_noise_power: float = 0.018        # per power-mesh cell
    rel_noise_flux: float = 0.013         # per flux-mesh cell
    keff_jitter: float = 6.0e-4           # ~60 pcm shuffling scatter on k_eff

    # -- discharge/discard -------------------------------------------------
    discard_spread_c: float = 0.02288     # sigma = c * mean burnup
    max_burnup_groups: int = 12

    @property
    def n_zones(self) -> int:
        return self.n_radial * self.n_axial

    @property
    def zone_capacity(self) -> float:
        return self.total_pebbles / self.n_zones

    def checksum(self) -> str:
        payload = repr(sorted(asdict(self).items())).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    # -- persistence -----------------------------------------------------

    def to_yaml(self, path) -> None:
        raw = {
            k: (float(v) if isinstance(v, float) or hasattr(v, "dtype") else v)
            for k, v in asdict(self).items()
        }
        doc = {"pbrtwin_calibration": raw}
        with open(path, "w") as fh:
            fh.write("# Reduced-order kernel calibration constants.\n")
            fh.write("# Units: cm, kW, days, %FIMA; k values dimensionless.\n")
            fh.write(f"# checksum: {self.checksum()}\n")
            yaml.safe_dump(doc, fh, sort_keys=True)

    @classmethod
    def from_yaml(cls, path) -> "CoreConfig":
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        raw = doc["pbrtwin_calibration"]
        if raw.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise ValueError(
                f"calibration schema {raw.get('schema_version')!r} not supported "
                f"(expected {CONFIG_SCHEMA_VERSION})"
            )
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown calibration keys: {sorted(unknown)}")
        if "discard_threshold_mwd_per_kg" in raw:
            raw["discard_threshold_fima"] = (
                raw.pop("discard_threshold_mwd_per_kg") / MWD_PER_KG_PER_FIMA
            )
        return cls(**raw)

    @classmethod
    def default(cls) -> "CoreConfig":
        ref = importlib.resources.files("pbrtwin.data") / "default_calibration.yaml"
        with importlib.resources.as_file(ref) as path:
            return cls.from_yaml(path)

    def with_(self, **kw) -> "CoreConfig":
        return replace(self, **kw)


def threshold_from_mwd_per_kg(value: float) -> float:
    """Convert a MWd/kgHM discard threshold to %FIMA."""
    return value / MWD_PER_KG_PER_FIMA
