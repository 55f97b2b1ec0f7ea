"""Reduced-order neutronics kernel.

Deterministic shape-function evaluation of k_eff and the 20x8 power /
20x8x3 flux tally meshes, plus the per-zone power split used for
depletion. Multiplicative Gaussian noise emulates Monte Carlo tally
scatter and pebble-shuffling variance; it can be disabled for exact
replay tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import j0

from ..config import CoreConfig
from .state import ControlVector, CoreState

PCM = 1.0e-5


def worth_curve(burnup: float, cfg: CoreConfig) -> float:
    """Relative fissile worth of fuel at a given burnup (1 when fresh)."""
    x = burnup / cfg.burnup_scale_fima
    return max(0.0, 1.0 - cfg.worth_lin * x + cfg.worth_quad * x * x)


def rod_factor(rod_depth: float, cfg: CoreConfig) -> float:
    """k multiplier of the rod bank; 1 at the parked depth, monotone down."""
    y = (rod_depth - cfg.rod_parked_cm) / (cfg.rod_max_cm - cfg.rod_parked_cm)
    y = min(1.0, max(0.0, y))
    return 1.0 - cfg.rod_worth * (3.0 * y * y - 2.0 * y ** 3)


def graphite_dilution(fuel_fraction: float, cfg: CoreConfig) -> float:
    """Zone multiplication retained at a given fuel pebble fraction.

    Saturating form: moderation from dummy graphite keeps the core
    surprisingly reactive at low fuel loadings, then multiplication
    collapses linearly as fuel vanishes.
    """
    ff = min(1.0, max(0.0, fuel_fraction))
    mu = cfg.dilution_mu
    return ff * (1.0 + mu) / (1.0 + mu * ff)


def critical_fresh_fuel_fraction(cfg: CoreConfig) -> float:
    """Fuel fraction at which a fresh rods-parked core is exactly critical."""
    d = 1.0 / (cfg.non_leakage * cfg.k_fresh)
    return d / (1.0 + cfg.dilution_mu * (1.0 - d))


def discard_fraction(mean_burnup: float, threshold: float, c: float = 0.02288) -> float:
    """Fraction of a group removed: P(B >= threshold), B ~ N(mu, (c*mu)^2)."""
    if c <= 0.0:
        raise ValueError("spread coefficient c must be positive")
    if mean_burnup <= 0.0 or threshold <= 0.0:
        raise ValueError("mean_burnup and threshold must be positive")
    z = (mean_burnup - threshold) / (c * mean_burnup)
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def compute_reactivity(k_eff: float) -> float:
    if k_eff <= 0.0:
        raise ValueError("k_eff must be positive")
    return (k_eff - 1.0) / k_eff


@dataclass
class MeshTally:
    """Power and 3-group flux tallies on the 20x8 mesh (axial, radial)."""

    power: np.ndarray            # kW per cell, shape (20, 8)
    flux: np.ndarray             # n/cm²·s, shape (20, 8, 3): thermal, epi, fast
    group_bounds_ev: tuple = (0.625, 1000.0)
    rel_noise_power: float = 0.018
    rel_noise_flux: float = 0.013


@dataclass
class KernelResult:
    k_eff: float
    mesh: MeshTally
    power_fractions: np.ndarray  # shape (n_radial, n_axial), sums to 1
    dead_core: bool = False
    k_eff_clean: float = 0.0     # before shuffling jitter


class _MeshGeometry:
    """Cached shape factors and cell->zone maps for one configuration."""

    def __init__(self, cfg: CoreConfig):
        from .state import ZoneGrid

        grid = ZoneGrid.from_config(cfg)
        H, R = cfg.core_height_cm, cfg.core_radius_cm
        za = (np.arange(cfg.mesh_axial) + 0.5) / cfg.mesh_axial * H
        rr = (np.arange(cfg.mesh_radial) + 0.5) / cfg.mesh_radial * R
        self.cell_z = za
        self.cell_r = rr
        ax = np.cos(math.pi * (za - H / 2.0) / (H * cfg.axial_extrap))
        rad = j0(2.405 * rr / (R * cfg.radial_extrap))
        self.shape = np.outer(ax, rad)  # flux density shape, (20, 8)
        # cell volumes: equal axial slabs x annular rings of equal radial width
        edges = np.arange(cfg.mesh_radial + 1) / cfg.mesh_radial * R
        ring_area = edges[1:] ** 2 - edges[:-1] ** 2
        self.cell_volume = np.tile(ring_area / ring_area.sum(), (cfg.mesh_axial, 1))
        self.cell_volume /= self.cell_volume.sum()
        self.axial_zone = np.minimum(
            (za / H * cfg.n_axial).astype(int), cfg.n_axial - 1
        )
        self.radial_zone = np.array([grid.ring_of_radius(r) for r in rr])
        # zone-level importance weights for the k_eff average
        zc = (np.arange(cfg.n_axial) + 0.5) / cfg.n_axial * H
        axw = np.cos(math.pi * (zc - H / 2.0) / (H * cfg.axial_extrap))
        rcw = np.array(
            [grid.ring_centroid_radius(r) for r in range(cfg.n_radial)]
        )
        radw = j0(2.405 * rcw / (R * cfg.radial_extrap))
        self.zone_weight = np.outer(radw, axw) ** 2  # (n_radial, n_axial)


_GEOMETRY_CACHE: dict[tuple, _MeshGeometry] = {}


def _geometry(cfg: CoreConfig) -> _MeshGeometry:
    key = (
        cfg.core_height_cm,
        cfg.core_radius_cm,
        cfg.n_radial,
        cfg.n_axial,
        cfg.mesh_axial,
        cfg.mesh_radial,
        cfg.axial_extrap,
        cfg.radial_extrap,
    )
    if key not in _GEOMETRY_CACHE:
        _GEOMETRY_CACHE[key] = _MeshGeometry(cfg)
    return _GEOMETRY_CACHE[key]


def _smooth_zone_field(field: np.ndarray) -> np.ndarray:
    """[1,2,1]/4 smoothing along both zone axes with edge clamping.

    Stands in for neutron migration: the power shape responds to the
    neighborhood fissile loading, not to single-zone composition jumps.
    """
    out = field.copy()
    for axis in (0, 1):
        padded = np.concatenate(
            [out.take([0], axis=axis), out, out.take([-1], axis=axis)], axis=axis
        )
        lo = padded.take(range(0, out.shape[axis]), axis=axis)
        hi = padded.take(range(2, out.shape[axis] + 2), axis=axis)
        out = 0.25 * lo + 0.5 * out + 0.25 * hi
    return out


def _zone_stats(state: CoreState, cfg: CoreConfig):
    """Per-zone fuel fraction, mean worth, fissile density, graphite fraction."""
    nr, na = cfg.n_radial, cfg.n_axial
    fuel = np.zeros((nr, na))
    worth = np.zeros((nr, na))
    total = np.zeros((nr, na))
    for r in range(nr):
        for a in range(na):
            for g in state.inventory[r][a]:
                total[r, a] += g.pebble_count
                if not g.is_graphite:
                    fuel[r, a] += g.pebble_count
                    worth[r, a] += g.pebble_count * g.nuclide_summary
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_worth = np.where(fuel > 0.0, worth / np.maximum(fuel, 1e-300), 0.0)
        fuel_frac = np.where(total > 0.0, fuel / np.maximum(total, 1e-300), 0.0)
    fissile_density = worth / max(cfg.zone_capacity, 1e-300)
    graphite_frac = 1.0 - fuel_frac
    return fuel_frac, mean_worth, fissile_density, graphite_frac


def solve_neutronics(
    state: CoreState,
    controls: ControlVector,
    cfg: CoreConfig,
    rng: np.random.Generator | None = None,
    noise: bool = True,
    jitter: bool = True,
) -> KernelResult:
    """Evaluate k_eff, tally meshes, and the zone power split."""
    geo = _geometry(cfg)
    fuel_frac, mean_worth, fissile_density, graphite_frac = _zone_stats(state, cfg)

    m_zone = cfg.k_fresh * mean_worth * graphite_dilution_arr(fuel_frac, cfg)
    wsum = geo.zone_weight.sum()
    k_core = float((geo.zone_weight * m_zone).sum() / wsum)

    dead = bool(fissile_density.sum() <= 1e-12)
    k_clean = max(1e-6, cfg.non_leakage * k_core * rod_factor(controls.rod_depth, cfg))

    # flux mesh: fundamental-mode shape modulated by local multiplication,
    # suppressed along the inserted rod span
    m_cell = m_zone[geo.radial_zone[None, :], geo.axial_zone[:, None]]
    m_ref = max(k_core, 1e-9)
    mod = np.clip(1.0 + cfg.mod_gain * (m_cell / m_ref - 1.0), 0.05, None)
    phi = geo.shape * mod

    # reflector rods tilt the flux away from the top-outer region in
    # proportion to their insertion: one fixed shape, insertion-scaled
    insertion = max(0.0, controls.rod_depth - cfg.rod_parked_cm)
    if insertion > 0.0:
        y = insertion / (cfg.rod_max_cm - cfg.rod_parked_cm)
        axial_w = (geo.cell_z / cfg.core_height_cm) ** 2
        radial_w = (geo.cell_r / cfg.core_radius_cm) ** 2
        phi = phi * (1.0 - cfg.rod_dip * y * np.outer(axial_w, radial_w))

    phi = np.maximum(phi, 0.0)
    total_shape = phi.sum()
    if dead or total_shape <= 0.0:
        power_mesh = np.zeros((cfg.mesh_axial, cfg.mesh_radial))
        flux_mesh = np.zeros((cfg.mesh_axial, cfg.mesh_radial, 3))
        fractions = np.full((cfg.n_radial, cfg.n_axial), 1.0 / cfg.n_zones)
        mesh = MeshTally(
            power_mesh,
            flux_mesh,
            (cfg.energy_bound_thermal_ev, cfg.energy_bound_fast_ev),
            cfg.rel_noise_power,
            cfg.rel_noise_flux,
        )
        return KernelResult(1e-6, mesh, fractions, dead_core=True, k_eff_clean=1e-6)

    flux_cell = cfg.flux_per_kw * controls.power * phi / total_shape

    # three-group split shifts thermal-ward with local graphite content
    g_cell = graphite_frac[geo.radial_zone[None, :], geo.axial_zone[:, None]]
    f_th = cfg.thermal_base + cfg.thermal_graphite_shift * g_cell
    f_fast = cfg.fast_base + cfg.fast_graphite_shift * g_cell
    f_epi = 1.0 - f_th - f_fast
    flux_mesh = np.stack(
        [flux_cell * f_th, flux_cell * f_epi, flux_cell * f_fast], axis=-1
    )

    # power tally integrates flux x local fissile worth over cell volume;
    # the fissile field is migration-smoothed before it shapes the power,
    # and contrast-raised so power peaks decisively toward fresher fuel
    fiss_smooth = _smooth_zone_field(
        _smooth_zone_field(_smooth_zone_field(fissile_density))
    )
    fiss_cell = (
        fiss_smooth[geo.radial_zone[None, :], geo.axial_zone[:, None]]
        ** cfg.fiss_contrast
    )
    power_raw = phi * fiss_cell * geo.cell_volume
    if power_raw.sum() <= 0.0:
        power_raw = phi * geo.cell_volume
    power_mesh = power_raw * (controls.power / power_raw.sum())
    _snap_sum(power_mesh, controls.power)

    # zone power split for depletion, from the noise-free mesh
    fractions = np.zeros((cfg.n_radial, cfg.n_axial))
    np.add.at(
        fractions,
        (
            np.broadcast_to(geo.radial_zone[None, :], power_mesh.shape).ravel(),
            np.broadcast_to(geo.axial_zone[:, None], power_mesh.shape).ravel(),
        ),
        power_mesh.ravel(),
    )
    fractions /= fractions.sum()

    k_eff = k_clean
    if rng is not None:
        if noise:
            power_mesh = power_mesh * (
                1.0
                + _tally_rel_sigma(power_mesh, cfg.rel_noise_power)
                * rng.standard_normal(power_mesh.shape)
            )
            power_mesh = np.maximum(power_mesh, 0.0)
            # Monte Carlo power tallies are normalized to the requested power
            s = power_mesh.sum()
            if s > 0.0:
                power_mesh *= controls.power / s
                _snap_sum(power_mesh, controls.power)
            flux_mesh = flux_mesh * (
                1.0
                + _tally_rel_sigma(flux_mesh, cfg.rel_noise_flux)
                * rng.standard_normal(flux_mesh.shape)
            )
            flux_mesh = np.maximum(flux_mesh, 0.0)
        if jitter:
            k_eff = k_clean * (1.0 + cfg.keff_jitter * rng.standard_normal())

    mesh = MeshTally(
        power_mesh,
        flux_mesh,
        (cfg.energy_bound_thermal_ev, cfg.energy_bound_fast_ev),
        cfg.rel_noise_power,
        cfg.rel_noise_flux,
    )
    return KernelResult(k_eff, mesh, fractions, dead_core=dead, k_eff_clean=k_clean)


def graphite_dilution_arr(fuel_fraction: np.ndarray, cfg: CoreConfig) -> np.ndarray:
    ff = np.clip(fuel_fraction, 0.0, 1.0)
    return ff * (1.0 + cfg.dilution_mu) / (1.0 + cfg.dilution_mu * ff)


def _tally_rel_sigma(mesh: np.ndarray, mean_rel: float) -> np.ndarray:
    """Per-cell relative tally sigma: counting statistics scale it with
    1/sqrt(tally), normalized so the cell-average equals `mean_rel`."""
    m = np.maximum(mesh, 1e-12 * mesh.max() if mesh.max() > 0 else 1.0)
    inv_sqrt = 1.0 / np.sqrt(m)
    # normalize the tally-weighted mean: the quoted uncertainty describes
    # the cells carrying the tally, not the near-empty corners
    weighted = float((m * inv_sqrt).sum() / m.sum())
    sigma = mean_rel * inv_sqrt / weighted
    return np.minimum(sigma, 3.0 * mean_rel)


def _snap_sum(mesh: np.ndarray, target: float, max_iters: int = 4) -> None:
    """Fold float rounding crumbs into the peak cell so mesh.sum() == target."""
    idx = np.unravel_index(np.argmax(mesh), mesh.shape)
    for _ in range(max_iters):
        residual = target - mesh.sum()
        if residual == 0.0:
            return
        mesh[idx] += residual
