"""One depletion step of the zone simulator.

Step order: deplete under the current flux allocation, advect every axial
layer upward, discharge the top layer, regroup + discard + reinsert +
fresh insertion at the bottom, then evaluate the neutronics kernel.
Pebble counts are quantized (see state.py) so conservation is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..config import CoreConfig
from .kernel import (
    KernelResult,
    MeshTally,
    compute_reactivity,
    discard_fraction,
    solve_neutronics,
    worth_curve,
)
from .state import (
    BurnupGroup,
    ControlVector,
    CoreState,
    quantize_count,
)


@dataclass
class DischargeBatch:
    """Everything that left the core top during one step."""

    step_index: int
    # per radial zone: list of (pebble_count, last_pass_burnup, total_burnup)
    fuel_by_radial: list[list[tuple[float, float, float]]]
    graphite_count: float          # graphite pebbles discharged
    discarded_count: float         # fuel removed for exceeding the threshold
    graphite_removed: float        # graphite not reinserted (composition control)
    discard_mean_burnup: float     # count-weighted burnup of discarded fuel

    def fuel_count(self) -> float:
        return sum(c for zone in self.fuel_by_radial for c, _, _ in zone)


@dataclass
class StepResult:
    k_eff: float
    reactivity: float
    mesh: MeshTally
    discharge: DischargeBatch
    state_after: CoreState
    power_fractions: np.ndarray
    dead_core: bool = False
    k_eff_clean: float = 0.0


def _validate_controls_basic(controls: ControlVector) -> None:
    vals = (
        controls.graphite_fraction,
        controls.power,
        controls.rod_depth,
        controls.timestep,
        controls.discard_threshold,
    )
    if any(v is None or not math.isfinite(v) for v in vals):
        raise ValueError("controls contain a non-finite value")
    if controls.power <= 0.0:
        raise ValueError("power must be positive")
    if controls.timestep <= 0.0:
        raise ValueError("timestep must be positive")
    if controls.discard_threshold <= 0.0:
        raise ValueError("discard threshold must be positive")
    if not 0.0 <= controls.graphite_fraction <= 1.0:
        raise ValueError("graphite fraction must lie in [0, 1]")


def deplete_zones(
    state: CoreState,
    controls: ControlVector,
    power_fractions: np.ndarray,
    cfg: CoreConfig,
) -> CoreState:
    """Accrue burnup in place according to the zone power split."""
    fractions = np.asarray(power_fractions, dtype=float)
    if abs(fractions.sum() - 1.0) > 1e-9 and controls.power > 0.0:
        raise ValueError("power fractions must sum to 1")

    nr, na = cfg.n_radial, cfg.n_axial
    fuel = np.zeros((nr, na))
    for r in range(nr):
        for a in range(na):
            for g in state.inventory[r][a]:
                if not g.is_graphite:
                    fuel[r, a] += g.pebble_count

    # power assigned to fuel-free zones is shared by the fueled ones
    fractions = fractions.copy()
    orphan = fractions[fuel <= 0.0].sum()
    fractions[fuel <= 0.0] = 0.0
    live = fractions.sum()
    if orphan > 0.0 and live > 0.0:
        fractions *= (live + orphan) / live

    for r in range(nr):
        for a in range(na):
            if fuel[r, a] <= 0.0 or fractions[r, a] <= 0.0:
                continue
            db = float(
                cfg.kappa_fima_per_kwd
                * fractions[r, a]
                * controls.power
                * controls.timestep
                / fuel[r, a]
            )
            for g in state.inventory[r][a]:
                if g.is_graphite:
                    continue
                w_old = worth_curve(g.mean_burnup, cfg)
                g.mean_burnup += db
                g.last_pass_burnup += db
                w_new = worth_curve(g.mean_burnup, cfg)
                g.nuclide_summary = (
                    g.nuclide_summary * w_new / w_old if w_old > 0.0 else 0.0
                )
    return state


def regroup_discharge(
    discharged: list[BurnupGroup],
    max_groups: int = 12,
    anchor: float | None = None,
) -> list[BurnupGroup]:
    """Volume-average discharged pebbles into evenly spaced burnup bins.

    Bin count is searched downward from 24 until at most `max_groups`
    bins are non-empty; averages are pebble-count weighted, counts are
    preserved exactly. When `anchor` is given (the discard threshold),
    bin edges are aligned to it so no bin straddles the threshold and
    averaging cannot pull above-threshold pebbles back below it.
    """
    if not discharged:
        raise ValueError("cannot regroup an empty discharge")

    graphite = [g for g in discharged if g.is_graphite]
    fuel = [g for g in discharged if not g.is_graphite]
    out: list[BurnupGroup] = []
    if graphite:
        total = sum(g.pebble_count for g in graphite)
        out.append(
            BurnupGroup(
                group_id=graphite[0].group_id,
                pebble_count=total,
                mean_burnup=0.0,
                last_pass_burnup=0.0,
                nuclide_summary=0.0,
                is_graphite=True,
            )
        )
    if not fuel:
        return out

    if len(fuel) == 1:
        out.append(fuel[0].clone())
        return out

    burnups = [g.mean_burnup for g in fuel]
    lo, hi = min(burnups), max(burnups)
    span = max(hi - lo, 1e-12)
    origin = lo if anchor is None else anchor

    def bin_assignment(n_bins: int) -> list[int]:
        width = span / n_bins
        idx = [math.floor((b - origin) / width) for b in burnups]
        if anchor is None:
            # keep the top edge closed so hi does not open a bin of its own
            idx = [min(i, n_bins - 1) for i in idx]
        return idx

    chosen = None
    for n_bins in range(24, 0, -1):
        assignment = bin_assignment(n_bins)
        if len(set(assignment)) <= max_groups:
            chosen = (n_bins, assignment)
            break
    n_bins, assignment = chosen

    for b_idx in sorted(set(assignment)):
        members = [g for g, a in zip(fuel, assignment) if a == b_idx]
        count = sum(g.pebble_count for g in members)
        if count <= 0.0:
            continue
        out.append(
            BurnupGroup(
                group_id=members[0].group_id,
                pebble_count=count,
                mean_burnup=sum(g.pebble_count * g.mean_burnup for g in members)
                / count,
                last_pass_burnup=sum(
                    g.pebble_count * g.last_pass_burnup for g in members
                )
                / count,
                nuclide_summary=sum(
                    g.pebble_count * g.nuclide_summary for g in members
                )
                / count,
            )
        )
    return out


def split_fresh_insertion(graphite_fraction: float, vacancies: float) -> tuple:
    """Split new pebbles between fresh graphite and fresh fuel."""
    fresh_graphite = quantize_count(graphite_fraction * vacancies)
    fresh_graphite = min(fresh_graphite, vacancies)
    return fresh_graphite, vacancies - fresh_graphite


def insert_fresh(
    state: CoreState,
    controls: ControlVector,
    vacancies: float,
    survivors: list[BurnupGroup] | None = None,
    graphite_kept: float = 0.0,
    cfg: CoreConfig | None = None,
) -> CoreState:
    """Refill the emptied bottom layer to capacity.

    Surviving regrouped pebbles are reinserted (last-pass burnup reset) and
    `vacancies` new pebbles are split graphite_fraction : (1 - graphite_fraction)
    between fresh graphite and fresh fuel, spread evenly over the radial zones.
    """
    survivors = survivors or []
    nr = state.grid.n_radial
    capacity = quantize_count(state.total_pebbles / (nr * state.grid.n_axial))

    reinserted = sum(g.pebble_count for g in survivors) + graphite_kept
    layer_capacity = capacity * nr
    if vacancies > layer_capacity - reinserted + 1e-9:
        raise ValueError("vacancies exceed bottom layer capacity")

    fresh_graphite, fresh_fuel = split_fresh_insertion(
        controls.graphite_fraction, vacancies
    )

    def channel_shares(total: float) -> list[float]:
        share = quantize_count(total / nr)
        parts = [share] * (nr - 1)
        parts.append(total - share * (nr - 1))
        return parts

    survivor_shares = [channel_shares(g.pebble_count) for g in survivors]
    graphite_shares = channel_shares(graphite_kept + fresh_graphite)
    fuel_shares = channel_shares(fresh_fuel)

    for r in range(nr):
        zone: list[BurnupGroup] = []
        for g, shares in zip(survivors, survivor_shares):
            if shares[r] <= 0.0:
                continue
            reins = g.clone()
            reins.group_id = state.take_group_id()
            reins.pebble_count = shares[r]
            reins.last_pass_burnup = 0.0
            zone.append(reins)
        if graphite_shares[r] > 0.0:
            zone.append(
                BurnupGroup(
                    group_id=state.take_group_id(),
                    pebble_count=graphite_shares[r],
                    mean_burnup=0.0,
                    last_pass_burnup=0.0,
                    nuclide_summary=0.0,
                    is_graphite=True,
                )
            )
        if fuel_shares[r] > 0.0:
            zone.append(
                BurnupGroup(
                    group_id=state.take_group_id(),
                    pebble_count=fuel_shares[r],
                    mean_burnup=0.0,
                    last_pass_burnup=0.0,
                    nuclide_summary=1.0,
                )
            )
        # fold the quantization crumb of the 4-way split into the largest
        # group so every zone holds exactly its capacity (crumbs cancel
        # across channels, keeping the global total exact)
        residual = capacity - sum(g.pebble_count for g in zone)
        if residual != 0.0 and zone:
            max(zone, key=lambda g: g.pebble_count).pebble_count += residual
        state.inventory[r][0] = zone
    return state


def _graphite_retention(
    graphite_fraction: float, graphite_discharged: float, surviving_fuel: float
) -> float:
    """Discharged graphite reinserted so the refilled layer tracks the
    insertion fraction with a one-pass lag (composition control)."""
    if graphite_discharged <= 0.0:
        return 0.0
    if graphite_fraction >= 1.0:
        return graphite_discharged
    target = quantize_count(
        graphite_fraction * surviving_fuel / (1.0 - graphite_fraction)
    )
    return min(graphite_discharged, target)


def advance_step(
    state: CoreState,
    controls: ControlVector,
    cfg: CoreConfig,
    noise: bool = True,
    jitter: bool = True,
) -> StepResult:
    """Apply one depletion step and return the new state plus observables."""
    _validate_controls_basic(controls)
    work = state.clone()

    # (1) deplete under the current flux allocation
    if work.power_fractions is None:
        seed_eval = solve_neutronics(work, controls, cfg, rng=None)
        work.power_fractions = seed_eval.power_fractions
    deplete_zones(work, controls, work.power_fractions, cfg)

    # (2) advect upward; (3) discharge the top layer
    nr, na = cfg.n_radial, cfg.n_axial
    discharged_by_radial: list[list[BurnupGroup]] = []
    for r in range(nr):
        channel = work.inventory[r]
        discharged_by_radial.append(channel[na - 1])
        work.inventory[r] = [[]] + channel[: na - 1]

    fuel_by_radial = [
        [
            (g.pebble_count, g.last_pass_burnup, g.mean_burnup)
            for g in groups
            if not g.is_graphite and g.pebble_count > 0.0
        ]
        for groups in discharged_by_radial
    ]
    all_discharged = [g for groups in discharged_by_radial for g in groups]
    graphite_discharged = sum(
        g.pebble_count for g in all_discharged if g.is_graphite
    )

    # (4) regroup, threshold discard, reinsert, fresh insertion
    regrouped = (
        regroup_discharge(
            all_discharged, cfg.max_burnup_groups, anchor=controls.discard_threshold
        )
        if all_discharged
        else []
    )
    survivors: list[BurnupGroup] = []
    discarded = 0.0
    discard_bu_weight = 0.0
    for g in regrouped:
        if g.is_graphite or g.mean_burnup <= 0.0:
            if not g.is_graphite:
                survivors.append(g)
            continue
        frac = discard_fraction(
            g.mean_burnup, controls.discard_threshold, cfg.discard_spread_c
        )
        removed = quantize_count(frac * g.pebble_count)
        removed = min(removed, g.pebble_count)
        if removed > 0.0:
            discarded += removed
            discard_bu_weight += removed * g.mean_burnup
        remaining = g.pebble_count - removed
        if remaining > 0.0:
            kept = g.clone()
            kept.pebble_count = remaining
            survivors.append(kept)

    surviving_fuel = sum(g.pebble_count for g in survivors)
    graphite_kept = _graphite_retention(
        controls.graphite_fraction, graphite_discharged, surviving_fuel
    )
    graphite_removed = graphite_discharged - graphite_kept
    vacancies = discarded + graphite_removed

    insert_fresh(work, controls, vacancies, survivors, graphite_kept, cfg)

    # (5) evaluate the kernel; per-step RNG stream keyed by (seed, step)
    rng = np.random.default_rng([work.rng_seed & 0x7FFFFFFF, work.step_index + 1])
    work.step_index += 1
    work.elapsed_days += controls.timestep
    result = solve_neutronics(work, controls, cfg, rng=rng, noise=noise, jitter=jitter)
    work.power_fractions = result.power_fractions

    batch = DischargeBatch(
        step_index=work.step_index,
        fuel_by_radial=fuel_by_radial,
        graphite_count=graphite_discharged,
        discarded_count=discarded,
        graphite_removed=graphite_removed,
        discard_mean_burnup=discard_bu_weight / discarded if discarded > 0.0 else 0.0,
    )
    return StepResult(
        k_eff=result.k_eff,
        reactivity=compute_reactivity(result.k_eff),
        mesh=result.mesh,
        discharge=batch,
        state_after=work,
        power_fractions=result.power_fractions,
        dead_core=result.dead_core,
        k_eff_clean=result.k_eff_clean,
    )


class CoreSimulator:
    """Convenience wrapper binding a configuration and noise switches."""

    def __init__(self, cfg: CoreConfig, noise: bool = True, jitter: bool = True):
        self.cfg = cfg
        self.noise = noise
        self.jitter = jitter

    def step(self, state: CoreState, controls: ControlVector) -> StepResult:
        return advance_step(
            state, controls, self.cfg, noise=self.noise, jitter=self.jitter
        )

    def run(self, state: CoreState, controls_list) -> list[StepResult]:
        results = []
        for controls in controls_list:
            res = self.step(state, controls)
            results.append(res)
            state = res.state_after
        return results
