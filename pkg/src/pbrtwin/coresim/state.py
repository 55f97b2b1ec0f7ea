"""Core simulator state: zone grid, burnup groups, controls.

Pebble counts are kept on an exact 2^-20 grid. Every count in the system
is an integer multiple of that quantum and magnitudes stay far below 2^53,
so all count additions and subtractions are exact in float64 and total
pebble conservation can be asserted with `==` rather than a tolerance.
"""

from __future__ import annotations

import json
import importlib.resources
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from ..config import CoreConfig

COUNT_QUANTUM = 2.0 ** -20


def quantize_count(x: float) -> float:
    """Snap a pebble count to the exact 2^-20 grid."""
    if x <= 0.0:
        return 0.0
    return round(x / COUNT_QUANTUM) * COUNT_QUANTUM


@dataclass
class ZoneGrid:
    """Equal-volume radial rings crossed with uniform axial layers."""

    n_radial: int
    n_axial: int
    core_radius: float  # cm
    core_height: float  # cm
    radial_boundaries: list[float] = field(default_factory=list)  # cm, len n_radial+1
    axial_boundaries: list[float] = field(default_factory=list)   # cm, len n_axial+1

    def __post_init__(self):
        if self.n_radial < 1 or self.n_axial < 2:
            raise ValueError("grid needs n_radial >= 1 and n_axial >= 2")
        if not self.radial_boundaries:
            # r_i = R * sqrt(i/n) imposes equal ring areas, hence equal volumes
            self.radial_boundaries = [
                self.core_radius * math.sqrt(i / self.n_radial)
                for i in range(self.n_radial + 1)
            ]
        if not self.axial_boundaries:
            self.axial_boundaries = list(
                np.linspace(0.0, self.core_height, self.n_axial + 1)
            )
        areas = [
            self.radial_boundaries[i + 1] ** 2 - self.radial_boundaries[i] ** 2
            for i in range(self.n_radial)
        ]
        ref = areas[0]
        for a in areas:
            if abs(a - ref) > 1e-9 * ref:
                raise ValueError("radial boundaries do not give equal zone volumes")

    @classmethod
    def from_config(cls, cfg: CoreConfig) -> "ZoneGrid":
        return cls(
            n_radial=cfg.n_radial,
            n_axial=cfg.n_axial,
            core_radius=cfg.core_radius_cm,
            core_height=cfg.core_height_cm,
        )

    def ring_centroid_radius(self, r: int) -> float:
        """Equal-area centroid radius of ring r."""
        r0, r1 = self.radial_boundaries[r], self.radial_boundaries[r + 1]
        return math.sqrt(0.5 * (r0 * r0 + r1 * r1))

    def ring_of_radius(self, radius: float) -> int:
        for r in range(self.n_radial):
            if radius <= self.radial_boundaries[r + 1]:
                return r
        return self.n_radial - 1


@dataclass
class BurnupGroup:
    """A volume-averaged cohort of pebbles sharing one composition."""

    group_id: int
    pebble_count: float          # quantized, fractional pebbles allowed
    mean_burnup: float           # %FIMA
    last_pass_burnup: float      # %FIMA accrued since last insertion
    nuclide_summary: float       # fissile worth scalar in [0, 1]
    is_graphite: bool = False

    def clone(self) -> "BurnupGroup":
        return BurnupGroup(
            self.group_id,
            self.pebble_count,
            self.mean_burnup,
            self.last_pass_burnup,
            self.nuclide_summary,
            self.is_graphite,
        )


@dataclass
class ControlVector:
    """The five operator-set inputs for one depletion step."""

    graphite_fraction: float   # of inserted pebbles
    power: float               # kW
    rod_depth: float           # cm from top; 60.25 = parked
    timestep: float            # days (sets circulation rate)
    discard_threshold: float   # %FIMA

    def as_dict(self) -> dict:
        return asdict(self)

    def clone(self) -> "ControlVector":
        return ControlVector(**asdict(self))


_RANGES_CACHE: dict | None = None


def control_ranges() -> dict:
    """Legal control ranges (single source shared with the console)."""
    global _RANGES_CACHE
    if _RANGES_CACHE is None:
        ref = importlib.resources.files("pbrtwin.data") / "control_ranges.json"
        with importlib.resources.as_file(ref) as path:
            with open(path) as fh:
                _RANGES_CACHE = json.load(fh)
    return _RANGES_CACHE


def validate_controls(controls: ControlVector) -> dict[str, str]:
    """Field-level validation errors; empty dict means the vector is legal."""
    errors: dict[str, str] = {}
    rules = control_ranges()["controls"]
    for name, rule in rules.items():
        value = getattr(controls, name)
        if value is None or not math.isfinite(value):
            errors[name] = "must be a finite number"
            continue
        lo, hi = rule["min"], rule["max"]
        if rule["min_exclusive"]:
            if value <= lo:
                errors[name] = f"must be > {lo} {rule['unit']}"
        elif value < lo:
            errors[name] = f"must be >= {lo} {rule['unit']}"
        if name in errors:
            continue
        if rule["max_exclusive"]:
            if value >= hi:
                errors[name] = f"must be < {hi} {rule['unit']}"
        elif value > hi:
            errors[name] = f"must be <= {hi} {rule['unit']}"
    return errors


@dataclass
class CoreState:
    """Full simulator state; a value object that can be cloned freely."""

    grid: ZoneGrid
    # inventory[r][a] is the group list of radial ring r, axial layer a (0 = bottom)
    inventory: list[list[list[BurnupGroup]]]
    step_index: int
    total_pebbles: int
    elapsed_days: float
    rng_seed: int
    # power split from the most recent kernel evaluation, feeds the next depletion
    power_fractions: np.ndarray | None = None
    next_group_id: int = 0

    def clone(self) -> "CoreState":
        return CoreState(
            grid=self.grid,
            inventory=[
                [[g.clone() for g in zone] for zone in channel]
                for channel in self.inventory
            ],
            step_index=self.step_index,
            total_pebbles=self.total_pebbles,
            elapsed_days=self.elapsed_days,
            rng_seed=self.rng_seed,
            power_fractions=None
            if self.power_fractions is None
            else self.power_fractions.copy(),
            next_group_id=self.next_group_id,
        )

    def zone_groups(self, r: int, a: int) -> list[BurnupGroup]:
        return self.inventory[r][a]

    def zone_count(self, r: int, a: int) -> float:
        return sum(g.pebble_count for g in self.inventory[r][a])

    def total_count(self) -> float:
        total = 0.0
        for channel in self.inventory:
            for zone in channel:
                for g in zone:
                    total += g.pebble_count
        return total

    def fuel_count(self) -> float:
        total = 0.0
        for channel in self.inventory:
            for zone in channel:
                for g in zone:
                    if not g.is_graphite:
                        total += g.pebble_count
        return total

    def graphite_count(self) -> float:
        return self.total_count() - self.fuel_count()

    def take_group_id(self) -> int:
        gid = self.next_group_id
        self.next_group_id += 1
        return gid

    def fingerprint(self) -> str:
        """Canonical digest of the state, for replay checks."""
        import hashlib

        h = hashlib.sha256()
        h.update(f"{self.step_index}|{self.elapsed_days!r}|{self.rng_seed}".encode())
        for channel in self.inventory:
            for zone in channel:
                for g in zone:
                    h.update(
                        f"{g.pebble_count!r}|{g.mean_burnup!r}|{g.last_pass_burnup!r}"
                        f"|{g.nuclide_summary!r}|{g.is_graphite}".encode()
                    )
        if self.power_fractions is not None:
            h.update(self.power_fractions.tobytes())
        return h.hexdigest()


def _filled_zone(
    cfg: CoreConfig, gid_counter: list[int], fuel_fraction: float, burnups=None
) -> list[BurnupGroup]:
    capacity = quantize_count(cfg.zone_capacity)
    groups: list[BurnupGroup] = []
    fuel_total = quantize_count(capacity * fuel_fraction)
    if burnups is None:
        burnups = [(0.0, 0.0)]
    n = len(burnups)
    allocated = 0.0
    for j, (b, lp) in enumerate(burnups):
        count = (
            quantize_count(fuel_total / n) if j < n - 1 else fuel_total - allocated
        )
        allocated += count
        if count <= 0.0:
            continue
        from .kernel import worth_curve  # local import to avoid a cycle

        groups.append(
            BurnupGroup(
                group_id=gid_counter[0],
                pebble_count=count,
                mean_burnup=b,
                last_pass_burnup=lp,
                nuclide_summary=worth_curve(b, cfg),
            )
        )
        gid_counter[0] += 1
    graphite = capacity - fuel_total
    if graphite > 0.0:
        groups.append(
            BurnupGroup(
                group_id=gid_counter[0],
                pebble_count=graphite,
                mean_burnup=0.0,
                last_pass_burnup=0.0,
                nuclide_summary=0.0,
                is_graphite=True,
            )
        )
        gid_counter[0] += 1
    return groups


def build_fresh_state(
    cfg: CoreConfig, fuel_fraction: float = 1.0, seed: int = 0
) -> CoreState:
    """Uniform core of fresh fuel diluted with graphite pebbles."""
    grid = ZoneGrid.from_config(cfg)
    gid = [0]
    inventory = [
        [_filled_zone(cfg, gid, fuel_fraction) for _ in range(cfg.n_axial)]
        for _ in range(cfg.n_radial)
    ]
    return CoreState(
        grid=grid,
        inventory=inventory,
        step_index=0,
        total_pebbles=cfg.total_pebbles,
        elapsed_days=0.0,
        rng_seed=seed,
        next_group_id=gid[0],
    )


def build_runin_state(cfg: CoreConfig, seed: int = 0) -> CoreState:
    """Initial running-in loading: fresh fuel diluted to criticality."""
    return build_fresh_state(cfg, fuel_fraction=cfg.runin_fuel_fraction, seed=seed)


def build_equilibrium_ladder_state(cfg: CoreConfig, seed: int = 0) -> CoreState:
    """Near-equilibrium start: eight pass cohorts laddered by axial position."""
    grid = ZoneGrid.from_config(cfg)
    db = (
        cfg.kappa_fima_per_kwd
        * cfg.benchmark_power_kw
        * cfg.benchmark_timestep_days
        / cfg.total_pebbles
    )
    gid = [0]
    inventory = []
    for _ in range(cfg.n_radial):
        channel = []
        for a in range(cfg.n_axial):
            ladders = [((j * cfg.n_axial + a) * db, a * db) for j in range(8)]
            channel.append(_filled_zone(cfg, gid, 1.0, burnups=ladders))
        inventory.append(channel)
    return CoreState(
        grid=grid,
        inventory=inventory,
        step_index=0,
        total_pebbles=cfg.total_pebbles,
        elapsed_days=0.0,
        rng_seed=seed,
        next_group_id=gid[0],
    )
