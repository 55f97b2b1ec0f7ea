"""Operation sequence generation: handcrafted templates and randomized
policies driving the core simulator, with CSV persistence.

A recorded sequence holds length+1 simulated rows so that every usable
step has next-step dependent features available for target alignment.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import CoreConfig
from .coresim import (
    ControlVector,
    CoreSimulator,
    benchmark_controls,
    build_equilibrium_ladder_state,
    build_runin_state,
    control_ranges,
)
from .features import FEATURE_NAMES, FeatureExtractor, NoisePolicy, apply_noise

MESH_POWER_CELLS = 20 * 8
MESH_FLUX_CELLS = 20 * 8 * 3


@dataclass
class OperationSequence:
    """One simulated operation history (provenance: handcrafted | random | runin)."""

    name: str
    provenance: str
    seed: int
    features: np.ndarray    # (length+1, 21); controls clean, dependents noisy
    k_eff: np.ndarray       # (length+1,)
    reactivity: np.ndarray  # (length+1,)
    power_mesh: np.ndarray  # (length+1, 160) raw kW, row-major (axial, radial)
    flux_mesh: np.ndarray   # (length+1, 480) row-major (axial, radial, group)
    holdout: bool = False

    @property
    def length(self) -> int:
        """Usable steps; row `length` only supplies next-step targets."""
        return self.features.shape[0] - 1

    def controls_at(self, t: int) -> ControlVector:
        row = self.features[t]
        return ControlVector(
            graphite_fraction=float(row[0]),
            power=float(row[1]),
            rod_depth=float(row[2]),
            timestep=float(row[3]),
            discard_threshold=float(row[4]),
        )


def simulate_sequence(
    cfg: CoreConfig,
    initial_state,
    controls_list: list[ControlVector],
    noise_policy: NoisePolicy,
    name: str,
    provenance: str,
    seed: int,
    noise: bool = True,
    jitter: bool = True,
    holdout: bool = False,
) -> OperationSequence:
    """Drive the simulator through a control schedule and record everything."""
    sim = CoreSimulator(cfg, noise=noise, jitter=jitter)
    extractor = FeatureExtractor(cfg.n_radial)
    state = initial_state.clone()
    state.rng_seed = seed
    rows, keffs, rhos, pmesh, fmesh = [], [], [], [], []
    for ctrl in controls_list:
        res = sim.step(state, ctrl)
        state = res.state_after
        fv = extractor.extract(ctrl, res.discharge, state.fuel_count())
        fv = apply_noise(fv, noise_policy, step_index=state.step_index)
        rows.append(fv.to_array())
        keffs.append(res.k_eff)
        rhos.append(res.reactivity)
        pmesh.append(res.mesh.power.reshape(-1))
        fmesh.append(res.mesh.flux.reshape(-1))
    return OperationSequence(
        name=name,
        provenance=provenance,
        seed=seed,
        features=np.array(rows),
        k_eff=np.array(keffs),
        reactivity=np.array(rhos),
        power_mesh=np.array(pmesh),
        flux_mesh=np.array(fmesh),
        holdout=holdout,
    )


# ------------------------------------------------------------------ random


@dataclass
class RandomPolicy:
    """Per-control perturbation behavior for randomized sequences."""

    perturb_prob: dict = field(default_factory=dict)   # control -> probability
    up_prob: dict = field(default_factory=dict)        # control -> P(step up)
    step_scale: dict = field(default_factory=dict)     # control -> (lo, hi) rel. step
    hold_bounds: tuple = (3, 12)                       # steps a vector is held
    seed: int = 0

    SCALES = {
        "graphite_fraction": 0.25,
        "power": 90_000.0,
        "rod_depth": 80.0,
        "timestep": 2.5,
        "discard_threshold": 3.0,
    }

    def __post_init__(self):
        for name in self.SCALES:
            self.perturb_prob.setdefault(name, 0.5)
            self.up_prob.setdefault(name, 0.5)
            self.step_scale.setdefault(name, (0.2, 1.0))
        for p in list(self.perturb_prob.values()) + list(self.up_prob.values()):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        lo, hi = self.hold_bounds
        if not (1 <= lo <= hi):
            raise ValueError("hold bounds must be ordered and positive")

    @classmethod
    def randomized(cls, seed: int) -> "RandomPolicy":
        """Draw a policy with its own probabilities (one per sequence)."""
        rng = np.random.default_rng([seed, 0xB0_11C7])
        return cls(
            perturb_prob={n: float(rng.uniform(0.15, 0.9)) for n in cls.SCALES},
            up_prob={n: float(rng.uniform(0.25, 0.75)) for n in cls.SCALES},
            step_scale={
                n: tuple(sorted(rng.uniform(0.05, 1.2, size=2))) for n in cls.SCALES
            },
            hold_bounds=(int(rng.integers(2, 5)), int(rng.integers(6, 16))),
            seed=seed,
        )


def _clip_control(name: str, value: float) -> float:
    rule = control_ranges()["controls"][name]
    lo, hi = rule["min"], rule["max"]
    if rule["min_exclusive"]:
        lo = lo + 1e-9 if name != "power" else 10.0  # power floor: never emit <= 0
    return float(min(max(value, lo), hi))


def random_control_schedule(
    policy: RandomPolicy, length: int, base: ControlVector
) -> list[ControlVector]:
    """Piecewise-constant schedule drawn per the policy, clipped to ranges."""
    rng = np.random.default_rng([policy.seed, 0x5E9D])
    current = {n: getattr(base, n) for n in RandomPolicy.SCALES}
    schedule: list[ControlVector] = []
    hold = 0
    while len(schedule) < length:
        if hold <= 0:
            lo, hi = policy.hold_bounds
            hold = int(rng.integers(lo, hi + 1))
            for name, scale in RandomPolicy.SCALES.items():
                if rng.random() < policy.perturb_prob[name]:
                    sign = 1.0 if rng.random() < policy.up_prob[name] else -1.0
                    s_lo, s_hi = policy.step_scale[name]
                    delta = sign * scale * rng.uniform(s_lo, s_hi)
                    current[name] = _clip_control(name, current[name] + delta)
        schedule.append(ControlVector(**current))
        hold -= 1
    return schedule


def generate_random_sequence(
    cfg: CoreConfig,
    policy: RandomPolicy,
    length: int,
    initial_state=None,
    name: str | None = None,
    noise: bool = True,
) -> OperationSequence:
    if length < 8:
        raise ValueError("sequence length must cover at least one window")
    state = (
        initial_state
        if initial_state is not None
        else settled_equilibrium_state(cfg, seed=policy.seed)
    )
    schedule = random_control_schedule(policy, length + 1, benchmark_controls(cfg))
    return simulate_sequence(
        cfg,
        state,
        schedule,
        NoisePolicy(seed=policy.seed),
        name=name or f"random-{policy.seed}",
        provenance="random",
        seed=policy.seed,
        noise=noise,
        jitter=noise,
    )


# ------------------------------------------------------------------ handcrafted


_EQUILIBRIUM_CACHE: dict[str, object] = {}


def settled_equilibrium_state(cfg: CoreConfig, seed: int = 0, settle: int = 220):
    """Benchmark equilibrium start, settled once per configuration and cached."""
    key = cfg.checksum()
    if key not in _EQUILIBRIUM_CACHE:
        sim = CoreSimulator(cfg, noise=False, jitter=False)
        state = build_equilibrium_ladder_state(cfg, seed=0)
        ctrl = benchmark_controls(cfg)
        for _ in range(settle):
            state = sim.step(state, ctrl).state_after
        _EQUILIBRIUM_CACHE[key] = state
    state = _EQUILIBRIUM_CACHE[key].clone()
    state.rng_seed = seed
    state.step_index = 0
    state.elapsed_days = 0.0
    return state


def _ramp(a: float, b: float, n: int) -> np.ndarray:
    return np.linspace(a, b, n)


def _hold(v: float, n: int) -> np.ndarray:
    return np.full(n, v)


@dataclass
class HandcraftedTemplate:
    name: str
    start: str  # "equilibrium" | "runin"
    holdout: bool
    builder: object  # (cfg, n) -> dict of per-control arrays


def _schedule_from_tracks(cfg: CoreConfig, tracks: dict, n: int) -> list[ControlVector]:
    base = benchmark_controls(cfg)
    arrays = {}
    for name in RandomPolicy.SCALES:
        arr = tracks.get(name)
        if arr is None:
            arr = _hold(getattr(base, name), n)
        arrays[name] = np.asarray(arr, dtype=float)[:n]
    return [
        ControlVector(
            graphite_fraction=_clip_control("graphite_fraction", arrays["graphite_fraction"][i]),
            power=_clip_control("power", arrays["power"][i]),
            rod_depth=_clip_control("rod_depth", arrays["rod_depth"][i]),
            timestep=_clip_control("timestep", arrays["timestep"][i]),
            discard_threshold=_clip_control("discard_threshold", arrays["discard_threshold"][i]),
        )
        for i in range(n)
    ]


def handcrafted_library() -> list[HandcraftedTemplate]:
    """The named template set; exactly one template is the held-out one."""

    def ascension(stretch):
        def build(cfg, n):
            ramp = max(8, int(n * stretch))
            return {
                "power": np.concatenate([_ramp(10.0, 280_000.0, ramp), _hold(280_000.0, n)])[:n],
                "graphite_fraction": np.concatenate([_ramp(0.8879, 0.0, ramp), _hold(0.0, n)])[:n],
                "rod_depth": np.concatenate([_ramp(60.25, 369.47, ramp), _hold(369.47, n)])[:n],
            }

        return build

    def rod_triangle(cfg, n):
        half = n // 2
        return {"rod_depth": np.concatenate([_ramp(60.25, 369.47, half), _ramp(369.47, 60.25, n - half)])}

    def rod_staircase(cfg, n):
        levels = np.repeat(np.linspace(60.25, 369.47, 6), max(1, n // 6 + 1))
        return {"rod_depth": levels[:n]}

    def threshold_down(cfg, n):
        return {"discard_threshold": _ramp(19.149, 15.0, n)}

    def threshold_updown(cfg, n):
        half = n // 2
        return {"discard_threshold": np.concatenate([_ramp(19.149, 23.0, half), _ramp(23.0, 19.149, n - half)])}

    def circulation_sweep(cfg, n):
        third = n // 3
        return {
            "timestep": np.concatenate(
                [_ramp(6.525, 3.2, third), _ramp(3.2, 10.0, third), _ramp(10.0, 6.525, n - 2 * third)]
            )
        }

    def graphite_pulse(cfg, n):
        third = n // 3
        return {
            "graphite_fraction": np.concatenate(
                [_hold(0.0, third), _ramp(0.0, 0.35, third // 2), _hold(0.35, third - third // 2), _ramp(0.35, 0.0, n - 2 * third)]
            )[:n]
        }

    def power_downup(cfg, n):
        half = n // 2
        return {"power": np.concatenate([_ramp(280_000.0, 140_000.0, half), _ramp(140_000.0, 280_000.0, n - half)])}

    def power_staircase(cfg, n):
        levels = np.repeat([280_000.0, 220_000.0, 250_000.0, 180_000.0, 280_000.0], max(1, n // 5 + 1))
        return {"power": levels[:n]}

    def power_rod_combo(cfg, n):
        half = n // 2
        return {
            "power": np.concatenate([_ramp(280_000.0, 180_000.0, half), _hold(180_000.0, n - half)]),
            "rod_depth": np.concatenate([_hold(60.25, half), _ramp(60.25, 250.0, n - half)]),
        }

    def graphite_threshold_combo(cfg, n):
        half = n // 2
        return {
            "graphite_fraction": np.concatenate([_ramp(0.0, 0.25, half), _ramp(0.25, 0.0, n - half)]),
            "discard_threshold": np.concatenate([_hold(19.149, half), _ramp(19.149, 16.5, n - half)]),
        }

    def power_circulation_combo(cfg, n):
        half = n // 2
        return {
            "power": np.concatenate([_ramp(280_000.0, 200_000.0, half), _ramp(200_000.0, 280_000.0, n - half)]),
            "timestep": np.concatenate([_ramp(6.525, 9.0, half), _ramp(9.0, 6.525, n - half)]),
        }

    def equilibrium_hold(cfg, n):
        return {}

    return [
        HandcraftedTemplate("runin-ascension-nominal", "runin", False, ascension(0.75)),
        HandcraftedTemplate("runin-ascension-fast", "runin", False, ascension(0.45)),
        HandcraftedTemplate("runin-ascension-slow", "runin", False, ascension(0.95)),
        HandcraftedTemplate("rod-sweep-triangle", "equilibrium", False, rod_triangle),
        HandcraftedTemplate("rod-staircase", "equilibrium", False, rod_staircase),
        HandcraftedTemplate("threshold-down", "equilibrium", False, threshold_down),
        HandcraftedTemplate("threshold-updown", "equilibrium", False, threshold_updown),
        HandcraftedTemplate("circulation-sweep", "equilibrium", False, circulation_sweep),
        HandcraftedTemplate("graphite-pulse", "equilibrium", False, graphite_pulse),
        HandcraftedTemplate("power-downup", "equilibrium", False, power_downup),
        HandcraftedTemplate("power-staircase", "equilibrium", False, power_staircase),
        HandcraftedTemplate("power-rod-combo", "equilibrium", False, power_rod_combo),
        HandcraftedTemplate("graphite-threshold-combo", "equilibrium", False, graphite_threshold_combo),
        HandcraftedTemplate("power-circulation-combo", "equilibrium", False, power_circulation_combo),
        HandcraftedTemplate("equilibrium-hold", "equilibrium", False, equilibrium_hold),
        HandcraftedTemplate("runin-ascension-validation", "runin", True, ascension(0.6)),
    ]


def generate_handcrafted_sequence(
    cfg: CoreConfig,
    template: HandcraftedTemplate,
    length: int,
    seed: int,
    noise: bool = True,
) -> OperationSequence:
    if template.start == "runin":
        state = build_runin_state(cfg, seed=seed)
    else:
        state = settled_equilibrium_state(cfg, seed=seed)
    tracks = template.builder(cfg, length + 1)
    schedule = _schedule_from_tracks(cfg, tracks, length + 1)
    return simulate_sequence(
        cfg,
        state,
        schedule,
        NoisePolicy(seed=seed),
        name=template.name,
        provenance="handcrafted",
        seed=seed,
        noise=noise,
        jitter=noise,
        holdout=template.holdout,
    )


def generate_corpus(
    cfg: CoreConfig,
    n_handcrafted: int = 14,
    n_random: int = 19,
    length: int = 140,
    seed: int = 0,
    noise: bool = True,
    progress=None,
) -> list[OperationSequence]:
    """The full training corpus: handcrafted templates plus randomized runs."""
    sequences = []
    library = handcrafted_library()
    picked = [t for t in library if not t.holdout][: n_handcrafted - 1]
    picked += [t for t in library if t.holdout][:1]
    for i, template in enumerate(picked):
        seq = generate_handcrafted_sequence(cfg, template, length, seed=seed + i, noise=noise)
        sequences.append(seq)
        if progress:
            progress(seq.name)
    for j in range(n_random):
        policy = RandomPolicy.randomized(seed + 1000 + j)
        seq = generate_random_sequence(cfg, policy, length, noise=noise)
        sequences.append(seq)
        if progress:
            progress(seq.name)
    return sequences


# ------------------------------------------------------------------ persistence


def sequence_header() -> list[str]:
    cols = ["step_index"]
    cols += [f"control_{n}" for n in FEATURE_NAMES[:5]]
    cols += [f"feature_{n}" for n in FEATURE_NAMES]
    cols += ["k_eff", "reactivity"]
    cols += [f"power_{i:03d}" for i in range(MESH_POWER_CELLS)]
    cols += [f"flux_{i:03d}" for i in range(MESH_FLUX_CELLS)]
    return cols


def save_sequence_csv(seq: OperationSequence, path) -> None:
    """One row per simulated step; meshes flattened row-major as documented."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(sequence_header())
        for t in range(seq.features.shape[0]):
            row = [t]
            row += list(seq.features[t, :5])
            row += list(seq.features[t])
            row += [seq.k_eff[t], seq.reactivity[t]]
            row += list(seq.power_mesh[t])
            row += list(seq.flux_mesh[t])
            writer.writerow([repr(float(v)) for v in row])


def load_sequence_csv(path, name=None, provenance="loaded", seed=0, holdout=False) -> OperationSequence:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    if data.ndim == 1:
        data = data[None, :]
    n_feat = len(FEATURE_NAMES)
    f0 = 1 + 5
    features = data[:, f0 : f0 + n_feat]
    k0 = f0 + n_feat
    return OperationSequence(
        name=name or Path(path).stem,
        provenance=provenance,
        seed=seed,
        features=features,
        k_eff=data[:, k0],
        reactivity=data[:, k0 + 1],
        power_mesh=data[:, k0 + 2 : k0 + 2 + MESH_POWER_CELLS],
        flux_mesh=data[:, k0 + 2 + MESH_POWER_CELLS :],
        holdout=holdout,
    )


def save_corpus(sequences: list[OperationSequence], directory) -> Path:
    """Write sequence CSVs plus a human-readable manifest index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in sequences:
        fname = f"{seq.name}.csv"
        save_sequence_csv(seq, directory / fname)
        entries.append(
            {
                "file": fname,
                "name": seq.name,
                "provenance": seq.provenance,
                "seed": seq.seed,
                "holdout": seq.holdout,
                "usable_steps": seq.length,
            }
        )
    manifest = {"schema_version": 1, "sequences": entries}
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return directory / "manifest.json"


def load_corpus(directory) -> list[OperationSequence]:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != 1:
        raise ValueError("unsupported corpus manifest schema")
    out = []
    for entry in manifest["sequences"]:
        out.append(
            load_sequence_csv(
                directory / entry["file"],
                name=entry["name"],
                provenance=entry["provenance"],
                seed=entry["seed"],
                holdout=entry["holdout"],
            )
        )
    return out
