"""Closed-loop running-in controller.

Each step the controller perturbs controls along their 1,000-point grids
toward the goal state, querying a reactivity predictor to keep predicted
reactivity inside a tolerance band (50 pcm by default), trimming with the
circulation rate when extra negative reactivity is needed. Realized
values always come from the simulator; the model never overwrites them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import CoreConfig
from .coresim import ControlVector, CoreSimulator, advance_step, build_runin_state
from .features import FEATURE_NAMES, FeatureExtractor, NoisePolicy, apply_noise
from .analysis import FuelLedger
from .sequences import OperationSequence

PCM = 1.0e-5


@dataclass(frozen=True)
class ControlGrid:
    """One control's path from starting value to final value."""

    name: str
    start: float
    perturbation: float
    final: float
    lo_index: int = 0
    hi_index: int = 1000
    start_index: int = 0
    goal_index: int = 1000
    bidirectional: bool = False

    def value(self, index: int) -> float:
        index = int(np.clip(index, self.lo_index, self.hi_index))
        if index == self.goal_index:
            return self.final
        if index == self.start_index:
            return self.start
        return self.start + (index - self.start_index) * self.perturbation


def table_grids() -> dict[str, ControlGrid]:
    """The goal-state grids: 1,000 perturbations from start to final."""
    return {
        "power": ControlGrid("power", 10.0, +279.99, 280_000.0),
        "graphite_fraction": ControlGrid(
            "graphite_fraction", 0.8879, -8.879e-4, 0.0
        ),
        "rod_depth": ControlGrid("rod_depth", 60.25, +0.30922, 369.47),
        "timestep": ControlGrid(
            "timestep",
            6.525,
            0.01305,
            6.525,
            lo_index=-499,
            hi_index=500,
            start_index=0,
            goal_index=0,
            bidirectional=True,
        ),
    }


@dataclass
class GoalSchedule:
    grids: dict = field(default_factory=table_grids)
    tolerance_pcm: float = 50.0
    min_perturbations: int = 40            # s
    discard_threshold: float = 19.149      # held fixed during run-in
    per_step_limit: int = 160              # max grid advances per control per step
    query_budget: int = 64                 # predictor evaluations per step

    def start_indices(self) -> dict:
        return {name: g.start_index for name, g in self.grids.items()}

    def at_goal(self, indices: dict) -> bool:
        return all(
            indices[name] == g.goal_index for name, g in self.grids.items()
        )

    def controls_for(self, indices: dict) -> ControlVector:
        return ControlVector(
            graphite_fraction=self.grids["graphite_fraction"].value(
                indices["graphite_fraction"]
            ),
            power=self.grids["power"].value(indices["power"]),
            rod_depth=self.grids["rod_depth"].value(indices["rod_depth"]),
            timestep=self.grids["timestep"].value(indices["timestep"]),
            discard_threshold=self.discard_threshold,
        )


def fine_tune_index(predict, lo: int, hi: int, tolerance: float):
    """Integer bisection for |rho| <= tolerance on a monotone-decreasing
    predicted-reactivity curve; returns (index, rho, probes)."""
    best_idx, best_rho = None, math.inf
    probes = 0
    while lo <= hi:
        mid = (lo + hi) // 2
        rho = predict(mid)
        probes += 1
        if abs(rho) < abs(best_rho):
            best_idx, best_rho = mid, rho
        if abs(rho) <= tolerance:
            return mid, rho, probes
        if rho > 0.0:
            lo = mid + 1  # need more negative reactivity: larger index
        else:
            hi = mid - 1
    return best_idx, best_rho, probes


# ------------------------------------------------------------------ predictors


class OracleStubPredictor:
    """Ground-truth one-step lookahead: clones the live core state and
    evaluates the kernel noise-free. Isolates controller logic from
    model quality."""

    def __init__(self, cfg: CoreConfig):
        self.cfg = cfg
        self._state = None

    def bind(self, state) -> None:
        self._state = state

    def observe(self, feature_row, discharge) -> None:  # keeps the interface
        pass

    def predict(self, controls: ControlVector) -> float:
        res = advance_step(self._state, controls, self.cfg, noise=False, jitter=False)
        return res.reactivity


class LstmReactivityPredictor:
    """Predicts next-step reactivity from the recorded feature history with
    the candidate controls substituted into the window's last row."""

    def __init__(self, models: dict, ledger: FuelLedger, window: int = 8):
        if "reactivity" not in models:
            raise ValueError("needs a trained reactivity model")
        self.models = models
        self.ledger = ledger
        self.window = window
        self.rows: list[np.ndarray] = []
        self._last_discards = 0.0

    def bind(self, state) -> None:
        self.ledger = FuelLedger.from_state(state)

    def observe(self, feature_row: np.ndarray, discharge) -> None:
        self.rows.append(np.asarray(feature_row, dtype=float))
        if discharge is not None:
            self._last_discards = discharge.discarded_count

    def predict(self, controls: ControlVector) -> float:
        if len(self.rows) < self.window - 1:
            raise ValueError("history shorter than the model window")
        probe = FuelLedger(list(self.ledger.layer_fuel), self.ledger.layer_capacity)
        probe.advance(controls.graphite_fraction, self._last_discards)
        fuel = max(probe.fuel_count(), 1.0)
        row = self.rows[-1].copy()
        row[0] = controls.graphite_fraction
        row[1] = controls.power
        row[2] = controls.rod_depth
        row[3] = controls.timestep
        row[4] = controls.discard_threshold
        row[5] = controls.power / fuel
        window = np.vstack([np.array(self.rows[-(self.window - 1):]), row[None]])
        return float(self.models["reactivity"].predict_raw(window[None])[0])


# ------------------------------------------------------------------ controller


@dataclass
class StepDecision:
    indices: dict
    controls: ControlVector
    predicted_rho: float
    moves: int
    queries: int
    within_tolerance: bool


def choose_controls(
    predictor, goals: GoalSchedule, indices: dict
) -> StepDecision:
    """Pick the next control vector: advance toward goals where predicted
    reactivity stays in band, fill the perturbation quota with the
    circulation trim, then fine-tune the trim by bisection.

    Pacing rules (this controller's policy):
    * power ascends first; its only reactivity effect is through the
      depletion rate, so it is gated by the band check alone;
    * rods advance only when predicted reactivity is positive - they are
      the absorber for the fuel-ingress lift and must not overshoot;
    * graphite reduction is rate-limited (its reactivity arrives over a
      full pass, invisible to a one-step prediction) and never runs more
      than `lead` indices ahead of the rods, so the rod grid can always
      finish while graphite lift remains.
    """
    tol = goals.tolerance_pcm * PCM
    idx = dict(indices)
    queries = 0

    def rho_at(trial: dict) -> float:
        nonlocal queries
        queries += 1
        return predictor.predict(goals.controls_for(trial))

    base_rho = rho_at(idx)
    if goals.at_goal(idx) and abs(base_rho) <= tol:
        return StepDecision(
            indices=idx,
            controls=goals.controls_for(idx),
            predicted_rho=base_rho,
            moves=0,
            queries=queries,
            within_tolerance=True,
        )

    power_frac = idx["power"] / goals.grids["power"].goal_index
    rods_done = idx["rod_depth"] >= goals.grids["rod_depth"].goal_index
    # graphite lift roughly balances the full-power burnup sink at ~6-7
    # indices per step; run slightly hot while rods still need lift to absorb
    graphite_cap = 10 if not rods_done else 6
    caps = {
        "power": goals.per_step_limit,
        "rod_depth": goals.per_step_limit,
        "graphite_fraction": max(2, int(round(graphite_cap * power_frac))),
    }

    slack = 2.0 * PCM        # moves this close to harmless are acceptable
    free_eps = 1.5 * PCM     # a full-size chunk below this effect is free

    for name in ("power", "rod_depth", "graphite_fraction"):
        grid = goals.grids[name]
        remaining = grid.goal_index - idx[name]
        if remaining <= 0:
            continue
        if name == "rod_depth" and base_rho <= 0.0:
            continue  # rods only absorb; nothing to absorb now
        if name == "graphite_fraction":
            # keep enough graphite lift in reserve for the remaining rod travel
            rod_remaining = goals.grids["rod_depth"].goal_index - idx["rod_depth"]
            ceiling = goals.grids[name].goal_index - (rod_remaining + 1) // 2
            remaining = min(remaining, ceiling - idx[name])
            if remaining <= 0:
                continue
        # moves with no predicted effect (parked-rod travel, retention-capped
        # graphite) may take the whole allowance at once
        full = {**idx, name: idx[name] + min(remaining, goals.per_step_limit)}
        rho_full = rho_at(full)
        if abs(rho_full - base_rho) < free_eps:
            idx = full
            base_rho = rho_full
            continue
        chunk = min(remaining, caps[name])
        while chunk > 0 and queries < goals.query_budget - 12:
            trial = {**idx, name: idx[name] + chunk}
            rho = rho_at(trial)
            if name == "rod_depth":
                ok = rho >= -tol  # absorb without overshooting negative
            else:
                ok = abs(rho) <= tol or abs(rho) <= abs(base_rho) + slack
            if ok:
                idx = trial
                base_rho = rho
                break
            chunk //= 2

    ts_grid = goals.grids["timestep"]
    others_done = all(
        idx[n] == goals.grids[n].goal_index
        for n in ("power", "rod_depth", "graphite_fraction")
    )
    moves = sum(abs(idx[n] - indices[n]) for n in idx)

    if others_done and idx["timestep"] != ts_grid.goal_index:
        # endgame: sprint the circulation rate home
        delta = ts_grid.goal_index - idx["timestep"]
        step = int(np.clip(delta, -goals.per_step_limit, goals.per_step_limit))
        idx["timestep"] += step
        base_rho = rho_at(idx)
    elif moves < goals.min_perturbations:
        # spend the remaining quota on the reactivity trim (Table 4's only
        # bidirectional control): longer steps add burnup, pulling rho down
        need = goals.min_perturbations - moves
        direction = 1 if base_rho > 0.0 else -1
        target = int(
            np.clip(idx["timestep"] + direction * need, ts_grid.lo_index, ts_grid.hi_index)
        )
        if target == idx["timestep"]:
            target = int(
                np.clip(idx["timestep"] - direction * need, ts_grid.lo_index, ts_grid.hi_index)
            )
        idx["timestep"] = target
        base_rho = rho_at(idx)

    # fine-tune |rho| <= tol with the trim, within the remaining query budget
    if abs(base_rho) > tol and not others_done:
        lo = max(ts_grid.lo_index, idx["timestep"] - 150)
        hi = min(ts_grid.hi_index, idx["timestep"] + 150)
        budget = goals.query_budget - queries
        if budget > 2:
            def probe(j):
                return rho_at({**idx, "timestep": int(j)})

            best_j, best_rho, _ = fine_tune_index(probe, lo, hi, tol)
            if best_j is not None and abs(best_rho) < abs(base_rho):
                idx["timestep"] = int(best_j)
                base_rho = best_rho

    moves = sum(abs(idx[n] - indices[n]) for n in idx)
    return StepDecision(
        indices=idx,
        controls=goals.controls_for(idx),
        predicted_rho=base_rho,
        moves=moves,
        queries=queries,
        within_tolerance=abs(base_rho) <= tol,
    )


# ------------------------------------------------------------------ iteration


@dataclass
class RunInStep:
    step_index: int
    indices: dict
    controls: dict
    predicted_rho: float
    realized_rho: float
    moves: int
    within_tolerance: bool


@dataclass
class RunInRecord:
    steps: list
    reached_goals: bool
    aborted: bool
    days_to_full_power: float | None
    reactivity_mae: float          # mean |realized rho| (criticality objective)
    prediction_mae: float          # mean |predicted - realized|
    s_value: int
    iteration: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "predicted_rho", "realized_rho", "moves", "within_tolerance"]
                + [f"idx_{n}" for n in ("power", "graphite_fraction", "rod_depth", "timestep")]
                + list(FEATURE_NAMES[:5])
            )
            for s in self.steps:
                writer.writerow(
                    [s.step_index, s.predicted_rho, s.realized_rho, s.moves,
                     int(s.within_tolerance)]
                    + [s.indices[n] for n in ("power", "graphite_fraction", "rod_depth", "timestep")]
                    + [s.controls[n] for n in FEATURE_NAMES[:5]]
                )


def run_iteration(
    cfg: CoreConfig,
    predictor,
    goals: GoalSchedule,
    max_steps: int = 600,
    initial_state=None,
    seed: int = 0,
    noise: bool = True,
    jitter: bool = True,
    safety_rho: float = 0.02,
    warmup_steps: int = 8,
    iteration: int = 0,
) -> tuple[RunInRecord, OperationSequence | None]:
    """Alternate choose_controls with simulator steps until every grid
    reaches its goal or the step/safety budget runs out."""
    state = (initial_state or build_runin_state(cfg, seed=seed)).clone()
    state.rng_seed = seed
    sim = CoreSimulator(cfg, noise=noise, jitter=jitter)
    extractor = FeatureExtractor(cfg.n_radial)
    noise_policy = NoisePolicy(seed=seed)
    indices = goals.start_indices()

    rows, keffs, rhos, pmesh, fmesh = [], [], [], [], []

    def record(res, controls):
        fv = extractor.extract(controls, res.discharge, res.state_after.fuel_count())
        fv = apply_noise(fv, noise_policy, step_index=res.state_after.step_index)
        arr = fv.to_array()
        rows.append(arr)
        keffs.append(res.k_eff)
        rhos.append(res.reactivity)
        pmesh.append(res.mesh.power.reshape(-1))
        fmesh.append(res.mesh.flux.reshape(-1))
        return arr

    predictor.bind(state)
    start_controls = goals.controls_for(indices)
    for _ in range(warmup_steps):
        res = sim.step(state, start_controls)
        state = res.state_after
        predictor.bind(state)
        arr = record(res, start_controls)
        predictor.observe(arr, res.discharge)

    steps: list[RunInStep] = []
    reached = goals.at_goal(indices)
    aborted = False
    days_to_full_power = None

    for _ in range(max_steps):
        if goals.at_goal(indices):
            reached = True
            break
        decision = choose_controls(predictor, goals, indices)
        indices = decision.indices
        res = sim.step(state, decision.controls)
        state = res.state_after
        predictor.bind(state)
        arr = record(res, decision.controls)
        predictor.observe(arr, res.discharge)

        steps.append(
            RunInStep(
                step_index=state.step_index,
                indices=dict(indices),
                controls=decision.controls.as_dict(),
                predicted_rho=decision.predicted_rho,
                realized_rho=res.reactivity,
                moves=decision.moves,
                within_tolerance=decision.within_tolerance,
            )
        )
        if (
            days_to_full_power is None
            and indices["power"] == goals.grids["power"].goal_index
        ):
            days_to_full_power = state.elapsed_days
        if abs(res.reactivity) > safety_rho:
            aborted = True
            break
    else:
        reached = goals.at_goal(indices)
    if goals.at_goal(indices):
        reached = True

    realized = np.array([s.realized_rho for s in steps]) if steps else np.zeros(1)
    predicted = np.array([s.predicted_rho for s in steps]) if steps else np.zeros(1)
    record_out = RunInRecord(
        steps=steps,
        reached_goals=reached and not aborted,
        aborted=aborted,
        days_to_full_power=days_to_full_power,
        reactivity_mae=float(np.mean(np.abs(realized))),
        prediction_mae=float(np.mean(np.abs(predicted - realized))),
        s_value=goals.min_perturbations,
        iteration=iteration,
    )

    sequence = None
    if len(rows) >= 2:
        sequence = OperationSequence(
            name=f"runin-iter{iteration}-s{goals.min_perturbations}-seed{seed}",
            provenance="runin",
            seed=seed,
            features=np.array(rows),
            k_eff=np.array(keffs),
            reactivity=np.array(rhos),
            power_mesh=np.array(pmesh),
            flux_mesh=np.array(fmesh),
        )
    return record_out, sequence


# ------------------------------------------------------------------ outer loop


def compact_train_config(target: str, seed: int = 0):
    """Small architectures for the retraining loop's turnaround time."""
    from .lstm import LstmConfig

    return LstmConfig(
        hidden_layer_sizes=[16],
        input_dim=len(FEATURE_NAMES),
        window=8,
        max_epochs=15,
        min_epochs=3,
        patience=4,
        recurrent_dropout=0.10,
        l2_lambda=1e-4,
        seed=seed,
    )


def train_all_targets(dataset, config_builder=None, targets=None) -> dict:
    from .lstm import train
    from .windows import TARGET_NAMES

    builder = config_builder or compact_train_config
    out = {}
    for target in targets or TARGET_NAMES:
        out[target] = train(builder(target), dataset, target)
    return out


@dataclass
class LoopResult:
    records: list
    models: dict
    corpus_size: int
    metrics_rows: list

    def metrics_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["iteration", "s", "steps", "days_to_full_power",
                 "reactivity_mae", "prediction_mae", "reached_goals", "aborted"]
            )
            writer.writerows(self.metrics_rows)


def optimize_loop(
    cfg: CoreConfig,
    corpus: list,
    goals: GoalSchedule,
    n_iterations: int = 3,
    seed: int = 0,
    train_config_builder=None,
    max_steps: int = 600,
    noise: bool = True,
    progress=None,
) -> LoopResult:
    """Run-in, retrain on the accumulated data, repeat."""
    from .windows import fit_mesh_pca, window_dataset

    if n_iterations < 1:
        raise ValueError("need at least one iteration")
    corpus = list(corpus)
    builder = train_config_builder or compact_train_config

    pca_power, pca_flux = fit_mesh_pca(corpus)
    dataset = window_dataset(corpus, pca_power=pca_power, pca_flux=pca_flux, seed=seed)
    models = train_all_targets(dataset, builder)

    records, metrics = [], []
    for it in range(1, n_iterations + 1):
        ledger = FuelLedger.uniform(
            cfg.total_pebbles * cfg.runin_fuel_fraction, cfg.total_pebbles, cfg.n_axial
        )
        predictor = LstmReactivityPredictor(models, ledger)
        record, sequence = run_iteration(
            cfg,
            predictor,
            goals,
            max_steps=max_steps,
            seed=seed + 7_000 + it,
            noise=noise,
            iteration=it,
        )
        records.append(record)
        if sequence is not None:
            corpus.append(sequence)
        metrics.append(
            [
                it,
                goals.min_perturbations,
                len(record.steps),
                record.days_to_full_power,
                record.reactivity_mae,
                record.prediction_mae,
                record.reached_goals,
                record.aborted,
            ]
        )
        if progress:
            progress(it, record)

        dataset = window_dataset(
            corpus, pca_power=pca_power, pca_flux=pca_flux, seed=seed + it
        )
        new_models = train_all_targets(dataset, builder)
        diverged = [t for t, m in new_models.items() if m.history.get("diverged")]
        for t, m in new_models.items():
            if t not in diverged:
                models[t] = m  # keep the previous model where training diverged

    return LoopResult(
        records=records,
        models=models,
        corpus_size=len(corpus),
        metrics_rows=metrics,
    )
