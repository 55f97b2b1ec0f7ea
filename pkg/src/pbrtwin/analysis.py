"""Post-training analysis: permutation feature importance, autoregressive
multi-step forecasting with dependent-feature feedback, and mesh
reconstruction accuracy under component masks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import meshpca
from .coresim import ControlVector
from .features import FEATURE_NAMES
from .lstm.training import evaluate
from .windows import NEXT_STEP_TARGETS, POWER_PC_NAMES, FLUX_PC_NAMES

# ------------------------------------------------------------------ importance


@dataclass
class ImportanceReport:
    baseline_mae: dict                       # target -> MAE
    delta_mae: dict                          # feature -> {target -> delta MAE}
    repetitions: int
    seed: int
    split: str

    def to_csv(self, path) -> None:
        targets = sorted(self.baseline_mae)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature"] + targets)
            writer.writerow(["<baseline_mae>"] + [self.baseline_mae[t] for t in targets])
            for feat in FEATURE_NAMES:
                if feat in self.delta_mae:
                    writer.writerow(
                        [feat] + [self.delta_mae[feat][t] for t in targets]
                    )


def permutation_importance(
    models: dict,
    dataset,
    repetitions: int = 5,
    split: str = "test",
    seed: int = 0,
    features: list | None = None,
) -> ImportanceReport:
    """Delta MAE per (input feature, target) when that feature's values are
    shuffled across samples (whole windows move together, keeping each
    sample's 8-step history internally coherent)."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    X = dataset.inputs(split)
    n = X.shape[0]
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 0x1395])
    features = features or list(FEATURE_NAMES)

    baseline = {t: evaluate(m, dataset, split).mae for t, m in models.items()}
    truths = {t: dataset.targets[t][dataset.split[split]] for t in models}

    delta: dict = {f: {t: 0.0 for t in models} for f in features}
    for feat in features:
        j = FEATURE_NAMES.index(feat)
        acc = {t: 0.0 for t in models}
        for _ in range(repetitions):
            perm = rng.permutation(n)
            X_shuf = X.copy()
            X_shuf[:, :, j] = X[perm][:, :, j]
            for t, model in models.items():
                pred = dataset.destandardize_target(t, model.forward(X_shuf))
                acc[t] += float(np.mean(np.abs(pred - truths[t])))
        for t in models:
            delta[feat][t] = acc[t] / repetitions - baseline[t]
    return ImportanceReport(
        baseline_mae=baseline,
        delta_mae=delta,
        repetitions=repetitions,
        seed=seed,
        split=split,
    )


# ------------------------------------------------------------------ forecasting


@dataclass
class FuelLedger:
    """Deterministic fuel-count bookkeeping from insertion history.

    Tracks the per-layer fuel content of the 10-layer column so power per
    pebble can be recomputed from planned controls during a forecast.
    """

    layer_fuel: list          # fuel pebbles per axial layer, bottom first
    layer_capacity: float

    @classmethod
    def from_state(cls, state) -> "FuelLedger":
        grid = state.grid
        fuel = []
        for a in range(grid.n_axial):
            fuel.append(
                sum(
                    g.pebble_count
                    for r in range(grid.n_radial)
                    for g in state.inventory[r][a]
                    if not g.is_graphite
                )
            )
        return cls(fuel, state.total_pebbles / grid.n_axial)

    @classmethod
    def uniform(cls, fuel_count: float, total_pebbles: float, n_axial: int = 10):
        return cls([fuel_count / n_axial] * n_axial, total_pebbles / n_axial)

    def fuel_count(self) -> float:
        return sum(self.layer_fuel)

    def advance(self, graphite_fraction: float, predicted_discards: float) -> None:
        """Mirror the simulator's refill composition rule."""
        c = self.layer_capacity
        f_pop = self.layer_fuel.pop()  # top layer leaves
        g_pop = c - f_pop
        d = min(max(predicted_discards, 0.0), f_pop)
        s_f = f_pop - d
        if graphite_fraction >= 1.0:
            kept = g_pop
        else:
            kept = min(g_pop, graphite_fraction * s_f / (1.0 - graphite_fraction))
        vacancies = (g_pop - kept) + d
        fresh_graphite = graphite_fraction * vacancies
        new_fuel = c - (kept + fresh_graphite)
        self.layer_fuel.insert(0, new_fuel)


@dataclass
class ForecastTrace:
    start_step: int
    horizon: int
    plan: list
    predictions: dict                       # target -> (horizon,)
    feature_rows: np.ndarray                # predicted future rows, (horizon, 21)
    ground_truth: dict | None = None        # optional target -> (horizon,)


def _predict_scalar(model, window_rows: np.ndarray) -> float:
    return float(model.predict_raw(window_rows[None])[0])


def forecast(
    models: dict,
    history_features: np.ndarray,
    plan: list,
    ledger: FuelLedger,
    horizon: int | None = None,
    window: int = 8,
) -> ForecastTrace:
    """Autoregressive roll-forward: planned controls, model-predicted
    dependent features, ledger-derived power per pebble."""
    horizon = len(plan) if horizon is None else horizon
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if len(plan) < horizon:
        raise ValueError("plan shorter than the requested horizon")
    history = np.asarray(history_features, dtype=float)
    if history.shape[0] < window:
        raise ValueError(f"history must cover at least {window} steps")
    missing = [t for t in NEXT_STEP_TARGETS if t not in models]
    if missing:
        raise ValueError(f"models unavailable for dependent features: {missing}")

    ledger = FuelLedger(list(ledger.layer_fuel), ledger.layer_capacity)  # what-if purity
    rows = [history[i].copy() for i in range(history.shape[0] - window, history.shape[0])]
    # dependent features of the first future step come from the history window
    window_arr = np.array(rows[-window:])
    pending = {
        t: _predict_scalar(models[t], window_arr) for t in NEXT_STEP_TARGETS
    }

    targets = list(models)
    predictions = {t: np.zeros(horizon) for t in targets}
    future_rows = []
    dep_index = {name: FEATURE_NAMES.index(name) for name in NEXT_STEP_TARGETS}

    for step in range(horizon):
        controls: ControlVector = plan[step]
        ledger.advance(controls.graphite_fraction, pending["discarded_count"])
        fuel = max(ledger.fuel_count(), 1.0)
        row = np.zeros(len(FEATURE_NAMES))
        row[0] = controls.graphite_fraction
        row[1] = controls.power
        row[2] = controls.rod_depth
        row[3] = controls.timestep
        row[4] = controls.discard_threshold
        row[5] = controls.power / fuel
        for name in NEXT_STEP_TARGETS:
            if name == "power_per_pebble":
                continue
            row[dep_index[name]] = max(pending[name], 0.0)
        rows.append(row)
        future_rows.append(row.copy())
        window_arr = np.array(rows[-window:])
        for t in targets:
            predictions[t][step] = _predict_scalar(models[t], window_arr)
        pending = {t: predictions[t][step] for t in NEXT_STEP_TARGETS}

    return ForecastTrace(
        start_step=int(history.shape[0]),
        horizon=horizon,
        plan=list(plan[:horizon]),
        predictions=predictions,
        feature_rows=np.array(future_rows),
    )


# ------------------------------------------------------------------ scenarios


@dataclass
class Scenario:
    """A held control perturbation applied after an equilibrium history."""

    name: str
    overrides: dict          # control name -> held value
    horizon: int = 20
    history_steps: int = 16


def builtin_scenarios() -> list[Scenario]:
    """The four canonical single-control perturbations."""
    return [
        Scenario("power-down", {"power": 200_000.0}),
        Scenario("power-up", {"power": 308_000.0}),
        Scenario("rods-in", {"rod_depth": 250.0}),
        Scenario("threshold-decrease", {"discard_threshold": 16.0}),
    ]


def run_scenario(
    cfg,
    models: dict,
    scenario: Scenario,
    seed: int = 0,
    noise: bool = True,
) -> ForecastTrace:
    """Forecast a scenario and attach simulator ground truth."""
    from .coresim import CoreSimulator, benchmark_controls
    from .features import FeatureExtractor, NoisePolicy, apply_noise
    from .sequences import settled_equilibrium_state

    base = benchmark_controls(cfg)
    held = ControlVector(**{**base.as_dict(), **scenario.overrides})

    state = settled_equilibrium_state(cfg, seed=seed)
    sim = CoreSimulator(cfg, noise=noise, jitter=noise)
    extractor = FeatureExtractor(cfg.n_radial)
    policy = NoisePolicy(seed=seed)
    history = []
    for _ in range(scenario.history_steps):
        res = sim.step(state, base)
        state = res.state_after
        fv = extractor.extract(base, res.discharge, state.fuel_count())
        fv = apply_noise(fv, policy, step_index=state.step_index)
        history.append(fv.to_array())
    history = np.array(history)

    ledger = FuelLedger.from_state(state)
    plan = [held] * scenario.horizon
    trace = forecast(models, history, plan, ledger, horizon=scenario.horizon)

    truth_rho = np.zeros(scenario.horizon)
    truth = {t: np.zeros(scenario.horizon) for t in models}
    sim_state = state
    for step in range(scenario.horizon):
        res = sim.step(sim_state, held)
        sim_state = res.state_after
        truth_rho[step] = res.reactivity
    truth["reactivity"] = truth_rho
    trace.ground_truth = {"reactivity": truth_rho}
    return trace


def forecast_error_trend(traces: list[ForecastTrace]) -> dict:
    """Average |forecast - truth| for reactivity over early vs late halves."""
    early, late = [], []
    for trace in traces:
        err = np.abs(
            trace.predictions["reactivity"] - trace.ground_truth["reactivity"]
        )
        half = len(err) // 2
        early.append(err[:half].mean())
        late.append(err[half:].mean())
    return {
        "early_mae": float(np.mean(early)),
        "late_mae": float(np.mean(late)),
        "per_scenario": [(float(a), float(b)) for a, b in zip(early, late)],
    }


# ------------------------------------------------------------------ reconstruction


@dataclass
class MaskReport:
    mask: tuple
    mean_abs_pct_error: float
    max_abs_pct_error: float
    n_cells: int


def mesh_reconstruction_report(
    sequences,
    pca_model: meshpca.PcaModel,
    mesh_kind: str = "power",
    masks: list | None = None,
    models: dict | None = None,
    dataset=None,
    window: int = 8,
    cell_floor: float = 1e-6,
) -> list[MaskReport]:
    """Cell-wise percent error of mask-reconstructed meshes vs ground truth.

    With `models` given, component scores are predicted from input windows;
    otherwise the ground-truth scores are used, isolating PCA truncation
    plus tally noise.
    """
    from .windows import per_kw_meshes

    n_comp = pca_model.n_components
    masks = masks if masks is not None else [tuple(range(n_comp))]
    pc_names = POWER_PC_NAMES if mesh_kind == "power" else FLUX_PC_NAMES

    truth_all, scores_all, power_all = [], [], []
    for seq in sequences:
        pkw, fkw = per_kw_meshes(seq)
        kw = pkw if mesh_kind == "power" else fkw
        true_scores = meshpca.transform(pca_model, kw)
        raw = seq.power_mesh if mesh_kind == "power" else seq.flux_mesh
        for t in range(window - 1, seq.length):
            truth_all.append(raw[t])
            power_all.append(seq.features[t, 1])
            if models is None:
                scores_all.append(true_scores[t])
            else:
                win = seq.features[t - window + 1 : t + 1]
                scores_all.append(
                    [ _predict_scalar(models[name], win) for name in pc_names ]
                )
    truth_all = np.array(truth_all)
    scores_all = np.array(scores_all)
    power_all = np.array(power_all)

    reports = []
    for mask in masks:
        recon_kw = meshpca.inverse_transform(pca_model, scores_all, mask=mask)
        recon = recon_kw * power_all[:, None]
        floor = cell_floor * np.abs(truth_all).max()
        good = np.abs(truth_all) > floor
        pct = np.abs(recon[good] - truth_all[good]) / np.abs(truth_all[good]) * 100.0
        reports.append(
            MaskReport(
                mask=tuple(mask),
                mean_abs_pct_error=float(pct.mean()),
                max_abs_pct_error=float(pct.max()),
                n_cells=int(good.sum()),
            )
        )
    return reports


def reconstruction_report_csv(reports: list[MaskReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mask", "mean_abs_pct_error", "max_abs_pct_error", "n_cells"])
        for r in reports:
            writer.writerow(
                ["+".join(str(i + 1) for i in r.mask), r.mean_abs_pct_error,
                 r.max_abs_pct_error, r.n_cells]
            )
