"""Live simulation session: serialized mutations, append-only event log,
bit-exact replay. Forecasts are pure and never touch session state."""

from __future__ import annotations

import itertools
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

from ..analysis import FuelLedger, forecast
from ..config import CoreConfig
from ..coresim import (
    ControlVector,
    CoreSimulator,
    benchmark_controls,
    build_fresh_state,
    build_runin_state,
    validate_controls,
)
from ..features import FEATURE_NAMES, FeatureExtractor, NoisePolicy, apply_noise
from ..runin import (
    GoalSchedule,
    LstmReactivityPredictor,
    OracleStubPredictor,
    choose_controls,
)


@dataclass
class SessionEvent:
    kind: str          # "init" | "set_controls" | "step"
    payload: dict
    step_index: int


def _runin_start_controls(cfg: CoreConfig) -> ControlVector:
    goals = GoalSchedule()
    return goals.controls_for(goals.start_indices())


def _initial_state(cfg: CoreConfig, start: str, seed: int):
    if start == "runin":
        return build_runin_state(cfg, seed=seed)
    if start == "fresh":
        return build_fresh_state(cfg, seed=seed)
    if start == "equilibrium":
        from ..sequences import settled_equilibrium_state

        return settled_equilibrium_state(cfg, seed=seed)
    raise ValueError(f"unknown start state {start!r}")


class Session:
    """One live core; a single writer, mutations serialized by a lock."""

    def __init__(
        self,
        cfg: CoreConfig,
        seed: int = 0,
        start: str = "equilibrium",
        noise: bool = True,
        models: dict | None = None,
    ):
        self.id = uuid.uuid4().hex[:12]
        self.cfg = cfg
        self.seed = seed
        self.start = start
        self.noise = noise
        self.lock = threading.RLock()
        self.sim = CoreSimulator(cfg, noise=noise, jitter=noise)
        self.state = _initial_state(cfg, start, seed)
        self.extractor = FeatureExtractor(cfg.n_radial)
        self.noise_policy = NoisePolicy(seed=seed)
        self.pending_controls = (
            _runin_start_controls(cfg) if start == "runin" else benchmark_controls(cfg)
        )
        self.history: list[dict] = []
        self.events: list[SessionEvent] = [
            SessionEvent(
                "init",
                {
                    "seed": seed,
                    "start": start,
                    "noise": noise,
                    "config_checksum": cfg.checksum(),
                },
                0,
            )
        ]
        self.models = models or {}
        self.runin_job: RunInJob | None = None
        self.latest_mesh = None

    # ------------------------------------------------------------- commands

    def set_controls(self, values: dict) -> dict:
        controls = ControlVector(**values)
        errors = validate_controls(controls)
        if errors:
            raise ControlValidationError(errors)
        with self.lock:
            self.pending_controls = controls
            self.events.append(
                SessionEvent("set_controls", dict(values), self.state.step_index)
            )
        return controls.as_dict()

    def step(self, n: int = 1) -> list[dict]:
        if n < 1:
            raise ValueError("n must be >= 1")
        with self.lock:
            records = [self._apply_step() for _ in range(n)]
            self.events.append(SessionEvent("step", {"n": n}, self.state.step_index))
        return records

    def _apply_step(self) -> dict:
        res = self.sim.step(self.state, self.pending_controls)
        self.state = res.state_after
        fv = self.extractor.extract(
            self.pending_controls, res.discharge, self.state.fuel_count()
        )
        fv = apply_noise(fv, self.noise_policy, step_index=self.state.step_index)
        self.latest_mesh = res.mesh
        record = {
            "step_index": self.state.step_index,
            "elapsed_days": self.state.elapsed_days,
            "k_eff": res.k_eff,
            "reactivity": res.reactivity,
            "reactivity_pcm": res.reactivity / 1e-5,
            "dead_core": res.dead_core,
            "controls": self.pending_controls.as_dict(),
            "features": fv.to_array().tolist(),
            "discarded": res.discharge.discarded_count,
        }
        self.history.append(record)
        return record

    # ------------------------------------------------------------- queries

    def state_summary(self) -> dict:
        with self.lock:
            last = self.history[-1] if self.history else None
            return {
                "session_id": self.id,
                "step_index": self.state.step_index,
                "elapsed_days": self.state.elapsed_days,
                "fuel_pebbles": self.state.fuel_count(),
                "graphite_pebbles": self.state.graphite_count(),
                "total_pebbles": self.state.total_count(),
                "pending_controls": self.pending_controls.as_dict(),
                "k_eff": None if last is None else last["k_eff"],
                "reactivity_pcm": None if last is None else last["reactivity_pcm"],
                "dead_core": False if last is None else last["dead_core"],
                "models_loaded": sorted(self.models),
                "runin_active": bool(self.runin_job and self.runin_job.running),
            }

    def meshes_latest(self) -> dict:
        with self.lock:
            if self.latest_mesh is None:
                raise NoDataError("no steps taken yet")
            return {
                "step_index": self.state.step_index,
                "power": self.latest_mesh.power.tolist(),
                "flux": self.latest_mesh.flux.tolist(),
            }

    def feature_history(self) -> np.ndarray:
        return np.array([r["features"] for r in self.history])

    # ------------------------------------------------------------- forecast

    def run_forecast(self, plan: list[dict], horizon: int | None = None) -> dict:
        """Pure what-if: reads state under the lock, never mutates it."""
        if not self.models:
            raise ModelsUnavailableError("no trained models loaded")
        controls_plan = []
        for i, values in enumerate(plan):
            controls = ControlVector(**values)
            errors = validate_controls(controls)
            if errors:
                raise ControlValidationError(errors, index=i)
            controls_plan.append(controls)
        with self.lock:
            history = self.feature_history()
            ledger = FuelLedger.from_state(self.state)
            start_step = self.state.step_index
        if history.shape[0] < 8:
            raise NoDataError("need at least 8 recorded steps before forecasting")
        trace = forecast(self.models, history, controls_plan, ledger, horizon=horizon)
        return {
            "start_step": start_step,
            "horizon": trace.horizon,
            "predictions": {k: v.tolist() for k, v in trace.predictions.items()},
            "predicted_reactivity_pcm": (
                np.asarray(trace.predictions["reactivity"]) / 1e-5
            ).tolist(),
        }

    # ------------------------------------------------------------- replay

    def fingerprint(self) -> str:
        with self.lock:
            return self.state.fingerprint()

    @classmethod
    def replay(cls, cfg: CoreConfig, events: list[SessionEvent]) -> "Session":
        """Rebuild a session from its event log; noise seeds are derived
        from (session seed, step index), so the replay is bit-identical."""
        if not events or events[0].kind != "init":
            raise ValueError("event log must start with init")
        init = events[0].payload
        if init["config_checksum"] != cfg.checksum():
            raise ValueError("event log was recorded under a different calibration")
        session = cls(cfg, seed=init["seed"], start=init["start"], noise=init["noise"])
        for event in events[1:]:
            if event.kind == "set_controls":
                session.set_controls(event.payload)
            elif event.kind == "step":
                session.step(event.payload["n"])
            else:
                raise ValueError(f"unknown event {event.kind!r}")
        return session


class ControlValidationError(Exception):
    def __init__(self, errors: dict, index: int | None = None):
        self.errors = errors
        self.index = index
        super().__init__(f"invalid controls: {errors}")


class ModelsUnavailableError(Exception):
    pass


class NoDataError(Exception):
    pass


class RunInJob:
    """Controller-driven stepping of a live session in a background thread."""

    def __init__(
        self,
        session: Session,
        s: int = 40,
        max_steps: int = 400,
        predictor_kind: str = "lstm",
        tolerance_pcm: float = 50.0,
    ):
        self.session = session
        self.goals = GoalSchedule(min_perturbations=s, tolerance_pcm=tolerance_pcm)
        self.max_steps = max_steps
        self.predictor_kind = predictor_kind
        self.indices = self.goals.start_indices()
        self.running = False
        self.abort_requested = False
        self.steps_taken = 0
        self.finished = False
        self.reached_goals = False
        self.error: str | None = None
        self.records: list[dict] = []
        self._thread: threading.Thread | None = None

    def _make_predictor(self):
        if self.predictor_kind == "oracle":
            return OracleStubPredictor(self.session.cfg)
        if not self.session.models:
            raise ModelsUnavailableError("run-in needs trained models")
        ledger = FuelLedger.from_state(self.session.state)
        predictor = LstmReactivityPredictor(self.session.models, ledger)
        for row in self.session.feature_history()[-8:]:
            predictor.observe(row, None)
        return predictor

    def start(self):
        predictor = self._make_predictor()
        self.running = True

        def loop():
            try:
                while (
                    not self.abort_requested
                    and self.steps_taken < self.max_steps
                    and not self.goals.at_goal(self.indices)
                ):
                    with self.session.lock:
                        predictor.bind(self.session.state)
                        if hasattr(predictor, "rows"):
                            hist = self.session.feature_history()
                            if hist.shape[0] < 8:
                                raise NoDataError("need 8 steps of history")
                            predictor.rows = [r for r in hist[-8:]]
                        decision = choose_controls(predictor, self.goals, self.indices)
                        self.indices = decision.indices
                        self.session.set_controls(decision.controls.as_dict())
                        record = self.session.step(1)[0]
                        record["predicted_reactivity_pcm"] = (
                            decision.predicted_rho / 1e-5
                        )
                        record["runin_indices"] = dict(decision.indices)
                        self.records.append(record)
                    self.steps_taken += 1
                self.reached_goals = self.goals.at_goal(self.indices)
            except Exception as exc:  # surfaced through status polling
                self.error = f"{type(exc).__name__}: {exc}"
            finally:
                self.running = False
                self.finished = True

        self._thread = threading.Thread(target=loop, daemon=True)
        self._thread.start()

    def abort(self):
        self.abort_requested = True

    def join(self, timeout=None):
        if self._thread:
            self._thread.join(timeout)

    def status(self) -> dict:
        return {
            "running": self.running,
            "finished": self.finished,
            "aborted": self.abort_requested,
            "reached_goals": self.reached_goals,
            "steps_taken": self.steps_taken,
            "indices": dict(self.indices),
            "error": self.error,
            "s": self.goals.min_perturbations,
            "last_records": self.records[-5:],
        }
