"""HTTP surface for the operator console.

All responses carry step_index for client ordering; forecasts are pure
what-ifs; control mutations are validated with field-level errors against
the shared range table.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from ..config import CoreConfig
from .session import (
    ControlValidationError,
    ModelsUnavailableError,
    NoDataError,
    RunInJob,
    Session,
)


class ControlsBody(BaseModel):
    graphite_fraction: float
    power: float
    rod_depth: float
    timestep: float
    discard_threshold: float


class StepBody(BaseModel):
    n: int = Field(default=1, ge=1, le=500)


class ForecastBody(BaseModel):
    plan: list[ControlsBody]
    horizon: int | None = None


class RunInBody(BaseModel):
    s: int = Field(default=40, ge=1)
    max_steps: int = Field(default=400, ge=1, le=2000)
    predictor: str = Field(default="lstm", pattern="^(lstm|oracle)$")
    tolerance_pcm: float = Field(default=50.0, gt=0.0)


def create_app(session: Session) -> FastAPI:
    app = FastAPI(title="pbrtwin operator service", version="0.1.0")
    app.state.session = session

    @app.get("/state")
    def get_state():
        return session.state_summary()

    @app.post("/controls")
    def post_controls(body: ControlsBody):
        try:
            applied = session.set_controls(body.model_dump())
        except ControlValidationError as exc:
            raise HTTPException(status_code=400, detail={"errors": exc.errors})
        return {"step_index": session.state.step_index, "controls": applied}

    @app.post("/step")
    def post_step(body: StepBody):
        records = session.step(body.n)
        return {"step_index": session.state.step_index, "records": records}

    @app.post("/forecast")
    def post_forecast(body: ForecastBody):
        try:
            result = session.run_forecast(
                [c.model_dump() for c in body.plan], body.horizon
            )
        except ModelsUnavailableError as exc:
            raise HTTPException(status_code=409, detail="models unavailable")
        except ControlValidationError as exc:
            raise HTTPException(
                status_code=400,
                detail={"errors": exc.errors, "plan_index": exc.index},
            )
        except (NoDataError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return result

    @app.get("/history")
    def get_history(start: int = 0):
        with session.lock:
            records = [r for r in session.history if r["step_index"] > start]
            return {"step_index": session.state.step_index, "records": records}

    @app.get("/meshes/latest")
    def get_meshes():
        try:
            return session.meshes_latest()
        except NoDataError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/runin/start")
    def runin_start(body: RunInBody):
        with session.lock:
            if session.runin_job and session.runin_job.running:
                raise HTTPException(status_code=409, detail="run-in already active")
            job = RunInJob(
                session,
                s=body.s,
                max_steps=body.max_steps,
                predictor_kind=body.predictor,
                tolerance_pcm=body.tolerance_pcm,
            )
            try:
                job.start()
            except ModelsUnavailableError:
                raise HTTPException(status_code=409, detail="models unavailable")
            session.runin_job = job
        return {"step_index": session.state.step_index, "status": job.status()}

    @app.get("/runin/status")
    def runin_status():
        job = session.runin_job
        if job is None:
            return {"step_index": session.state.step_index, "status": None}
        return {"step_index": session.state.step_index, "status": job.status()}

    @app.post("/runin/abort")
    def runin_abort():
        job = session.runin_job
        if job is None or not job.running:
            raise HTTPException(status_code=409, detail="no active run-in")
        job.abort()
        job.join(timeout=30.0)
        return {"step_index": session.state.step_index, "status": job.status()}

    @app.get("/ranges")
    def get_ranges():
        from ..coresim import control_ranges

        return control_ranges()

    return app


def serve(
    cfg: CoreConfig,
    host: str = "127.0.0.1",
    port: int = 8151,
    seed: int = 0,
    start: str = "equilibrium",
    models: dict | None = None,
    warmup_steps: int = 8,
):
    import uvicorn

    session = Session(cfg, seed=seed, start=start, models=models)
    if warmup_steps:
        session.step(warmup_steps)
    app = create_app(session)
    uvicorn.run(app, host=host, port=port, log_level="info")
