"""HTTP service wrapping one virtual apparatus: session management, a
serialized experiment queue, live streaming of per-point results and
flat-file dataset persistence.

Jobs run on a single worker thread, so exactly one experiment touches
the apparatus at any instant; direct apparatus commands are rejected
with 409 while a job is running.  The live stream is a chunked response
of JSON lines {type, job_id, payload}, ending with a terminal event.
"""

from __future__ import annotations

import json
import queue
import threading
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel, ConfigDict, Field

from . import config as cfgmod
from . import fitting as ft
from .datasets import Dataset
from .experiments import ExperimentError, ExperimentRunner, ExperimentSpec

JOB_STATES = ("queued", "running", "done", "cancelled", "failed")


class SpecModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str
    parameters: dict = Field(default_factory=dict)
    repetitions: int = 300_000
    seed: int = 0


class StagePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    position_um: list[float]


class MagnetPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    distance_mm: Optional[float] = None
    theta_deg: Optional[float] = None
    phi_deg: Optional[float] = None
    preset: Optional[str] = None


class LaserPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    power_uw: float
    mode: str = "cw"


class MwPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    frequency_hz: float
    power_dbm: Optional[float] = None
    rabi_hz: Optional[float] = None
    mode: str = "pattern"


class ApparatusPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    stage: Optional[StagePayload] = None
    magnet: Optional[MagnetPayload] = None
    laser: Optional[LaserPayload] = None
    mw: Optional[MwPayload] = None


class FitPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    model: str
    dataset_id: str


class JobRecord:
    HISTORY_LIMIT = 50_000

    def __init__(self, job_id: str, spec: ExperimentSpec):
        self.id = job_id
        self.spec = spec
        self.state = "queued"
        self.progress = 0.0
        self.dataset_id: Optional[str] = None
        self.error: Optional[str] = None
        self.cancel_event = threading.Event()
        self.subscribers: list[queue.Queue] = []
        self.history: list[dict] = []
        self.lock = threading.Lock()

    def set_state(self, state: str) -> None:
        order = {s: i for i, s in enumerate(JOB_STATES)}
        if order[state] < order[self.state] and state != self.state:
            raise RuntimeError(
                f"job state cannot move {self.state} -> {state}")
        self.state = state

    def push(self, event: dict) -> None:
        event = {"job_id": self.id, **event}
        with self.lock:
            if len(self.history) < self.HISTORY_LIMIT:
                self.history.append(event)
            for q in self.subscribers:
                q.put(event)

    def subscribe(self) -> queue.Queue:
        """Attach a stream consumer; the event history is replayed first
        so late subscribers still see every point (rendering upserts by
        index, so replays are idempotent)."""
        q: queue.Queue = queue.Queue()
        with self.lock:
            for event in self.history:
                q.put(event)
            self.subscribers.append(q)
        return q

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "spec": self.spec.to_dict(),
            "state": self.state,
            "progress": self.progress,
            "dataset_id": self.dataset_id,
            "error": self.error,
        }


class LabService:
    """Owns the apparatus, the job queue and the dataset store."""

    def __init__(self, cfg: dict, data_dir, auth_token: Optional[str] = None):
        self.cfg = cfg
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.auth_token = auth_token
        self.apparatus = cfgmod.build_apparatus(cfg)
        self.session = self.apparatus.session()
        self.cal = cfgmod.assumed_calibration(cfg)
        self.jobs: dict[str, JobRecord] = {}
        self.job_order: list[str] = []
        self._queue: "queue.Queue[str]" = queue.Queue()
        self._counter = 0
        self._lock = threading.Lock()
        self._running_job: Optional[str] = None
        self._worker = threading.Thread(target=self._work, daemon=True)
        self._stop = threading.Event()
        self._worker.start()

    def shutdown(self) -> None:
        self._stop.set()
        self._queue.put("")  # wake the worker
        self._worker.join(timeout=5)

    # -- job lifecycle

    def submit(self, spec: ExperimentSpec) -> JobRecord:
        with self._lock:
            self._counter += 1
            job_id = f"job-{self._counter:04d}"
        record = JobRecord(job_id, spec)
        self.jobs[job_id] = record
        self.job_order.append(job_id)
        self._queue.put(job_id)
        return record

    def cancel(self, job_id: str) -> JobRecord:
        record = self.jobs[job_id]
        record.cancel_event.set()
        if record.state == "queued":
            record.set_state("cancelled")
            record.push({"type": "state", "payload": "cancelled"})
        return record

    @property
    def busy(self) -> bool:
        return self._running_job is not None

    def _work(self) -> None:
        while not self._stop.is_set():
            try:
                job_id = self._queue.get(timeout=0.2)
            except queue.Empty:
                continue
            if not job_id or job_id not in self.jobs:
                continue
            record = self.jobs[job_id]
            if record.cancel_event.is_set():
                continue
            self._running_job = job_id
            record.set_state("running")
            record.push({"type": "state", "payload": "running"})
            try:
                runner = ExperimentRunner(
                    self.session, cal=self.cal,
                    progress=lambda ev: self._on_progress(record, ev),
                    cancel=record.cancel_event.is_set)
                dataset = runner.run(record.spec)
                dataset.save(self.data_dir)
                record.dataset_id = dataset.dataset_id
                was_cancelled = dataset.metadata.get("cancelled", False)
                record.set_state("cancelled" if was_cancelled else "done")
            except Exception as exc:  # noqa: BLE001 - reported to client
                record.error = f"{type(exc).__name__}: {exc}"
                record.set_state("failed")
            finally:
                self._running_job = None
                record.push({"type": "state", "payload": record.state,
                             "dataset_id": record.dataset_id,
                             "error": record.error})

    def _on_progress(self, record: JobRecord, event: dict) -> None:
        if event.get("type") in ("point", "pixels"):
            record.progress = (event["index"] + 1) / event["total"]
        record.push({"type": event.get("type", "progress"),
                     "payload": event})

    # -- datasets

    def load_dataset(self, dataset_id: str) -> Dataset:
        path = self.data_dir / f"{dataset_id}.json"
        if not path.exists():
            raise KeyError(dataset_id)
        return Dataset.load(path)


def create_app(cfg: Optional[dict] = None, data_dir="./nvlab-data",
               auth_token: Optional[str] = None) -> FastAPI:
    cfg = cfg if cfg is not None else cfgmod.default_config()
    service = LabService(cfg, data_dir, auth_token)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        service.shutdown()

    app = FastAPI(title="nvlab", version="0.1.0", lifespan=lifespan)
    app.state.service = service

    @app.exception_handler(RequestValidationError)
    async def bad_schema(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"error": "schema violation",
                                     "detail": exc.errors()})

    def check_auth(request: Request) -> None:
        if service.auth_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {service.auth_token}":
            raise HTTPException(status_code=401, detail="bad token")

    @app.get("/status")
    def status():
        return {
            "running_job": service._running_job,
            "queued": [j for j in service.job_order
                       if service.jobs[j].state == "queued"],
            "apparatus": service.apparatus.snapshot(),
        }

    @app.get("/apparatus")
    def get_apparatus():
        return service.apparatus.snapshot()

    @app.put("/apparatus", dependencies=[Depends(check_auth)])
    def put_apparatus(payload: ApparatusPayload):
        if service.busy:
            raise HTTPException(
                status_code=409,
                detail="apparatus is executing a job; cancel it first")
        ses = service.session
        try:
            if payload.stage is not None:
                ses.move_stage(payload.stage.position_um)
            if payload.magnet is not None:
                m = payload.magnet
                if m.preset:
                    ses.set_magnet_preset(m.preset)
                else:
                    current = service.apparatus.magnet
                    ses.set_magnet(
                        m.distance_mm if m.distance_mm is not None
                        else current.distance_mm,
                        m.theta_deg if m.theta_deg is not None
                        else current.theta_deg,
                        m.phi_deg if m.phi_deg is not None
                        else current.phi_deg)
            if payload.laser is not None:
                ses.set_laser(payload.laser.power_uw, payload.laser.mode)
            if payload.mw is not None:
                ses.set_mw(payload.mw.frequency_hz,
                           power_dbm=payload.mw.power_dbm,
                           rabi_frequency=payload.mw.rabi_hz,
                           mode=payload.mw.mode)
        except (ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return service.apparatus.snapshot()

    @app.post("/jobs", dependencies=[Depends(check_auth)])
    def post_job(payload: SpecModel):
        try:
            spec = ExperimentSpec(payload.kind, payload.parameters,
                                  payload.repetitions, payload.seed)
        except ExperimentError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        record = service.submit(spec)
        return {"id": record.id}

    @app.get("/jobs")
    def list_jobs():
        return [service.jobs[j].as_dict() for j in service.job_order]

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        if job_id not in service.jobs:
            raise HTTPException(status_code=404, detail="unknown job")
        return service.jobs[job_id].as_dict()

    @app.delete("/jobs/{job_id}", dependencies=[Depends(check_auth)])
    def delete_job(job_id: str):
        if job_id not in service.jobs:
            raise HTTPException(status_code=404, detail="unknown job")
        return service.cancel(job_id).as_dict()

    @app.get("/datasets/{dataset_id}")
    def get_dataset(dataset_id: str, format: str = "json"):
        try:
            ds = service.load_dataset(dataset_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown dataset")
        if format == "csv":
            return PlainTextResponse(ds.to_csv(), media_type="text/csv")
        return ds.to_dict()

    @app.get("/scan/live")
    def live(job: Optional[str] = None):
        job_id = job or service._running_job
        if job_id is None:
            for jid in reversed(service.job_order):
                if service.jobs[jid].state in ("queued", "running"):
                    job_id = jid
                    break
        if job_id is None or job_id not in service.jobs:
            raise HTTPException(status_code=404, detail="no active job")
        record = service.jobs[job_id]
        q = record.subscribe()  # replays history, incl. terminal events

        def stream():
            yield json.dumps({"type": "hello", "job_id": record.id,
                              "payload": record.as_dict()}) + "\n"
            while True:
                try:
                    event = q.get(timeout=30.0)
                except queue.Empty:
                    yield json.dumps({"type": "keepalive",
                                      "job_id": record.id}) + "\n"
                    continue
                yield json.dumps(event) + "\n"
                if event.get("type") == "state" and event.get("payload") in (
                        "done", "cancelled", "failed"):
                    break

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.post("/fit", dependencies=[Depends(check_auth)])
    def post_fit(payload: FitPayload):
        if payload.model not in ft.MODELS:
            raise HTTPException(
                status_code=400,
                detail=f"unknown model {payload.model!r}; have "
                       f"{sorted(ft.MODELS)}")
        try:
            ds = service.load_dataset(payload.dataset_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown dataset")
        try:
            result = ft.fit(ft.MODELS[payload.model], ds.x(), ds.y(),
                            sigma=None if ds.errors is None
                            else np.maximum(ds.errors, 1e-12))
        except ft.FitError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        out = result.as_dict()
        # the model curve is evaluated here so clients never do physics
        out["x"] = ds.axis
        out["y_fit"] = ft.MODELS[payload.model].fn(
            ds.x(), result.params).tolist()
        return out

    return app
