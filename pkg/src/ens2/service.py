"""HTTP gateway: upload datasets, launch searches, poll runs, fetch predictions.

Searches run asynchronously in a bounded worker pool; clients poll
`GET /api/v1/runs/{id}` and watch the phase advance through
queued -> searching -> search_complete -> predicting -> done (failed is
reachable from anywhere and terminal).  All state lives under one data
directory; there is no database.
"""

from __future__ import annotations

import os
import shutil
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, File, HTTPException, UploadFile
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import __version__
from .orchestrator import (
    STACKING,
    VOTING,
    SearchPlan,
    run_predict,
    run_search,
    worker_roster,
)
from .searchers import SEARCHER_KINDS
from .tabular import ParseError, parse_csv

PHASE_ORDER = {
    "queued": 0,
    "searching": 1,
    "search_complete": 2,
    "predicting": 3,
    "done": 4,
    "failed": 5,
}
DEFAULT_WORKER_KINDS = ("grid", "random", "halving")
LEADERBOARD_SIZE = 10


class RunCreate(BaseModel):
    dataset_id: str
    target: str
    budget_s: float = 10.0
    workers: list[str] | None = None
    k: int = 3
    mode: str = VOTING
    seed: int | None = None


class PredictCreate(BaseModel):
    dataset_id: str
    mode: str | None = None


@dataclass
class DatasetEntry:
    dataset_id: str
    path: Path
    filename: str
    n_rows: int
    columns: list[dict]


@dataclass
class RunState:
    run_id: str
    dataset_id: str
    target: str
    budget_s: float
    workers: tuple[tuple[str, str], ...]
    k: int
    mode: str
    seed: int
    phase: str = "queued"
    error: str | None = None
    started_at: float | None = None  # epoch seconds
    started_mono: float | None = None
    outcome: object = None
    leaderboard: list[dict] = field(default_factory=list)
    worker_status: dict[str, str] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    predict_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def advance(self, phase: str) -> None:
        """Move the phase forward; regressions are ignored, failed sticks."""
        with self._lock:
            if self.phase == "failed":
                return
            if phase == "failed" or PHASE_ORDER[phase] >= PHASE_ORDER[self.phase]:
                self.phase = phase


@dataclass
class PredictionState:
    prediction_id: str
    run_id: str
    dataset_id: str
    mode: str
    status: str = "pending"  # pending | running | done | failed
    error: str | None = None
    path: Path | None = None
    n_rows: int | None = None


class ServiceState:
    def __init__(self, data_dir: Path, base_seed: int, max_parallel_runs: int):
        self.data_dir = data_dir
        for sub in ("datasets", "runs", "predictions"):
            (data_dir / sub).mkdir(parents=True, exist_ok=True)
        self.base_seed = base_seed
        self.datasets: dict[str, DatasetEntry] = {}
        self.runs: dict[str, RunState] = {}
        self.predictions: dict[str, PredictionState] = {}
        self._counters = {"ds": 0, "run": 0, "pred": 0}
        self._lock = threading.Lock()
        self.pool = ThreadPoolExecutor(max_workers=max_parallel_runs)

    def next_id(self, kind: str) -> tuple[str, int]:
        with self._lock:
            self._counters[kind] += 1
            n = self._counters[kind]
        return f"{kind}-{n:04d}", n


def _execute_search(state: ServiceState, rs: RunState) -> None:
    rs.started_at = time.time()
    rs.started_mono = time.monotonic()
    rs.advance("searching")
    try:
        entry = state.datasets[rs.dataset_id]
        train = parse_csv(entry.path.read_bytes(), rs.target)
        plan = SearchPlan(
            workers=rs.workers,
            time_budget_s=rs.budget_s,
            seed=rs.seed,
            k_top=rs.k,
        )
        outcome = run_search(
            train, plan, state.data_dir / "runs" / rs.run_id, run_id=rs.run_id
        )
        rs.outcome = outcome
        rs.worker_status = dict(outcome.worker_status)
        rs.leaderboard = [
            {
                "pipeline_id": r.id,
                "searcher_id": r.searcher_id,
                "validation_score": r.validation_score,
            }
            for r in outcome.merged[:LEADERBOARD_SIZE]
        ]
        rs.advance("search_complete")
    except Exception as exc:
        rs.error = str(exc)
        rs.worker_status = {sid: "failed" for sid, _ in rs.workers}
        rs.advance("failed")


def _execute_predict(state: ServiceState, rs: RunState, ps: PredictionState) -> None:
    ps.status = "running"
    rs.advance("predicting")
    try:
        entry = state.datasets[ps.dataset_id]
        test = parse_csv(entry.path.read_bytes(), None)
        with rs.predict_lock:  # one prediction at a time per run directory
            result = run_predict(rs.outcome, test, mode=ps.mode)
            final = state.data_dir / "predictions" / f"{ps.prediction_id}.csv"
            shutil.copyfile(result.final_path, final)
        ps.path = final
        ps.n_rows = len(result.labels)
        ps.status = "done"
        rs.advance("done")
    except Exception as exc:
        ps.error = str(exc)
        ps.status = "failed"


def create_app(
    data_dir: str | Path | None = None,
    base_seed: int = 0,
    max_parallel_runs: int = 2,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    if data_dir is None:
        data_dir = os.environ.get("ENS2_DATA_DIR")
    if data_dir is None:
        data_dir = tempfile.mkdtemp(prefix="ens2-data-")
    state = ServiceState(Path(data_dir), base_seed, max_parallel_runs)

    app = FastAPI(title="ens2 gateway", version=__version__)
    app.state.ens2 = state

    @app.post("/api/v1/datasets")
    async def upload_dataset(file: UploadFile = File(...)):
        data = await file.read()
        try:
            parsed = parse_csv(data, None)
        except ParseError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        dataset_id, _ = state.next_id("ds")
        path = state.data_dir / "datasets" / f"{dataset_id}.csv"
        path.write_bytes(data)
        entry = DatasetEntry(
            dataset_id=dataset_id,
            path=path,
            filename=file.filename or "upload.csv",
            n_rows=parsed.n_rows,
            columns=[
                {"name": name, "kind": kind} for name, kind in parsed.schema.columns
            ],
        )
        state.datasets[dataset_id] = entry
        return {
            "dataset_id": dataset_id,
            "filename": entry.filename,
            "n_rows": entry.n_rows,
            "columns": entry.columns,
        }

    @app.post("/api/v1/runs")
    def create_run(body: RunCreate):
        entry = state.datasets.get(body.dataset_id)
        if entry is None:
            raise HTTPException(status_code=404, detail="unknown dataset_id")
        if body.target not in [c["name"] for c in entry.columns]:
            raise HTTPException(
                status_code=422, detail=f"target {body.target!r} not in dataset columns"
            )
        if body.budget_s <= 0:
            raise HTTPException(status_code=422, detail="budget_s must be positive")
        if body.mode not in (VOTING, STACKING):
            raise HTTPException(status_code=422, detail=f"unknown mode {body.mode!r}")
        if body.k < 1:
            raise HTTPException(status_code=422, detail="k must be at least 1")
        kinds = body.workers or list(DEFAULT_WORKER_KINDS)
        unknown = [k for k in kinds if k not in SEARCHER_KINDS]
        if unknown:
            raise HTTPException(
                status_code=422, detail=f"unknown worker kinds: {unknown}"
            )
        run_id, n = state.next_id("run")
        seed = body.seed if body.seed is not None else state.base_seed + n
        rs = RunState(
            run_id=run_id,
            dataset_id=body.dataset_id,
            target=body.target,
            budget_s=body.budget_s,
            workers=worker_roster(kinds),
            k=body.k,
            mode=body.mode,
            seed=seed,
        )
        rs.worker_status = {sid: "running" for sid, _ in rs.workers}
        state.runs[run_id] = rs
        state.pool.submit(_execute_search, state, rs)
        return {"run_id": run_id, "phase": rs.phase, "seed": seed}

    @app.get("/api/v1/runs/{run_id}")
    def run_status(run_id: str):
        rs = state.runs.get(run_id)
        if rs is None:
            raise HTTPException(status_code=404, detail="unknown run_id")
        elapsed = (
            time.monotonic() - rs.started_mono if rs.started_mono is not None else 0.0
        )
        return {
            "run_id": rs.run_id,
            "phase": rs.phase,
            "started_at": rs.started_at,
            "elapsed_s": elapsed,
            "budget_s": rs.budget_s,
            "mode": rs.mode,
            "k": rs.k,
            "seed": rs.seed,
            "workers": rs.worker_status,
            "leaderboard": rs.leaderboard,
            "error": rs.error,
        }

    @app.post("/api/v1/runs/{run_id}/predict")
    def create_prediction(run_id: str, body: PredictCreate):
        rs = state.runs.get(run_id)
        if rs is None:
            raise HTTPException(status_code=404, detail="unknown run_id")
        if body.dataset_id not in state.datasets:
            raise HTTPException(status_code=404, detail="unknown dataset_id")
        if rs.phase in ("queued", "searching"):
            raise HTTPException(status_code=409, detail="search not complete")
        if rs.phase == "failed":
            raise HTTPException(status_code=409, detail="run failed, cannot predict")
        mode = body.mode or rs.mode
        if mode not in (VOTING, STACKING):
            raise HTTPException(status_code=422, detail=f"unknown mode {mode!r}")
        prediction_id, _ = state.next_id("pred")
        ps = PredictionState(
            prediction_id=prediction_id,
            run_id=run_id,
            dataset_id=body.dataset_id,
            mode=mode,
        )
        state.predictions[prediction_id] = ps
        state.pool.submit(_execute_predict, state, rs, ps)
        return {"prediction_id": prediction_id, "status": ps.status}

    @app.get("/api/v1/predictions/{prediction_id}")
    def prediction_status(prediction_id: str):
        ps = state.predictions.get(prediction_id)
        if ps is None:
            raise HTTPException(status_code=404, detail="unknown prediction_id")
        return {
            "prediction_id": ps.prediction_id,
            "run_id": ps.run_id,
            "mode": ps.mode,
            "status": ps.status,
            "n_rows": ps.n_rows,
            "error": ps.error,
        }

    @app.get("/api/v1/predictions/{prediction_id}/file")
    def prediction_file(prediction_id: str):
        ps = state.predictions.get(prediction_id)
        if ps is None:
            raise HTTPException(status_code=404, detail="unknown prediction_id")
        if ps.status != "done" or ps.path is None:
            raise HTTPException(status_code=404, detail="prediction not ready")
        return FileResponse(
            ps.path, media_type="text/csv", filename=f"{prediction_id}.csv"
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
