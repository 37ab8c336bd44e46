"""FastAPI application exposing the laboratory over HTTP.

Endpoints mirror the command line one to one: /verify runs the self-check
battery, /runs starts training runs (inline by default, or on a worker
thread with wait=false plus polling via GET /runs/{id}), /report aggregates
finished run directories, and /config/check validates configuration text
without running anything.

Each training run is single-threaded; the registry only hands out ids and
tracks state, so concurrent runs never share mutable training state.
"""

from __future__ import annotations

import threading
from typing import Dict, List, Optional

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..checkpoint import CheckpointError
from ..config import ConfigError, parse_config, render_config
from ..report import ReportError, run_report
from ..runs import execute_run, resolve_cache_dir, resolve_out_dir
from ..training import RunError
from ..verify import run_suites
from .schemas import (ConfigCheckRequest, ConfigCheckResponse, HealthResponse,
                      ReportRequest, ReportResponse, RunList, RunRequest,
                      RunStatus, SuiteRow, VerifyRequest, VerifyResponse)

RUN_FAILURES = (ConfigError, RunError, CheckpointError, ReportError, OSError)


class RunRegistry:
    """Thread-safe table of started runs."""

    def __init__(self):
        self._lock = threading.Lock()
        self._runs: Dict[str, dict] = {}
        self._next = 1

    def create(self, mode: str, out_dir: str) -> str:
        with self._lock:
            run_id = f"run-{self._next:04d}"
            self._next += 1
            self._runs[run_id] = {"run_id": run_id, "state": "running",
                                  "mode": mode, "out_dir": out_dir,
                                  "summary": None, "error": None}
            return run_id

    def finish(self, run_id: str, summary: dict) -> None:
        with self._lock:
            self._runs[run_id].update(state="done", summary=summary)

    def fail(self, run_id: str, error: str) -> None:
        with self._lock:
            self._runs[run_id].update(state="failed", error=error)

    def get(self, run_id: str) -> Optional[dict]:
        with self._lock:
            record = self._runs.get(run_id)
            return dict(record) if record else None

    def list(self) -> List[dict]:
        with self._lock:
            return [dict(r) for r in self._runs.values()]


def _parse_run_config(req: RunRequest):
    cfg = parse_config(req.config_text, source="<request>", mode=req.mode)
    if req.seed is not None:
        cfg = cfg.with_seed(req.seed)
    return cfg


def create_app() -> FastAPI:
    app = FastAPI(title="spglab", version=__version__,
                  description="Sequential policy-gradient training laboratory")
    registry = RunRegistry()
    app.state.registry = registry

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest) -> VerifyResponse:
        ok, suites, report = run_suites(req.max_horizon, collect_records=False)
        return VerifyResponse(
            ok=ok,
            suites=[SuiteRow(name=s.name, ok=s.ok, detail=s.detail,
                             seconds=s.seconds) for s in suites],
            summary=report.summary())

    @app.post("/config/check", response_model=ConfigCheckResponse)
    def config_check(req: ConfigCheckRequest) -> ConfigCheckResponse:
        try:
            cfg = parse_config(req.text, source="<request>", mode=req.mode)
        except ConfigError as exc:
            return ConfigCheckResponse(ok=False, error=str(exc))
        return ConfigCheckResponse(ok=True, rendered=render_config(cfg))

    @app.post("/runs", response_model=RunStatus)
    def start_run(req: RunRequest) -> RunStatus:
        try:
            cfg = _parse_run_config(req)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        out_dir = resolve_out_dir(req.out_dir, req.mode, cfg.seed)
        cache_dir = resolve_cache_dir()
        run_id = registry.create(req.mode, out_dir)

        def execute() -> dict:
            return execute_run(req.mode, cfg, out_dir, quiet=req.quiet,
                               cache_dir=cache_dir)

        if req.wait:
            try:
                summary = execute()
            except RUN_FAILURES as exc:
                registry.fail(run_id, str(exc))
                raise HTTPException(status_code=400, detail=str(exc))
            registry.finish(run_id, summary)
            return RunStatus(**registry.get(run_id))

        def worker() -> None:
            try:
                registry.finish(run_id, execute())
            except Exception as exc:
                registry.fail(run_id, str(exc))

        threading.Thread(target=worker, name=run_id, daemon=True).start()
        return RunStatus(**registry.get(run_id))

    @app.get("/runs", response_model=RunList)
    def list_runs() -> RunList:
        return RunList(runs=[RunStatus(**r) for r in registry.list()])

    @app.get("/runs/{run_id}", response_model=RunStatus)
    def get_run(run_id: str) -> RunStatus:
        record = registry.get(run_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown run '{run_id}'")
        return RunStatus(**record)

    @app.post("/report", response_model=ReportResponse)
    def report(req: ReportRequest) -> ReportResponse:
        try:
            result = run_report(req.run_dirs, req.out_dir)
        except ReportError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return ReportResponse(
            text=result.text, data=result.data,
            missing=[{"path": p, "error": e} for p, e in result.missing])

    return app


app = create_app()
