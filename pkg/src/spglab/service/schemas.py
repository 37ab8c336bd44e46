"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field

RunMode = Literal["baseline", "retrain", "nas"]
RunState = Literal["running", "done", "failed"]


class HealthResponse(BaseModel):
    status: str
    version: str


class VerifyRequest(BaseModel):
    max_horizon: int = Field(4, ge=1, le=8,
                             description="largest replica-chain horizon to enumerate")


class SuiteRow(BaseModel):
    name: str
    ok: bool
    detail: str
    seconds: float


class VerifyResponse(BaseModel):
    ok: bool
    suites: List[SuiteRow]
    summary: dict


class ConfigCheckRequest(BaseModel):
    text: str
    mode: Optional[RunMode] = None


class ConfigCheckResponse(BaseModel):
    ok: bool
    rendered: Optional[str] = None
    error: Optional[str] = None


class RunRequest(BaseModel):
    mode: RunMode
    config_text: str
    seed: Optional[int] = Field(None, ge=0)
    out_dir: Optional[str] = None
    quiet: bool = True
    wait: bool = Field(True, description="run inline; false returns "
                                         "immediately and the run continues "
                                         "on a worker thread")


class RunStatus(BaseModel):
    run_id: str
    state: RunState
    mode: RunMode
    out_dir: str
    summary: Optional[dict] = None
    error: Optional[str] = None


class RunList(BaseModel):
    runs: List[RunStatus]


class ReportRequest(BaseModel):
    run_dirs: List[str] = Field(..., min_length=1)
    out_dir: Optional[str] = None


class ReportResponse(BaseModel):
    text: str
    data: dict
    missing: List[Dict[str, str]]
