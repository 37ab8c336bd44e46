"""Shared run orchestration for the command line and the service.

Both front ends resolve output directories the same way: an explicit path
wins, then the SPG_OUT environment variable as the output root, then ./runs.
Dataset caches live under the same root so repeated runs regenerate nothing.
"""

from __future__ import annotations

import os
from typing import Optional

from .config import TrainConfig
from .training import run_baseline, run_retrain

ENV_OUT = "SPG_OUT"
DEFAULT_ROOT = "runs"
RUN_MODES = ("baseline", "retrain", "nas")


def out_root(root: Optional[str] = None) -> str:
    return root or os.environ.get(ENV_OUT) or DEFAULT_ROOT


def resolve_out_dir(explicit: Optional[str], mode: str, seed: int,
                    root: Optional[str] = None) -> str:
    """Explicit path, else <root>/<mode>-seed<seed>."""
    if explicit:
        return explicit
    return os.path.join(out_root(root), f"{mode}-seed{seed}")


def resolve_cache_dir(root: Optional[str] = None) -> str:
    return os.path.join(out_root(root), "dataset-cache")


def execute_run(mode: str, cfg: TrainConfig, out_dir: Optional[str],
                quiet: bool = True, cache_dir: Optional[str] = None) -> dict:
    """Dispatch one training run; returns its summary dict."""
    if mode == "baseline":
        return run_baseline(cfg, out_dir, quiet=quiet, cache_dir=cache_dir)
    if mode in ("retrain", "nas"):
        return run_retrain(cfg, out_dir, quiet=quiet, cache_dir=cache_dir)
    raise ValueError(f"unknown run mode '{mode}' (expected one of {RUN_MODES})")
