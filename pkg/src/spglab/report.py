"""Reports over finished run directories.

A run directory is whatever the trainer emitted: metrics.jsonl (one record
per epoch and split), summary.json, timing.jsonl, config_echo.cfg and a
checkpoints/ folder. The report renders the per-epoch trajectory as an
aligned table, compares runs, and aggregates final metrics across seeds as
mean and population standard deviation. Directories without usable metrics
are listed and the rest of the report still goes out (partial reports are
deliberate: a sweep with one crashed run should still be readable).

Besides the plain-text table the same content is available as a plain dict
(and on disk as report.json) for downstream tooling.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .training import read_metrics

#: Final-record metrics that aggregate across seeds.
AGGREGATE_KEYS = ("test_accuracy", "test_loss", "baseline_test_accuracy",
                  "stripped_test_accuracy", "accuracy_delta")


class ReportError(RuntimeError):
    """Raised when a run directory cannot be reported on."""


@dataclass
class RunData:
    path: str
    records: List[dict]
    summary: Optional[dict]

    @property
    def name(self) -> str:
        return os.path.basename(os.path.normpath(self.path)) or self.path


def load_run(run_dir: str) -> RunData:
    metrics_path = os.path.join(run_dir, "metrics.jsonl")
    if not os.path.isfile(metrics_path):
        raise ReportError(f"no metrics.jsonl under '{run_dir}'")
    records = read_metrics(metrics_path)
    if not records:
        raise ReportError(f"'{metrics_path}' holds no records")
    summary = None
    summary_path = os.path.join(run_dir, "summary.json")
    if os.path.isfile(summary_path):
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
    return RunData(path=run_dir, records=records, summary=summary)


def _table(headers: List[str], rows: List[List[str]]) -> List[str]:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return lines


def _survival_cell(survival: Optional[List[float]]) -> str:
    if not survival:
        return "-"
    return "/".join(f"{s:.2f}" for s in survival)


def render_run(run: RunData) -> List[str]:
    lines = [f"run: {run.name}"]
    if run.summary:
        s = run.summary
        bits = [f"kind={s.get('kind', '?')}", f"task={s.get('task_kind', '?')}",
                f"seed={s.get('seed', '?')}", f"epochs={s.get('epochs', '?')}"]
        if "replicas" in s:
            bits.append(f"replicas={s['replicas']}")
        if "variant" in s:
            bits.append(f"variant={s['variant']}")
        lines.append("  " + "  ".join(bits))
    train = {r["epoch"]: r for r in run.records if r["split"] == "train"}
    val = {r["epoch"]: r for r in run.records if r["split"] == "val"}
    rows = []
    for epoch in sorted(train):
        tr = train[epoch]
        vr = val.get(epoch, {})
        rows.append([
            str(epoch),
            tr.get("phase", "-"),
            f"{tr['loss']:.4f}",
            f"{tr['accuracy']:.4f}",
            f"{vr['accuracy']:.4f}" if "accuracy" in vr else "-",
            f"{tr.get('mean_step_length', 1.0):.2f}",
            _survival_cell(tr.get("survival")),
            f"{tr.get('lr', 0.0):.2e}",
        ])
    if rows:
        lines.append("")
        lines.extend("  " + line for line in _table(
            ["epoch", "phase", "loss", "train-acc", "val-acc", "steps",
             "survival", "lr"], rows))
    test = [r for r in run.records if r["split"] == "test"]
    if test:
        t = test[-1]
        lines.append("")
        lines.append(f"  test accuracy {t['accuracy']:.4f}  test loss {t['loss']:.4f}")
        if "iou" in t:
            lines.append("  per-class IoU " + "/".join(f"{x:.3f}" for x in t["iou"]))
        if "clean_accuracy" in t:
            lines.append(f"  clean-token accuracy {t['clean_accuracy']:.4f}")
    if run.summary and "baseline_test_accuracy" in run.summary:
        s = run.summary
        lines.append(f"  baseline {s['baseline_test_accuracy']:.4f} -> "
                     f"stripped {s['stripped_test_accuracy']:.4f} "
                     f"(delta {s['accuracy_delta']:+.4f})")
    return lines


def _run_final_metrics(run: RunData) -> Dict[str, float]:
    """The final metrics of one run: summary values where present, the last
    test record otherwise."""
    out: Dict[str, float] = {}
    source = run.summary or {}
    for key in AGGREGATE_KEYS:
        if key in source and isinstance(source[key], (int, float)):
            out[key] = float(source[key])
    if "test_accuracy" not in out:
        test = [r for r in run.records if r["split"] == "test"]
        if test:
            out["test_accuracy"] = float(test[-1]["accuracy"])
            out["test_loss"] = float(test[-1]["loss"])
    return out


def aggregate_runs(runs: List[RunData]) -> Dict[str, dict]:
    """Group runs by kind; per metric report count, mean, and population
    standard deviation (divide by n, not n-1)."""
    by_kind: Dict[str, List[Dict[str, float]]] = {}
    for run in runs:
        kind = str((run.summary or {}).get("kind", "unknown"))
        by_kind.setdefault(kind, []).append(_run_final_metrics(run))
    aggregate: Dict[str, dict] = {}
    for kind, rows in sorted(by_kind.items()):
        stats: Dict[str, dict] = {}
        for key in AGGREGATE_KEYS:
            values = [row[key] for row in rows if key in row]
            if not values:
                continue
            n = len(values)
            mean = sum(values) / n
            var = sum((v - mean) ** 2 for v in values) / n
            stats[key] = {"count": n, "mean": mean, "std": math.sqrt(var)}
        aggregate[kind] = stats
    return aggregate


@dataclass
class ReportResult:
    text: str
    data: dict
    missing: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing


def render_report(runs: List[RunData],
                  missing: Optional[List[Tuple[str, str]]] = None) -> str:
    lines: List[str] = []
    for i, run in enumerate(runs):
        if i:
            lines.append("")
        lines.extend(render_run(run))
    if len(runs) > 1:
        rows = []
        for run in runs:
            s = run.summary or {}
            test = [r for r in run.records if r["split"] == "test"]
            acc = f"{test[-1]['accuracy']:.4f}" if test else "-"
            delta = (f"{s['accuracy_delta']:+.4f}"
                     if "accuracy_delta" in s else "-")
            rows.append([run.name, str(s.get("kind", "?")),
                         str(s.get("seed", "?")), acc, delta])
        lines.append("")
        lines.append("comparison")
        lines.extend("  " + line for line in _table(
            ["run", "kind", "seed", "test-acc", "delta"], rows))
        lines.append("")
        lines.append("aggregate (mean +/- std over runs, std divides by n)")
        for kind, stats in aggregate_runs(runs).items():
            for key, st in stats.items():
                lines.append(f"  {kind:>10s}  {key:<24s} "
                             f"{st['mean']:.4f} +/- {st['std']:.4f} "
                             f"(n={st['count']})")
    if missing:
        lines.append("")
        lines.append("skipped (no usable metrics)")
        for path, err in missing:
            lines.append(f"  {path}: {err}")
    return "\n".join(lines) + "\n"


def build_report(run_dirs: List[str]) -> ReportResult:
    """Load every directory, skipping (and listing) the unusable ones."""
    if not run_dirs:
        raise ReportError("no run directories given")
    runs: List[RunData] = []
    missing: List[Tuple[str, str]] = []
    for d in run_dirs:
        try:
            runs.append(load_run(d))
        except (ReportError, json.JSONDecodeError, OSError) as exc:
            missing.append((d, str(exc)))
    if not runs:
        raise ReportError(
            "no usable runs among: " + "; ".join(f"{p} ({e})" for p, e in missing))
    data = {
        "schema": 1,
        "runs": [dict(_run_final_metrics(r), path=r.path,
                      kind=str((r.summary or {}).get("kind", "unknown")),
                      seed=(r.summary or {}).get("seed"))
                 for r in runs],
        "aggregate": aggregate_runs(runs),
        "missing": [{"path": p, "error": e} for p, e in missing],
    }
    return ReportResult(text=render_report(runs, missing), data=data,
                        missing=missing)


def run_report(run_dirs: List[str], out_dir: Optional[str] = None) -> ReportResult:
    """Build the report; with out_dir, also write report.txt and
    report.json there."""
    result = build_report(run_dirs)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(result.text)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(result.data, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return result

