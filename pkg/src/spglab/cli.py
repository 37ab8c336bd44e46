"""Command-line front end.

Five subcommands: verify (self-check suites), baseline / retrain / nas
(training runs driven by a config file), and report (aggregate finished run
directories). Every run writes a canonical config echo next to its outputs,
so any artifact can be reproduced from the echo plus the seed alone.

By default everything executes in-process. With --server URL the same
subcommand is sent to a running service instance instead; outputs and exit
codes stay the same.

Exit codes: 0 success, 2 configuration or usage error, 3 verification
failure, 4 run failure, 5 report failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .report import ReportError, run_report
from .runs import execute_run, resolve_cache_dir, resolve_out_dir
from .training import RunError
from .verify import (DEFAULT_MAX_HORIZON, SuiteResult, render_suite_table,
                     run_suites, write_records, write_summary)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_RUN = 4
EXIT_REPORT = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spglab",
        description="sequential policy-gradient training laboratory")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    verify = sub.add_parser("verify", help="run the self-check suites")
    verify.add_argument("--max-t", dest="max_t", type=int,
                        default=DEFAULT_MAX_HORIZON, metavar="N",
                        help="largest horizon to enumerate exhaustively (1..8)")
    verify.add_argument("--out", metavar="DIR",
                        help="write per-pattern records and a summary here")
    verify.add_argument("--quiet", action="store_true",
                        help="print only the final verdict")
    verify.add_argument("--server", metavar="URL",
                        help="send the request to a running service")

    for mode, blurb in (("baseline", "train a cross-entropy baseline"),
                        ("retrain", "retrain a baseline through a replica chain"),
                        ("nas", "depth search: retrain with the depth-variant chain")):
        cmd = sub.add_parser(mode, help=blurb)
        cmd.add_argument("--config", required=True, metavar="PATH",
                         help="config file (key = value sections)")
        cmd.add_argument("--out", metavar="DIR",
                         help="run directory (default: $SPG_OUT or ./runs, "
                              "plus <mode>-seed<N>)")
        cmd.add_argument("--seed", type=int, metavar="N",
                         help="override the configured seed")
        cmd.add_argument("--quiet", action="store_true",
                         help="suppress per-epoch progress lines")
        cmd.add_argument("--server", metavar="URL",
                         help="send the run to a running service")

    report = sub.add_parser("report", help="aggregate finished run directories")
    report.add_argument("run_dirs", nargs="+", metavar="RUN_DIR")
    report.add_argument("--out", metavar="DIR",
                        help="also write report.txt and report.json here")
    report.add_argument("--quiet", action="store_true",
                        help="write files only, print nothing")
    report.add_argument("--server", metavar="URL",
                        help="send the request to a running service")
    return parser


# --- in-process execution ---------------------------------------------------


def _cmd_verify(args: argparse.Namespace) -> int:
    if args.server:
        return _remote_verify(args)
    try:
        ok, suites, report = run_suites(args.max_t)
    except ValueError as exc:
        print(f"verify: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet:
        print(render_suite_table(suites), end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_records(report, os.path.join(args.out, "verify_records.jsonl"))
        write_summary(report, os.path.join(args.out, "verify_summary.json"))
    print(f"verify: {'PASS' if ok else 'FAIL'} "
          f"({sum(s.ok for s in suites)}/{len(suites)} suites, "
          f"{report.patterns_checked} patterns)")
    return EXIT_OK if ok else EXIT_VERIFY


def _summary_line(mode: str, summary: dict, out_dir: str) -> str:
    parts = [f"{mode}: test accuracy {summary['test_accuracy']:.4f}"]
    if "baseline_test_accuracy" in summary:
        parts.append(f"baseline {summary['baseline_test_accuracy']:.4f}")
        parts.append(f"delta {summary['accuracy_delta']:+.4f}")
    parts.append(f"-> {out_dir}")
    return "  ".join(parts)


def _cmd_run(args: argparse.Namespace) -> int:
    if args.server:
        return _remote_run(args)
    mode = args.subcommand
    try:
        cfg = load_config(args.config, mode=mode)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = resolve_out_dir(args.out, mode, cfg.seed)
    try:
        summary = execute_run(mode, cfg, out_dir, quiet=args.quiet,
                              cache_dir=resolve_cache_dir())
    except (RunError, CheckpointError, OSError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN
    print(_summary_line(mode, summary, out_dir))
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    if args.server:
        return _remote_report(args)
    try:
        result = run_report(args.run_dirs, args.out)
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_REPORT
    if not args.quiet:
        print(result.text, end="")
    return EXIT_OK


# --- thin client ------------------------------------------------------------


def _post(server: str, path: str, payload: dict, timeout: Optional[float]):
    import httpx
    url = server.rstrip("/") + path
    return httpx.post(url, json=payload, timeout=timeout)


def _remote_verify(args: argparse.Namespace) -> int:
    resp = _post(args.server, "/verify", {"max_horizon": args.max_t}, 600.0)
    if resp.status_code != 200:
        print(f"server error {resp.status_code}: {resp.text}", file=sys.stderr)
        return EXIT_VERIFY
    body = resp.json()
    suites = [SuiteResult(s["name"], s["ok"], s["detail"], s["seconds"])
              for s in body["suites"]]
    if not args.quiet:
        print(render_suite_table(suites), end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify_summary.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(body["summary"], fh, sort_keys=True, indent=2)
            fh.write("\n")
    verdict = "PASS" if body["ok"] else "FAIL"
    print(f"verify: {verdict} ({sum(s.ok for s in suites)}/{len(suites)} suites, "
          f"{body['summary']['patterns_checked']} patterns)")
    return EXIT_OK if body["ok"] else EXIT_VERIFY


def _remote_run(args: argparse.Namespace) -> int:
    mode = args.subcommand
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            config_text = fh.read()
    except OSError as exc:
        print(f"config error: cannot read '{args.config}': {exc}", file=sys.stderr)
        return EXIT_CONFIG
    check = _post(args.server, "/config/check",
                  {"text": config_text, "mode": mode}, 60.0)
    if check.status_code == 200 and not check.json()["ok"]:
        print(f"config error: {check.json()['error']}", file=sys.stderr)
        return EXIT_CONFIG
    payload = {"mode": mode, "config_text": config_text, "seed": args.seed,
               "out_dir": args.out, "quiet": args.quiet, "wait": True}
    resp = _post(args.server, "/runs", payload, None)
    if resp.status_code != 200:
        print(f"run error: {resp.text}", file=sys.stderr)
        return EXIT_RUN
    status = resp.json()
    print(_summary_line(mode, status["summary"], status["out_dir"]))
    return EXIT_OK


def _remote_report(args: argparse.Namespace) -> int:
    resp = _post(args.server, "/report",
                 {"run_dirs": args.run_dirs, "out_dir": args.out}, 600.0)
    if resp.status_code != 200:
        print(f"report error: {resp.text}", file=sys.stderr)
        return EXIT_REPORT
    if not args.quiet:
        print(resp.json()["text"], end="")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"verify": _cmd_verify, "baseline": _cmd_run,
                "retrain": _cmd_run, "nas": _cmd_run, "report": _cmd_report}
    handler = handlers[args.subcommand]
    if args.server:
        try:
            return handler(args)
        except Exception as exc:  # connection refused, timeouts, bad JSON
            print(f"server error: {exc}", file=sys.stderr)
            return EXIT_RUN
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
