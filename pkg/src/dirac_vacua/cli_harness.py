"""Command-line entry point: ``dirac-vacua {run,verify,sweep,report}``.

Exit codes: 0 success, 1 a check or run failed, 2 invalid configuration or
arguments.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .config import Config, load
from .errors import ConfigError, DiracVacuaError
from .invariants import run_suite
from .spin_algebra import CliffordRep


def _load_config(args) -> Config:
    cfg = load(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        cfg = _reseed(cfg, args.seed)
    return cfg


def _reseed(cfg: Config, seed: int) -> Config:
    # with_overrides drops the sweep table, so carry it over explicitly
    sweep = dict(cfg.sweep)
    out = cfg.with_overrides({"run.seed": seed})
    out.sweep = sweep
    return out


def _print(obj) -> None:
    print(pipeline.dumps(obj))


def cmd_run(args) -> int:
    cfg = _load_config(args)
    try:
        outcome = pipeline.run(cfg, args.out, force=args.force)
    except DiracVacuaError as exc:
        stage = getattr(exc, "stage", None)
        print(f"run failed{f' in stage {stage}' if stage else ''}: {exc}", file=sys.stderr)
        return 1
    report = json.loads((outcome.run_dir / pipeline.REPORT).read_text())
    failed = sorted(k for k, c in report.get("checks", {}).items() if not c["passed"])
    _print({"run_dir": str(outcome.run_dir), "skipped": outcome.skipped,
            "results_hash": outcome.manifest["results_hash"], "summary": outcome.summary,
            "failed_checks": failed})
    return 1 if failed else 0


def verify(rep: CliffordRep | None = None, only=None, json_path=None) -> tuple[int, dict]:
    """Run the invariant suite; returns (exit status, report)."""
    report = run_suite(rep, only=only)
    if json_path:
        Path(json_path).write_text(pipeline.dumps(report))
    return (0 if report["passed"] else 1), report


def cmd_verify(args, rep: CliffordRep | None = None) -> int:
    status, report = verify(rep, only=args.only, json_path=args.json)
    if args.quiet:
        failed = [c["id"] for c in report["checks"] if not c["passed"]]
        _print({"passed": report["passed"], "count": report["count"], "failed": failed})
    else:
        _print(report)
    return status


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    outcome = pipeline.sweep(cfg, args.out, workers=args.workers, resume=args.resume)
    failed = sum(r.get("status") != "ok" for r in outcome.rows)
    _print({"sweep_dir": str(outcome.sweep_dir), "csv": str(outcome.csv_path),
            "rows": len(outcome.rows), "failed": failed, "reused": outcome.reused})
    return 0


def report_dir(path) -> tuple[int, dict]:
    """Summarize a run or sweep directory and check its recorded hashes."""
    path = Path(path)
    if (path / pipeline.MANIFEST).is_file():
        manifest = json.loads((path / pipeline.MANIFEST).read_text())
        intact = pipeline._complete(path, manifest.get("config_hash", ""))
        report = json.loads((path / pipeline.REPORT).read_text())
        out = {"kind": "run", "run_dir": str(path), "intact": intact,
               "config_hash": manifest.get("config_hash"),
               "results_hash": manifest.get("results_hash"),
               "summary": pipeline.summarize(report)}
        return (0 if intact else 1), out
    if (path / "sweep.json").is_file():
        state = json.loads((path / "sweep.json").read_text())
        rows = state.get("rows", [])
        out = {"kind": "sweep", "sweep_dir": str(path), "rows": len(rows),
               "failed": [{"index": r["index"], "reason": r.get("reason", "")}
                          for r in rows if r.get("status") != "ok"],
               "table": [{k: r.get(k) for k in ("index", "mu", "points", "t_max", "mu_hat_out",
                                                "mu_hat_in", "status")} for r in rows]}
        return 0, out
    return 2, {"error": f"{path} holds neither a run manifest nor a sweep state"}


def cmd_report(args) -> int:
    status, out = report_dir(args.path)
    _print(out)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dirac-vacua",
                                     description="In/out vacuum states of the Dirac field on a circle.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, sweep=False):
        p.add_argument("--config", help="TOML config file (defaults are used when omitted)")
        p.add_argument("--out", help=f"output root (default ${pipeline.ENV_OUT} or ./runs)")
        p.add_argument("--seed", type=int, help="override run.seed")
        if sweep:
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--resume", action="store_true",
                           help="reuse completed points recorded in sweep.json")

    p = sub.add_parser("run", help="execute one configuration")
    common(p)
    p.add_argument("--force", action="store_true", help="recompute even if the run is complete")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--json", help="also write the JSON report to this file")
    p.add_argument("--only", nargs="+", help="restrict to these invariant ids")
    p.add_argument("--quiet", action="store_true", help="print only failing ids")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="run every point of the [sweep] grid")
    common(p, sweep=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a run or sweep directory")
    p.add_argument("path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
