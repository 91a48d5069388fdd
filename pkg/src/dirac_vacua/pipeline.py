"""End-to-end run: build, evolve, scatter, diagnose, persist.

A run directory holds::

    manifest.json       config, hashes of every artifact, versions, status
    report.json         all module diagnostics
    arrays/*.dva        matrices in the binary array container (see arrayio)
    plots/*.csv         plot-ready tables (columns listed in PLOT_COLUMNS)

Nothing time-dependent is written, so an identical config and seed give
byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__, arrayio
from .adiabatic_projections import CorrectionLattice
from .config import Config
from .errors import DiracVacuaError, HypothesisViolation
from .evolution import Propagator, StepperConfig
from .functional_calculus import spectral_projection
from .geometry import GridSpec, make_family, reduce_family, verify_decay
from .moller_scattering import (cook_accelerated_limit, default_schedule, lift_to_physical,
                                moller_projection)
from .operator_assembly import ReducedModel, check_massive
from .spin_algebra import CliffordRep, make_clifford
from .states_hadamard import (cauchy_covariances, hadamard_symbol_test, smoothing_difference_test,
                              spacetime_two_point, static_vacuum, time_consistency)

ENV_OUT = "DIRAC_VACUA_OUT"
MANIFEST = "manifest.json"
REPORT = "report.json"

PLOT_COLUMNS = {
    "moller_{d}.csv": ["T", "error_to_limit", "increment_to_next"],
    "symbol_{d}.csv": ["k", "deviation"],
    "smoothing_{d}.csv": ["k_center", "block_norm"],
    "decay.csv": ["field", "side", "order", "required", "exponent", "compliant"],
}

SWEEP_COLUMNS = ["index", "overrides", "family", "mu", "points", "t_max", "status", "passed",
                 "mu_hat_out", "mu_hat_in", "identity_max", "tail_bound_out",
                 "symbol_slope_out", "smoothing_slope_out", "sum_rule_residual", "reason"]


def default_out_root() -> Path:
    return Path(os.environ.get(ENV_OUT, "runs"))


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _stage(name: str):
    """Attach the pipeline stage to any package error raised inside the block."""
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, etype, exc, tb):
            if exc is not None and isinstance(exc, DiracVacuaError) and not hasattr(exc, "stage"):
                exc.stage = name
                exc.args = (f"[stage {name}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
            return False
    return _Ctx()


@dataclass
class RunOutput:
    report: dict
    arrays: dict
    plots: dict


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def execute(cfg: Config, rep: CliffordRep | None = None) -> RunOutput:
    """Run every stage in memory and return reports, arrays and plot tables."""
    rep = rep or make_clifford()
    d, s = cfg.diagnostics, cfg.scattering
    report: dict = {"stages": []}
    arrays: dict = {}
    plots: dict = {}
    rng = np.random.default_rng(cfg.run.seed)

    with _stage("geometry"):
        family = make_family(cfg.family.name, **cfg.family.params)
        grid = GridSpec(cfg.grid.points, cfg.grid.circumference, cfg.grid.t_max,
                        cfg.grid.antiperiodic)
        geo = {"family": family.name, "fingerprint": family.fingerprint(), "static": family.static}
        if not family.static:
            ts = sorted(set(d.decay_samples) | {-t for t in d.decay_samples})
            decay = verify_decay(family, grid, ts, slack=d.decay_slack)
            geo["decay"] = decay.to_dict()
            plots["decay.csv"] = _csv_text(PLOT_COLUMNS["decay.csv"], [
                (e.field, e.side, e.order, e.required, e.exponent, e.compliant)
                for e in decay.entries])
        reduced = reduce_family(family, grid)
        geo["reduced"] = reduced.name
        report["geometry"] = geo
        report["stages"].append("geometry")

    with _stage("assembly"):
        model = ReducedModel(reduced, grid, rep)
        asm = {"clifford": rep.residuals(),
               "selfadjoint_residual_t0": model.gram.selfadjoint_residual(model.H(0.0))}
        for side in ("out", "in"):
            mr = check_massive(family, grid, side, rep)
            asm[f"massive_{side}"] = mr.to_dict()
            if mr.gap <= 0:
                raise HypothesisViolation(f"no spectral gap on the {side} side")
        report["assembly"] = asm
        arrays["gram_diagonal"] = np.real(np.diag(model.gram.matrix))
        report["stages"].append("assembly")

    with _stage("evolution"):
        e = cfg.evolution
        prop = Propagator(model.H, model.gram, StepperConfig(
            scheme=e.scheme, dt0=e.dt0, growth_start=e.growth_start, deriv_tol=e.deriv_tol,
            drift_budget=e.drift_budget))
        f = rng.normal(size=model.dim) + 1j * rng.normal(size=model.dim)
        probe_t = min(20.0, grid.t_max)
        g = prop.evolve(f, 0.0, probe_t)
        norm_drift = abs(model.gram.vector_norm(g) / model.gram.vector_norm(f) - 1.0)
        report["evolution"] = {"probe_time": probe_t, "probe_norm_drift": norm_drift}
        report["stages"].append("evolution")

    schedule = default_schedule(grid.t_max, s.t_first, s.ratio)
    results = {}
    with _stage("scattering"):
        sc = {}
        for direction in s.directions:
            res = moller_projection(model, prop, "+", direction, schedule, purify_result=s.purify)
            results[direction] = res
            entry = res.summary()
            if not family.lapse_trivial:
                c0 = np.real(family.c(0.0, grid.nodes)) * np.ones(grid.M)
                lifted = lift_to_physical(res, c0)
                entry["physical_identities"] = lifted.identities()
                arrays[f"c_plus_{direction}_physical"] = lifted.c_plus
            if s.cook:
                ck = cook_accelerated_limit(model, prop, "+", direction, grid.t_max,
                                            order=s.cook_order, mode=s.cook_mode,
                                            coarse_dt0=s.cook_coarse_dt0, purify_result=s.purify)
                entry["cook"] = ck.summary()
                entry["cook"]["difference_to_moller"] = model.gram.norm(ck.c_plus - res.c_plus)
                entry["cook"]["combined_tail"] = ck.tail_bound + res.tail_bound
            sc[direction] = entry
            arrays[f"c_plus_{direction}"] = res.c_plus
            errs = res.extras["errors"]
            incs = list(res.residuals) + [float("nan")]
            plots[f"moller_{direction}.csv"] = _csv_text(
                PLOT_COLUMNS["moller_{d}.csv"], list(zip(schedule, errs, incs)))
        if "out" in results and "in" in results:
            sc["out_in_difference"] = model.gram.norm(results["out"].c_plus - results["in"].c_plus)
        report["scattering"] = sc
        report["stages"].append("scattering")

    with _stage("states"):
        st = {}
        band = tuple(d.symbol_band) if d.symbol_band else (8, grid.M // 4)
        vac = static_vacuum(reduced, grid, rep) if family.static else None
        lat = CorrectionLattice(model, 0.0, s.cook_mode)
        Pt0 = lat.corrected_projection(d.smoothing_order)
        for direction, res in results.items():
            state = cauchy_covariances(res.c_plus, res.c_minus, model.gram, rep,
                                       provenance=direction, positivity_tol=d.positivity_tol)
            entry = {"covariances": state.diagnostics}
            if vac is not None:
                entry["distance_to_vacuum"] = model.gram.norm(res.c_plus - vac.c_plus)
                P_static = spectral_projection(model.H(0.0), "+", model.gram)
                entry["distance_to_spectral_projection"] = model.gram.norm(res.c_plus - P_static)
            try:
                sym = hadamard_symbol_test(res.c_plus, model.gram, grid, rep, band=band,
                                           threshold=d.symbol_threshold,
                                           fail_threshold=d.symbol_fail, raise_on_failure=False)
                entry["symbol_test"] = sym.to_dict()
                plots[f"symbol_{direction}.csv"] = _csv_text(
                    PLOT_COLUMNS["symbol_{d}.csv"], list(zip(sym.ks, sym.deviations)))
            except DiracVacuaError as exc:
                entry["symbol_test"] = {"error": str(exc)}
            try:
                sm = smoothing_difference_test(res.c_plus, Pt0, model.gram, grid,
                                               order=d.smoothing_order, band=band,
                                               ratio=d.smoothing_ratio)
                entry["smoothing_test"] = sm.to_dict()
                plots[f"smoothing_{direction}.csv"] = _csv_text(
                    PLOT_COLUMNS["smoothing_{d}.csv"], list(zip(sm.centers, sm.norms)))
            except DiracVacuaError as exc:
                entry["smoothing_test"] = {"error": str(exc)}
            tp = spacetime_two_point(state, prop, *d.two_point)
            entry["two_point"] = tp.to_dict()
            entry["time_consistency"] = time_consistency(state, prop, *d.time_consistency)
            st[direction] = entry
        report["states"] = st
        report["stages"].append("states")
    report["checks"] = _checks(cfg, report, family.static)
    report["passed"] = all(c["passed"] for c in report["checks"].values())
    return RunOutput(report, arrays, plots)


def _checks(cfg: Config, report: dict, static: bool) -> dict:
    """Compare the headline residuals with their configured tolerances."""
    s, d, e = cfg.scattering, cfg.diagnostics, cfg.evolution
    out = {}

    def add(name, value, tol):
        out[name] = {"value": value, "tolerance": tol, "passed": bool(value <= tol)}

    add("probe_norm_drift", report["evolution"]["probe_norm_drift"], e.drift_budget)
    for direction, entry in report["scattering"].items():
        if not isinstance(entry, dict):
            continue
        add(f"identities_{direction}", max(entry["identities"].values()), s.identity_tol)
        if "physical_identities" in entry:
            add(f"physical_identities_{direction}", max(entry["physical_identities"].values()),
                s.identity_tol)
    for direction, entry in report["states"].items():
        add(f"sum_rule_{direction}", entry["covariances"]["sum_rule_residual"], d.sum_rule_tol)
        add(f"two_point_sum_rule_{direction}", entry["two_point"]["sum_rule_residual"],
            d.sum_rule_tol)
        add(f"equation_{direction}", entry["two_point"]["equation_residual"], d.equation_tol)
        add(f"time_consistency_{direction}", entry["time_consistency"], d.time_consistency_tol)
        if static:
            add(f"static_vacuum_{direction}", entry["distance_to_vacuum"], s.static_tol)
    if static and "out_in_difference" in report["scattering"]:
        add("static_out_in", report["scattering"]["out_in_difference"], s.static_tol)
    return out


def summarize(report: dict) -> dict:
    """Flat row of headline numbers used by sweeps and ``report``."""
    sc, st = report.get("scattering", {}), report.get("states", {})
    row = {"passed": report.get("passed")}
    for direction in ("out", "in"):
        if direction in sc:
            row[f"mu_hat_{direction}"] = sc[direction]["mu_hat"]
            row[f"tail_bound_{direction}"] = sc[direction]["tail_bound"]
    ids = [v for direction in ("out", "in") if direction in sc
           for v in sc[direction]["identities"].values()]
    row["identity_max"] = max(ids) if ids else None
    first = next((dname for dname in ("out", "in") if dname in st), None)
    if first:
        sym = st[first].get("symbol_test", {})
        sm = st[first].get("smoothing_test", {})
        row[f"symbol_slope_{first}"] = sym.get("slope")
        row[f"smoothing_slope_{first}"] = sm.get("slope")
        row["sum_rule_residual"] = st[first]["covariances"]["sum_rule_residual"]
    return row


def _sha(text: str | bytes) -> str:
    data = text.encode() if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def run_dir_for(cfg: Config, out_root) -> Path:
    return Path(out_root) / f"{cfg.family.name}-{cfg.digest()[:12]}"


def _complete(run_dir: Path, digest: str) -> bool:
    """True when the manifest matches ``digest`` and every recorded file hashes correctly."""
    mpath = run_dir / MANIFEST
    if not mpath.is_file():
        return False
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError:
        return False
    if manifest.get("config_hash") != digest or manifest.get("status") != "complete":
        return False
    for rel, h in manifest.get("files", {}).items():
        p = run_dir / rel
        if not p.is_file() or _sha(p.read_bytes()) != h:
            return False
    return True


@dataclass
class RunOutcome:
    run_dir: Path
    skipped: bool
    manifest: dict
    summary: dict


def run(cfg: Config, out_root=None, force: bool = False) -> RunOutcome:
    """Execute ``cfg`` into its run directory; a completed identical run is left untouched."""
    out_root = Path(out_root) if out_root is not None else default_out_root()
    run_dir = run_dir_for(cfg, out_root)
    digest = cfg.digest()
    if not force and _complete(run_dir, digest):
        manifest = json.loads((run_dir / MANIFEST).read_text())
        report = json.loads((run_dir / REPORT).read_text())
        return RunOutcome(run_dir, True, manifest, summarize(report))
    out = execute(cfg)
    (run_dir / "arrays").mkdir(parents=True, exist_ok=True)
    (run_dir / "plots").mkdir(exist_ok=True)
    files = {}
    for name in sorted(out.arrays):
        rel = f"arrays/{name}.dva"
        files[rel] = arrayio.save(run_dir / rel, out.arrays[name])
    for name in sorted(out.plots):
        rel = f"plots/{name}"
        (run_dir / rel).write_text(out.plots[name])
        files[rel] = _sha(out.plots[name])
    report_text = dumps(out.report)
    (run_dir / REPORT).write_text(report_text)
    files[REPORT] = _sha(report_text)
    manifest = {
        "format": 1,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": digest,
        "seed": cfg.run.seed,
        "family": {"name": cfg.family.name, "fingerprint": out.report["geometry"]["fingerprint"]},
        "grid": cfg.grid.__dict__,
        "tolerances": {"evolution": cfg.evolution.__dict__, "scattering": cfg.scattering.__dict__,
                       "diagnostics": cfg.diagnostics.__dict__},
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "files": files,
        "results_hash": _sha("".join(f"{k}:{v}\n" for k, v in sorted(files.items()))),
        "status": "complete",
    }
    (run_dir / MANIFEST).write_text(dumps(manifest))
    return RunOutcome(run_dir, False, json.loads(dumps(manifest)), summarize(out.report))


# ---------------------------------------------------------------------------
# sweeps


def sweep_points(cfg: Config) -> list[dict]:
    """Cartesian product of the ``[sweep]`` lists; empty when any list is empty or none is given."""
    keys = list(cfg.sweep)
    if not keys or any(len(cfg.sweep[k]) == 0 for k in keys):
        return []
    return [dict(zip(keys, combo)) for combo in itertools.product(*(cfg.sweep[k] for k in keys))]


def _point_row(index: int, cfg: Config, overrides: dict, out_root: str) -> dict:
    row = {"index": index, "overrides": json.dumps(overrides, sort_keys=True)}
    try:
        point_cfg = cfg.with_overrides(overrides)
        row.update(family=point_cfg.family.name, mu=point_cfg.family.params.get("mu", ""),
                   points=point_cfg.grid.points, t_max=point_cfg.grid.t_max)
        outcome = run(point_cfg, out_root)
        row.update(outcome.summary)
        row["status"] = "ok"
        row["reason"] = ""
    except Exception as exc:  # every failure becomes a row, never a crash
        row["status"] = "failed"
        row["reason"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def _point_task(args):
    index, cfg_dict, overrides, out_root = args
    from .config import from_dict, _flatten_family
    cfg = from_dict(_flatten_family(cfg_dict))
    return _point_row(index, cfg, overrides, out_root)


@dataclass
class SweepOutcome:
    sweep_dir: Path
    rows: list
    csv_path: Path
    reused: int


def sweep(cfg: Config, out_root=None, workers: int = 1, resume: bool = False) -> SweepOutcome:
    out_root = Path(out_root) if out_root is not None else default_out_root()
    sweep_dir = out_root / f"sweep-{cfg.digest()[:12]}"
    (sweep_dir / "points").mkdir(parents=True, exist_ok=True)
    points = sweep_points(cfg)
    state_path = sweep_dir / "sweep.json"
    done = {}
    if resume and state_path.is_file():
        prior = json.loads(state_path.read_text())
        if prior.get("config_hash") == cfg.digest():
            done = {r["index"]: r for r in prior.get("rows", []) if r.get("status") == "ok"}
    base = cfg.to_dict()
    base.pop("sweep")
    todo = [(i, base, p, str(sweep_dir / "points")) for i, p in enumerate(points) if i not in done]
    rows = dict(done)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_point_task, todo):
                rows[row["index"]] = row
    else:
        for task in todo:
            row = _point_task(task)
            rows[row["index"]] = row
    ordered = [rows[i] for i in sorted(rows)]
    csv_path = sweep_dir / "sweep.csv"
    csv_path.write_text(_csv_text(SWEEP_COLUMNS, [[r.get(c, "") for c in SWEEP_COLUMNS]
                                                  for r in ordered]))
    state_path.write_text(dumps({"config_hash": cfg.digest(), "points": points, "rows": ordered}))
    return SweepOutcome(sweep_dir, ordered, csv_path, len(done))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
