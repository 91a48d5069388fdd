"""Invariant suite run by ``dirac-vacua verify``.

Each check builds small built-in problems (M = 32 unless noted) and returns a
:class:`Check`.  ``INVARIANTS`` lists every check in a fixed order; the JSON
report has exactly one entry per item.
"""
from __future__ import annotations

import math
import tempfile
import traceback
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .adiabatic_projections import CorrectionLattice
from .diagnostics import japanese_bracket, power_fit
from .evolution import Propagator, StepperConfig
from .functional_calculus import resolvent_functional, spectral_projection, sym_eigh, tangent_rate
from .geometry import (GridSpec, bump, christoffel_time, cosmological_ramp, flat, reduce_family,
                       shifted, verify_decay)
from .moller_scattering import lift_to_physical, moller_projection
from .operator_assembly import Gram, ReducedModel, fourier_mode_block
from .spin_algebra import CliffordRep, frame_transport, make_clifford, transport_operator
from .states_hadamard import cauchy_covariances, static_vacuum


@dataclass
class Check:
    id: str
    module: str
    description: str
    passed: bool
    value: float | None = None
    threshold: float | None = None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def num(v):
            if v is None:
                return None
            v = float(v)
            return v if math.isfinite(v) else str(v)
        return {"id": self.id, "module": self.module, "description": self.description,
                "passed": bool(self.passed), "value": num(self.value),
                "threshold": num(self.threshold), "detail": self.detail}


G32 = GridSpec(32, t_max=160.0)
DECAY_T = [-640.0, -320.0, -160.0, -80.0, -40.0, -20.0, -10.0, -5.0,
           5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0, 640.0]


@lru_cache(maxsize=None)
def _bump_model(M: int = 32) -> ReducedModel:
    return ReducedModel(bump(mu=1.5), GridSpec(M, t_max=160.0))


@lru_cache(maxsize=None)
def _bump_scattering():
    model = _bump_model()
    prop = Propagator(model.H, model.gram)
    out = moller_projection(model, prop, "+", "out", (10.0, 20.0, 40.0, 80.0))
    inn = moller_projection(model, prop, "+", "in", (10.0, 20.0, 40.0, 80.0))
    long = moller_projection(model, prop, "+", "out", (10.0, 20.0, 40.0, 80.0, 160.0))
    return model, prop, out, inn, long


# ---------------------------------------------------------------------------
# geometry


def geometry_decay(rep):
    worst, fams = 0.0, {}
    ok = True
    for fam in (bump(mu=1.5), cosmological_ramp(mu=1.2), shifted(mu=1.0)):
        rpt = verify_decay(fam, G32, DECAY_T)
        devs = [abs(e.exponent - e.required) for e in rpt.entries if math.isfinite(e.exponent)]
        dev = max(devs) if devs else 0.0
        fams[fam.name] = {"compliant": rpt.compliant, "max_deviation": dev}
        ok &= rpt.compliant and dev <= 0.2
        worst = max(worst, dev)
    return ok, worst, 0.2, fams


def geometry_reductions(rep):
    red = reduce_family(shifted(mu=1.5), G32)
    rpt = verify_decay(red, G32, DECAY_T)
    x = G32.nodes
    c_dev = float(np.max(np.abs(red.c(3.0, x) - 1.0)))
    b_dev = float(np.max(np.abs(red.b(3.0, x))))
    ok = red.reduced and rpt.compliant and c_dev == 0.0 and b_dev == 0.0
    return ok, None, None, {"reduced": red.reduced, "decay_compliant": rpt.compliant}


def geometry_christoffel(rep):
    rng = np.random.default_rng(1)
    fam = bump(mu=1.5)
    dt = 1e-3
    worst = 0.0
    for _ in range(10):
        t, x = rng.uniform(-5, 5), rng.uniform(0, 2 * math.pi)
        g = christoffel_time(fam, t, np.array([x]))["Gamma1_01"][0]
        h = fam.h(t, x)
        fd = (fam.h(t + dt, x) - fam.h(t - dt, x)) / (2 * dt) / (2 * h)
        worst = max(worst, abs(g - fd))
    return worst <= 10 * dt ** 2, worst, 10 * dt ** 2, {}


# ---------------------------------------------------------------------------
# spin algebra


def clifford_invariants(rep):
    res = rep.residuals()
    worst = max(res.values())
    return worst <= 1e-14, worst, 1e-14, res


def frame_transport_closed_form(rep):
    rng = np.random.default_rng(2)
    fam = bump(mu=1.5)
    worst = 0.0
    for _ in range(10):
        t = rng.uniform(-5, 5)
        xs = rng.uniform(0, 2 * math.pi, size=10)
        u = frame_transport(fam, xs, t)
        exact = fam.h(t, xs) ** -0.5
        worst = max(worst, float(np.max(np.abs(u - exact) / exact)))
    return worst <= 1e-9, worst, 1e-9, {"points": 100}


def transport_cocycle(rep):
    fam = bump(mu=1.5)
    a = transport_operator(fam, 2.0, 0.5, G32) @ transport_operator(fam, 0.5, -1.0, G32)
    b = transport_operator(fam, 2.0, -1.0, G32)
    r = float(np.abs(a - b).max())
    return r <= 1e-12, r, 1e-12, {}


# ---------------------------------------------------------------------------
# operator assembly


def _builtin_models(rep):
    fams = [flat(), bump(mu=1.5), cosmological_ramp(mu=1.5), reduce_family(shifted(mu=1.5), G32)]
    return [ReducedModel(f, G32, rep) for f in fams]


def hamiltonian_selfadjoint(rep):
    rng = np.random.default_rng(3)
    worst = 0.0
    for model in _builtin_models(rep):
        for t in rng.uniform(-50, 50, size=20):
            worst = max(worst, model.gram.selfadjoint_residual(model.H(float(t))))
    return worst <= 1e-8, worst, 1e-8, {}


def fourier_block_spectrum(rep):
    worst = 0.0
    cases = [(ReducedModel(flat(m0=1.0, h0=2.0), G32, rep), 0.0),
             (ReducedModel(cosmological_ramp(mu=1.5), G32, rep), 3.0)]
    k = G32.wavenumbers
    for model, t in cases:
        H = model.H(t)
        h = float(model.family.h(t, 0.0))
        m = float(model.family.m(t, 0.0))
        for i in range(G32.M):
            ev = np.sort(np.linalg.eigvals(fourier_mode_block(H, G32, i)).real)
            e = math.sqrt(k[i] ** 2 / h + m * m)
            worst = max(worst, float(np.abs(ev - np.array([-e, e])).max()))
    return worst <= 1e-10, worst, 1e-10, {}


def hamiltonian_decay(rep):
    model = _bump_model()
    H_out = model.H_asymptotic("out")
    ts = np.array([5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0, 640.0])
    vals = [model.gram.norm(model.H(t) - H_out) for t in ts]
    fit = power_fit(japanese_bracket(ts), vals)
    return fit.exponent >= 1.5 - 0.2, fit.exponent, 1.3, {"ci95": fit.ci95}


# ---------------------------------------------------------------------------
# functional calculus


def quadrature_convergence(rep):
    G = Gram(np.eye(1))
    A = np.array([[4.0]])
    refs = {"sign": 1.0, "inv_abs": 0.25, "inv_sqrt_sq_plus_1": 17 ** -0.5}
    detail, ok = {}, True
    for kind, ref in refs.items():
        ns = np.arange(1, 11)
        errs = np.array([abs(resolvent_functional(A, kind, nodes=int(n), gram=G).matrix[0, 0] - ref)
                         for n in ns])
        monotone = bool(np.all(np.diff(errs) < 0))
        rate = -np.polyfit(ns, np.log(errs), 1)[0]
        b = 17.0 if kind == "inv_sqrt_sq_plus_1" else 16.0
        sigma = math.sqrt(math.sqrt(b))
        nominal = tangent_rate(math.sqrt(b), sigma)
        rel = abs(rate - nominal) / nominal
        detail[kind] = {"monotone": monotone, "rate": rate, "nominal": nominal}
        ok &= monotone and rel <= 0.1
    return ok, None, None, detail


def sign_involution(rep):
    model = ReducedModel(flat(), G32, rep)
    S = resolvent_functional(model.H(0.0), "sign", nodes=200, gram=model.gram).matrix
    r = model.gram.norm(S @ S - np.eye(model.dim))
    return r <= 1e-6, r, 1e-6, {}


def projection_scale_invariance(rep):
    model = _bump_model()
    H = model.H(0.7)
    r = model.gram.norm(spectral_projection(2 * H, "+", model.gram)
                        - spectral_projection(H, "+", model.gram))
    return r <= 1e-12, r, 1e-12, {}


# ---------------------------------------------------------------------------
# evolution


def self_convergence(rep):
    model = _bump_model()
    Us = []
    for dt in (0.04, 0.02, 0.01):
        prop = Propagator(model.H, model.gram, StepperConfig(dt0=dt, growth_start=1e9,
                                                             deriv_tol=math.inf))
        Us.append(prop.U_from_zero(2.0))
    e1 = model.gram.norm(Us[0] - Us[1])
    e2 = model.gram.norm(Us[1] - Us[2])
    order = math.log2(e1 / e2)
    return abs(order - 2.0) <= 0.4, order, 2.0, {"differences": [e1, e2]}


def time_reversal(rep):
    model = _bump_model()
    prop = Propagator(model.H, model.gram)
    U_ts = prop.matrix(3.0, -2.0)
    U_st = prop.matrix(-2.0, 3.0)
    r = model.gram.norm(U_st - model.gram.adjoint(U_ts))
    tol = prop.config.drift_budget
    return r <= tol, r, tol, {}


def static_commutation(rep):
    model = ReducedModel(flat(), G32, rep)
    prop = Propagator(model.H, model.gram)
    U = prop.U_from_zero(3.0)
    H = model.H(0.0)
    r = model.gram.norm(U @ H - H @ U) / model.gram.norm(H)
    return r <= 1e-8, r, 1e-8, {}


# ---------------------------------------------------------------------------
# adiabatic projections


def _lattice():
    return CorrectionLattice(_bump_model(), 0.0)


def dressing_spectrum(rep):
    lat = _lattice()
    g = lat.gram
    Ht = g.hermitize(lat.Htilde(1, 0))
    w0 = np.sort(sym_eigh(lat.H(0), g)[0])
    w1 = np.sort(sym_eigh(Ht, g)[0])
    shift = float(np.abs(w1 - w0).max())
    bound = g.norm(lat.Wdot(1, 0) @ lat.Winv(1, 0))
    return shift <= bound * (1 + 1e-6) + 1e-12, shift, bound, {}


def dressing_unitary(rep):
    lat = _lattice()
    r = lat.gram.unitarity_residual(lat.W(1, 0))
    return r <= 1e-10, r, 1e-10, {}


def corrected_projection_identities(rep):
    lat = _lattice()
    g = lat.gram
    Pp = lat.corrected_projection(1)
    Pm = lat.Winv(1, 0) @ (np.eye(g.n) - lat.P(0)) @ lat.W(1, 0)
    res = {"idempotent": g.norm(Pp @ Pp - Pp), "completeness": g.norm(Pp + Pm - np.eye(g.n)),
           "selfadjoint": g.norm(Pp - g.adjoint(Pp))}
    worst = max(res.values())
    return worst <= 1e-10, worst, 1e-10, res


# ---------------------------------------------------------------------------
# scattering


def scattering_identities(rep):
    _, _, out, inn, _ = _bump_scattering()
    res = {f"{d}_{k}": v for d, r in (("out", out), ("in", inn)) for k, v in r.identities().items()}
    worst = max(res.values())
    return worst <= 1e-6, worst, 1e-6, res


def out_in_asymmetry(rep):
    model, _, out, inn, _ = _bump_scattering()
    diff = model.gram.norm(out.c_plus - inn.c_plus)
    fm = ReducedModel(flat(), GridSpec(32, t_max=40.0), rep)
    fp = Propagator(fm.H, fm.gram)
    sched = (10.0, 20.0, 40.0)
    so = moller_projection(fm, fp, "+", "out", sched)
    si = moller_projection(fm, fp, "+", "in", sched)
    static_diff = fm.gram.norm(so.c_plus - si.c_plus)
    ok = diff > 1e-6 and static_diff <= 1e-6
    return ok, diff, 1e-6, {"bump_out_in": diff, "static_out_in": static_diff}


def schedule_doubling(rep):
    model, _, out, _, long = _bump_scattering()
    change = model.gram.norm(long.c_plus - out.c_plus)
    return change <= out.tail_bound, change, out.tail_bound, {}


# ---------------------------------------------------------------------------
# states


def purity(rep):
    model, _, out, _, _ = _bump_scattering()
    st = cauchy_covariances(out.c_plus, out.c_minus, model.gram, rep)
    res = st.purity_residuals()
    worst = max(res.values())
    return worst <= 1e-6, worst, 1e-6, res


def car_sum_rule(rep):
    model, prop, out, _, _ = _bump_scattering()
    g = model.gram
    U = prop.U_from_zero(1.5)
    evolved = U @ out.c_plus @ g.adjoint(U)
    states = {"assembled": (out.c_plus, out.c_minus),
              "evolved": (evolved, np.eye(g.n) - evolved)}
    lapse_fam = bump(mu=1.5, lapse_amp=0.3)
    lm = ReducedModel(reduce_family(lapse_fam, G32), G32, rep)
    P = spectral_projection(lm.H(0.0), "+", lm.gram)
    from .moller_scattering import ScatteringResult
    lifted = lift_to_physical(ScatteringResult(P, np.eye(lm.dim) - P, lm.gram, "out", (), (),
                                               math.nan, 0.0),
                              np.real(lapse_fam.c(0.0, G32.nodes)))
    states["lifted"] = (lifted.c_plus, lifted.c_minus)
    res = {}
    for name, (cp, cm) in states.items():
        gram = lifted.gram if name == "lifted" else g
        st = cauchy_covariances(cp, cm, gram, rep)
        res[name] = st.sum_rule_residual()
    worst = max(res.values())
    return worst <= 1e-12, worst, 1e-12, res


def vacuum_blocks(rep):
    grid = G32
    st = static_vacuum(flat(m0=1.0), grid, rep)
    model = ReducedModel(flat(m0=1.0), grid, rep)
    H = model.H(0.0)
    worst = 0.0
    for i, k in enumerate(grid.wavenumbers):
        Hk = fourier_mode_block(H, grid, i)
        ref = 0.5 * (np.eye(2) + Hk / math.sqrt(k * k + 1.0))
        worst = max(worst, float(np.abs(fourier_mode_block(st.c_plus, grid, i) - ref).max()))
    return worst <= 1e-10, worst, 1e-10, {}


# ---------------------------------------------------------------------------
# harness


TINY_CONFIG = """
[family]
name = "flat"
[grid]
points = 16
t_max = 40.0
[scattering]
directions = ["out"]
"""


def run_idempotent(rep):
    from .config import loads
    from .pipeline import run
    cfg = loads(TINY_CONFIG)
    with tempfile.TemporaryDirectory() as tmp:
        first = run(cfg, tmp)
        before = (first.run_dir / "manifest.json").read_bytes()
        second = run(cfg, tmp)
        after = (second.run_dir / "manifest.json").read_bytes()
    ok = (not first.skipped) and second.skipped and before == after
    return ok, None, None, {"second_run_skipped": second.skipped}


def outputs_round_trip(rep):
    import json
    from .config import loads
    from .pipeline import SWEEP_COLUMNS, read_csv, sweep
    cfg = loads(TINY_CONFIG + '\n[sweep]\n"family.m0" = [1.0, 2.0]\n')
    with tempfile.TemporaryDirectory() as tmp:
        out = sweep(cfg, tmp)
        rows = read_csv(out.csv_path)
        state = json.loads((out.sweep_dir / "sweep.json").read_text())
        report = json.loads((out.sweep_dir / "points").glob("*/report.json").__next__().read_text())
    header_ok = list(rows[0].keys()) == SWEEP_COLUMNS
    values_ok = all(
        float(r["mu_hat_out"]) == float(s["mu_hat_out"]) if s.get("mu_hat_out") not in (None, "inf")
        else r["mu_hat_out"] == str(s.get("mu_hat_out"))
        for r, s in zip(rows, state["rows"]))
    ok = header_ok and values_ok and len(rows) == 2 and "stages" in report
    return ok, None, None, {"rows": len(rows), "header_ok": header_ok, "values_ok": values_ok}


INVARIANTS = [
    ("geometry.decay_exponents", "geometry",
     "decay fits on compliant built-in families lie within 0.2 of the declared rates", geometry_decay),
    ("geometry.reductions_preserve_decay", "geometry",
     "shift-flow then conformal reduction gives c = 1, b = 0 and a compliant decay report",
     geometry_reductions),
    ("geometry.christoffel_fd", "geometry",
     "time Christoffel symbol matches centred differences of h at 10 random points",
     geometry_christoffel),
    ("spin_algebra.clifford", "spin_algebra", "Clifford relations and beta conditions to 1e-14",
     clifford_invariants),
    ("spin_algebra.frame_transport", "spin_algebra",
     "transported frame equals h^{-1/2} at 100 random points", frame_transport_closed_form),
    ("spin_algebra.transport_cocycle", "spin_algebra",
     "T(t,s) T(s,r) = T(t,r) to 1e-12", transport_cocycle),
    ("operator_assembly.selfadjoint", "operator_assembly",
     "H(t) is Gram-selfadjoint for built-in families at 20 random times", hamiltonian_selfadjoint),
    ("operator_assembly.fourier_spectrum", "operator_assembly",
     "Fourier block eigenvalues of x-independent H equal +-sqrt(k^2/h + m^2)",
     fourier_block_spectrum),
    ("operator_assembly.asymptotic_decay", "operator_assembly",
     "||H(t) - H_out|| decays with exponent >= mu - 0.2", hamiltonian_decay),
    ("functional_calculus.quadrature_order", "functional_calculus",
     "quadrature errors decrease monotonically at the nominal geometric rate", quadrature_convergence),
    ("functional_calculus.sign_involution", "functional_calculus",
     "sign(H)^2 = identity on a gapped operator", sign_involution),
    ("functional_calculus.projection_scaling", "functional_calculus",
     "P(2H) = P(H)", projection_scale_invariance),
    ("evolution.self_convergence", "evolution",
     "halving the step shrinks the propagator change at second order", self_convergence),
    ("evolution.time_reversal", "evolution",
     "U(s,t) equals the Gram inverse of U(t,s)", time_reversal),
    ("evolution.static_commutation", "evolution",
     "U commutes with H for a static family", static_commutation),
    ("adiabatic_projections.dressing_spectrum", "adiabatic_projections",
     "dressed and bare spectra differ by at most ||dW W^{-1}||", dressing_spectrum),
    ("adiabatic_projections.dressing_unitary", "adiabatic_projections",
     "exp(iR) is Gram-unitary to 1e-10", dressing_unitary),
    ("adiabatic_projections.corrected_identities", "adiabatic_projections",
     "corrected projections are complementary selfadjoint projections",
     corrected_projection_identities),
    ("moller_scattering.identities", "moller_scattering",
     "extrapolated c+- are complementary selfadjoint projections to 1e-6", scattering_identities),
    ("moller_scattering.out_in", "moller_scattering",
     "out and in states differ for the asymmetric bump and agree for a static family",
     out_in_asymmetry),
    ("moller_scattering.schedule_doubling", "moller_scattering",
     "doubling the schedule moves c+ by less than the reported tail bound", schedule_doubling),
    ("states_hadamard.purity", "states_hadamard",
     "the out state satisfies the three purity identities", purity),
    ("states_hadamard.car_sum_rule", "states_hadamard",
     "lambda+ + lambda- = i gamma(n) after evolution and after the conformal lift", car_sum_rule),
    ("states_hadamard.vacuum_blocks", "states_hadamard",
     "flat vacuum mode blocks equal (1 + H_k / sqrt(k^2 + 1)) / 2", vacuum_blocks),
    ("cli_harness.idempotent_run", "cli_harness",
     "re-running a completed run directory changes nothing", run_idempotent),
    ("cli_harness.round_trip", "cli_harness",
     "sweep CSV and JSON outputs read back to the same values", outputs_round_trip),
]


def run_suite(rep: CliffordRep | None = None, only=None) -> dict:
    """Run the suite and return ``{"passed": bool, "checks": [...]}``."""
    rep = rep or make_clifford()
    checks = []
    for cid, module, desc, fn in INVARIANTS:
        if only and cid not in only:
            continue
        try:
            ok, value, threshold, detail = fn(rep)
            checks.append(Check(cid, module, desc, bool(ok), value, threshold, detail))
        except Exception as exc:
            checks.append(Check(cid, module, desc, False, None, None,
                                {"error": f"{type(exc).__name__}: {exc}",
                                 "traceback": traceback.format_exc(limit=3)}))
    return {"passed": all(c.passed for c in checks), "count": len(checks),
            "checks": [c.to_dict() for c in checks]}
