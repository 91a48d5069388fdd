"""Acceptance checks, one test per criterion.

Each test records a one-line verdict; the lines are printed at the end of the
pytest run (see ``conftest.pytest_terminal_summary``).  Running this file as a
script prints the same lines without pytest.
"""
import json
import math
import sys
import tempfile

import numpy as np
import pytest
import scipy.linalg

from dirac_vacua import pipeline
from dirac_vacua.adiabatic_projections import CorrectionLattice
from dirac_vacua.config import Config
from dirac_vacua.evolution import Propagator, StepperConfig
from dirac_vacua.geometry import GridSpec, bump, flat, make_family, reduce_family, shifted
from dirac_vacua.invariants import run_suite
from dirac_vacua.functional_calculus import resolvent_functional
from dirac_vacua.moller_scattering import cook_accelerated_limit, default_schedule, moller_projection
from dirac_vacua.operator_assembly import ReducedModel
from dirac_vacua.spin_algebra import make_clifford
from dirac_vacua.states_hadamard import (cauchy_covariances, dual_frame_two_point,
                                         half_swapped_state, hadamard_symbol_test,
                                         smoothing_difference_test, spacetime_two_point,
                                         time_consistency)

# static family with x-dependent metric and mass
STATIC_TABLE = {"h": {"static": [[0, 1.0, 0.0], [1, 0.25, 0.0]]},
                "m": {"static": [[0, 1.0, 0.0], [2, 0.0, 0.3]]}}


def _verdict(record, number, title, ok, detail):
    record(number, title, bool(ok), detail)
    assert ok, f"criterion {number}: {detail}"


def _numpy_spectral_projection(H, gram):
    """Positive projection from numpy on the symmetrized matrix (no package calculus)."""
    d = np.sqrt(np.real(np.diag(gram.matrix)))
    S = d[:, None] * H / d[None, :]
    S = 0.5 * (S + S.conj().T)
    w, Q = np.linalg.eigh(S)
    P = Q[:, w > 0] @ Q[:, w > 0].conj().T
    return (P / d[:, None]) * d[None, :]


def test_c01_algebra(record_criterion):
    rep = make_clifford()
    clifford = max(rep.residuals().values())
    grid = GridSpec(32, t_max=160.0)
    worst_sa, min_gram = 0.0, math.inf
    for fam in (flat(), bump(mu=1.5), make_family("cosmological-ramp"),
                reduce_family(shifted(), grid)):
        m = ReducedModel(fam if fam.reduced else reduce_family(fam, grid), grid, rep)
        G = m.gram.matrix
        min_gram = min(min_gram, float(np.linalg.eigvalsh(0.5 * (G + G.conj().T)).min()))
        for t in (-50.0, -1.0, 0.0, 0.7, 30.0):
            H = m.H(t)
            worst_sa = max(worst_sa, m.gram.norm(H - m.gram.adjoint(H)) / m.gram.norm(H))
    suite = run_suite(rep, only=["spin_algebra.clifford", "spin_algebra.transport_cocycle",
                                 "operator_assembly.selfadjoint"])
    ok = clifford <= 1e-12 and worst_sa <= 1e-12 and min_gram > 0 and suite["passed"]
    _verdict(record_criterion, 1, "Clifford, beta and Gram positivity", ok,
             f"clifford {clifford:.1e}, selfadjoint {worst_sa:.1e}, min Gram eig {min_gram:.2e}, "
             f"suite {'ok' if suite['passed'] else 'failed'}")


def test_c02_flat_spectrum(record_criterion):
    grid = GridSpec(64, t_max=40.0)
    m = ReducedModel(flat(), grid)
    d = np.sqrt(np.real(np.diag(m.gram.matrix)))
    S = d[:, None] * m.H(0.0) / d[None, :]
    w = np.sort(np.linalg.eigvalsh(0.5 * (S + S.conj().T)))
    k = grid.wavenumbers
    e = np.sqrt(k ** 2 + 1.0)
    expected = np.sort(np.concatenate([e, -e]))
    err = float(np.abs(w - expected).max())
    _verdict(record_criterion, 2, "flat spectrum equals +-sqrt(k^2+m^2), M=64", err <= 1e-10,
             f"max eigenvalue error {err:.1e}")


def test_c03_quadrature(record_criterion):
    m = ReducedModel(bump(mu=1.5), GridSpec(32, t_max=40.0))
    H = m.H(0.3)
    d = np.sqrt(np.real(np.diag(m.gram.matrix)))
    S = d[:, None] * H / d[None, :]
    S = 0.5 * (S + S.conj().T)
    w, Q = np.linalg.eigh(S)
    exact = {"sign": (Q * np.sign(w)) @ Q.conj().T,
             "inv_sqrt_sq_plus_1": (Q * (w ** 2 + 1) ** -0.5) @ Q.conj().T}
    errs = {}
    for kind, ref in exact.items():
        res = resolvent_functional(H, kind, nodes=400, gram=m.gram)
        X = d[:, None] * res.matrix / d[None, :]
        errs[kind] = float(np.linalg.norm(X - ref, 2) / np.linalg.norm(ref, 2))
    ok = max(errs.values()) <= 1e-6
    _verdict(record_criterion, 3, "quadrature vs eigendecomposition, 400 nodes", ok,
             ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


def test_c04_evolution(record_criterion):
    m = ReducedModel(bump(mu=1.5), GridSpec(16, t_max=640.0))
    prop = Propagator(m.H, m.gram)
    U = prop.U_from_zero(640.0)
    prop.U_from_zero(-640.0)
    drift = max(prop.max_drift(), m.gram.norm(m.gram.adjoint(U) @ U - np.eye(m.dim)))
    static = ReducedModel(reduce_family(make_family("table", table=STATIC_TABLE, mu=1.5),
                                        GridSpec(16, t_max=40.0)), GridSpec(16, t_max=40.0))
    sprop = Propagator(static.H, static.gram)
    H0 = static.H(0.0)
    static_err = 0.0
    for t in (1.0, 10.0, 40.0):
        ref = scipy.linalg.expm(1j * t * H0)
        static_err = max(static_err, static.gram.norm(sprop.U_from_zero(t) - ref))
    ok = drift <= 1e-8 and static_err <= 1e-8
    _verdict(record_criterion, 4, "unitarity over [0, 640] and static exponential", ok,
             f"drift {drift:.1e}, static vs expm {static_err:.1e}")


@pytest.fixture(scope="module")
def bump_scattering():
    out = {}
    for mu in (0.5, 1.0, 1.5):
        m = ReducedModel(bump(mu=mu), GridSpec(16, t_max=640.0))
        p = Propagator(m.H, m.gram)
        out[mu] = (m, p, moller_projection(m, p, "+", "out"))
    return out


def test_c05_moller_convergence(record_criterion, bump_scattering):
    parts, ok = [], True
    for mu, (_, _, r) in bump_scattering.items():
        ident = max(r.identities().values())
        ok &= abs(r.mu_hat - mu) <= 0.3 and ident <= 1e-6
        parts.append(f"mu {mu}: fit {r.mu_hat:.2f}, identities {ident:.1e}")
    _verdict(record_criterion, 5, "Moller rate and projection identities", ok, "; ".join(parts))


def test_c06_static_consistency(record_criterion):
    grid = GridSpec(32, t_max=80.0)
    worst = 0.0
    for fam in (flat(), reduce_family(make_family("table", table=STATIC_TABLE, mu=1.5), grid)):
        m = ReducedModel(fam, grid)
        p = Propagator(m.H, m.gram)
        P = _numpy_spectral_projection(m.H(0.0), m.gram)
        for direction in ("out", "in"):
            r = moller_projection(m, p, "+", direction, default_schedule(80.0, 5.0))
            worst = max(worst, m.gram.norm(r.c_plus - P))
    _verdict(record_criterion, 6, "static families give the spectral projection", worst <= 1e-6,
             f"max distance {worst:.1e}")


def test_c07_cook(record_criterion, bump_scattering):
    m, p, r = bump_scattering[1.5]
    c = cook_accelerated_limit(m, p, "+", "out", T=640.0)
    rho = c.extras["integrand_exponent"]
    diff = m.gram.norm(c.c_plus - r.c_plus)
    combined = c.tail_bound + r.tail_bound
    ok = abs(rho - 2.5) <= 0.3 and diff <= combined
    _verdict(record_criterion, 7, "Cook integrand decay and agreement", ok,
             f"exponent {rho:.2f} (target 2.5), difference {diff:.1e} vs tails {combined:.1e}")


def test_c08_hadamard(record_criterion):
    grid = GridSpec(128, t_max=160.0)
    m = ReducedModel(bump(mu=1.5), grid)
    p = Propagator(m.H, m.gram, StepperConfig(dt0=0.02))
    r = moller_projection(m, p, "+", "out")
    sym = hadamard_symbol_test(r.c_plus, m.gram, grid, raise_on_failure=False)
    Pt = CorrectionLattice(m, 0.0).corrected_projection(1)
    sm = smoothing_difference_test(r.c_plus, Pt, m.gram, grid, order=1)
    bad = hadamard_symbol_test(half_swapped_state(m.H(0.0), m.gram), m.gram, grid,
                               raise_on_failure=False)
    ok = sym.worst_slope <= -0.8 and sm.slope <= -1.8 and not bad.passed
    _verdict(record_criterion, 8, "symbol and smoothing decay, counterexample rejected", ok,
             f"symbol {sym.worst_slope:.2f}, smoothing {sm.slope:.2f}, "
             f"counterexample {bad.worst_slope:.2f}")


def test_c09_covariance(record_criterion):
    grid = GridSpec(32, t_max=160.0)
    m = ReducedModel(bump(mu=1.5), grid)
    p = Propagator(m.H, m.gram)
    r = moller_projection(m, p, "+", "out")
    state = cauchy_covariances(r.c_plus, r.c_minus, m.gram)
    equal_time = state.sum_rule_residual()
    tp = spacetime_two_point(state, p, 2.0, -1.0, check_equation=False)
    tc = time_consistency(state, p, 1.0, -0.5)
    conformal = dual_frame_two_point(bump(mu=1.5, lapse_amp=0.5), GridSpec(16, t_max=40.0),
                                     1.0, -0.5).residual
    ok = equal_time <= 1e-7 and tp.sum_rule_residual <= 1e-7 and tc <= 1e-6 and conformal <= 1e-6
    _verdict(record_criterion, 9, "sum rules, time consistency, conformal covariance", ok,
             f"lambda sum {equal_time:.1e}, kernel sum {tp.sum_rule_residual:.1e}, "
             f"time {tc:.1e}, conformal {conformal:.1e}")


def test_c10_determinism(record_criterion):
    cfg = Config()
    cfg.family.params = {"mu": 1.5}
    cfg.grid.points = 16
    cfg.grid.t_max = 80.0
    cfg.run.seed = 11
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        ra, rb = pipeline.run(cfg, a), pipeline.run(cfg, b)
        same_manifest = ((ra.run_dir / pipeline.MANIFEST).read_bytes()
                         == (rb.run_dir / pipeline.MANIFEST).read_bytes())
        ha, hb = ra.manifest["results_hash"], rb.manifest["results_hash"]
    ok = same_manifest and ha == hb and not ra.skipped and not rb.skipped
    _verdict(record_criterion, 10, "identical config and seed give identical outputs", ok,
             f"manifests {'identical' if same_manifest else 'differ'}, hash {ha[:12]}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
