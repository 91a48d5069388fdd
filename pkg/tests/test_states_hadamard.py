import math

import numpy as np
import pytest

from dirac_vacua.adiabatic_projections import CorrectionLattice
from dirac_vacua.errors import HadamardDiagnosticFailure, KernelObstruction, PositivityViolation
from dirac_vacua.evolution import Propagator
from dirac_vacua.geometry import GridSpec, bump, flat
from dirac_vacua.moller_scattering import default_schedule, moller_projection
from dirac_vacua.operator_assembly import ReducedModel
from dirac_vacua.states_hadamard import (StateCovariances, cauchy_covariances,
                                         conformal_covariance_check, conformal_transform,
                                         dual_frame_two_point, half_swapped_state,
                                         hadamard_symbol_test, smoothing_difference_test,
                                         spacetime_two_point, static_vacuum, symbol_projection,
                                         time_consistency, time_consistency_static)


@pytest.fixture(scope="module")
def bump_out():
    m = ReducedModel(bump(mu=1.5), GridSpec(64, t_max=160))
    p = Propagator(m.H, m.gram)
    r = moller_projection(m, p, "+", "out", default_schedule(160))
    return m, p, r


@pytest.fixture(scope="module")
def flat_setup():
    g = GridSpec(16, t_max=40)
    m = ReducedModel(flat(), g)
    return m, Propagator(m.H, m.gram), static_vacuum(flat(), g)


def test_vacuum_positive(flat_setup):
    _, _, st = flat_setup
    assert st.diagnostics["min_eigenvalue_plus"] >= -1e-14
    assert st.diagnostics["min_eigenvalue_minus"] >= -1e-14


def test_trivial_split(flat_setup, rep):
    m, _, _ = flat_setup
    st = cauchy_covariances(np.eye(32), np.zeros((32, 32)), m.gram, rep)
    assert st.sum_rule_residual() == 0
    assert st.diagnostics["min_eigenvalue_minus"] == 0


def test_negative_covariance_rejected(flat_setup, rep):
    m, _, _ = flat_setup
    with pytest.raises(PositivityViolation):
        cauchy_covariances(-np.eye(32), 2 * np.eye(32), m.gram, rep)


def test_out_state_positive(bump_out, rep):
    m, _, r = bump_out
    st = cauchy_covariances(r.c_plus, r.c_minus, m.gram, rep)
    scale = st.diagnostics["positivity_scale"]
    assert st.diagnostics["min_eigenvalue_plus"] >= -1e-8 * scale
    assert max(st.purity_residuals().values()) < 1e-6


def test_lambda_sum_rule(bump_out, rep):
    m, _, r = bump_out
    st = cauchy_covariances(r.c_plus, r.c_minus, m.gram, rep)
    assert np.abs(st.lambda_plus + st.lambda_minus - st.i_gamma_n).max() < 1e-12


def test_vacuum_rank_flat(flat_setup):
    assert round(np.trace(flat_setup[2].c_plus).real) == 16


def test_vacuum_massless_obstructed():
    with pytest.raises(KernelObstruction):
        static_vacuum(flat(m0=0.0), GridSpec(16))


def test_vacuum_requires_static():
    with pytest.raises(ValueError):
        static_vacuum(bump(), GridSpec(16))


def test_out_state_of_static_family_is_vacuum(flat_setup):
    m, p, st = flat_setup
    r = moller_projection(m, p, "+", "out", (10.0, 20.0, 40.0))
    assert m.gram.norm(r.c_plus - st.c_plus) < 1e-6


def test_two_point_at_origin(bump_out, rep):
    m, p, r = bump_out
    st = StateCovariances(r.c_plus, r.c_minus, m.gram, rep)
    tp = spacetime_two_point(st, p, 0.0, 0.0, check_equation=False)
    assert np.abs(tp.plus - st.i_gamma_n @ r.c_plus).max() < 1e-14


def test_two_point_sum_rule_and_equation(bump_out, rep):
    m, p, r = bump_out
    st = StateCovariances(r.c_plus, r.c_minus, m.gram, rep)
    tp = spacetime_two_point(st, p, 2.0, -1.0)
    assert tp.sum_rule_residual < 1e-7
    assert tp.equation_residual < 1e-5


def test_time_consistency_equal_times(bump_out, rep):
    m, p, r = bump_out
    st = StateCovariances(r.c_plus, r.c_minus, m.gram, rep)
    assert time_consistency(st, p, 1.5, 1.5) == 0


def test_time_consistency_static(flat_setup):
    m, _, st = flat_setup
    assert time_consistency_static(st, m.H(0.0), 3.0, 0.0) < 1e-9


def test_time_consistency_out_state(bump_out, rep):
    m, p, r = bump_out
    st = StateCovariances(r.c_plus, r.c_minus, m.gram, rep)
    assert time_consistency(st, p, 1.0, 0.0) < 1e-7


def test_conformal_transform_trivial_lapse():
    rng = np.random.default_rng(0)
    L = rng.normal(size=(8, 8))
    one = np.ones(4)
    assert np.array_equal(conformal_transform(L, one, one), L)
    assert conformal_covariance_check(L, L, one, one) == 0


def test_dual_frame_covariance():
    fam = bump(mu=1.5, lapse_amp=0.5)
    rpt = dual_frame_two_point(fam, GridSpec(16, t_max=40), 1.0, -0.5)
    assert rpt.residual < 1e-6


def test_symbol_projection_massless_limit(rep):
    P = symbol_projection(rep, 5.0, "+")
    assert np.allclose(P, 0.5 * (np.eye(2) + np.array([[0, 1], [1, 0]])), atol=1e-14)
    assert np.allclose(P + symbol_projection(rep, 5.0, "-"), np.eye(2))


def test_symbol_flat_vacuum(rep):
    g = GridSpec(64)
    st = static_vacuum(flat(), g, rep)
    rpt = hadamard_symbol_test(st.c_plus, st.gram, g, rep)
    # the deviation is the mass correction m / (2|k|)
    assert rpt.slope == pytest.approx(-1.0, abs=0.05)
    assert rpt.passed


def test_symbol_out_state(bump_out, rep):
    m, _, r = bump_out
    rpt = hadamard_symbol_test(r.c_plus, m.gram, m.grid, rep)
    assert rpt.worst_slope <= -0.8 and rpt.passed


def test_symbol_counterexample_fails(bump_out, rep):
    m, _, _ = bump_out
    bad = half_swapped_state(m.H(0.0), m.gram)
    assert m.gram.norm(bad @ bad - bad) < 1e-10
    with pytest.raises(HadamardDiagnosticFailure):
        hadamard_symbol_test(bad, m.gram, m.grid, rep)
    assert not hadamard_symbol_test(bad, m.gram, m.grid, rep, raise_on_failure=False).passed


def test_smoothing_static_zero(flat_setup):
    m, _, st = flat_setup
    lat = CorrectionLattice(m, 0.0)
    rpt = smoothing_difference_test(st.c_plus, lat.corrected_projection(1), m.gram, m.grid,
                                    band=(2, 4), ratio=2.0)
    assert max(rpt.norms) < 1e-12


def test_smoothing_out_state(bump_out):
    m, _, r = bump_out
    lat = CorrectionLattice(m, 0.0)
    r1 = smoothing_difference_test(r.c_plus, lat.corrected_projection(1), m.gram, m.grid, order=1)
    r2 = smoothing_difference_test(r.c_plus, lat.corrected_projection(2), m.gram, m.grid, order=2)
    assert r1.slope <= -1.8 and r1.passed
    assert r2.slope <= r1.slope - 0.8
