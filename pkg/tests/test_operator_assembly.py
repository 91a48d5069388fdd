import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirac_vacua.errors import HypothesisViolation, ReductionOrderViolation
from dirac_vacua.geometry import GridSpec, bump, cosmological_ramp, flat, shifted
from dirac_vacua.operator_assembly import (Gram, PhysicalModel, ReducedModel, assemble_H,
                                           assemble_H_asymptotic, assemble_H_physical,
                                           check_massive, fourier_mode_block, gram_nu0)

from conftest import custom_family


def test_gram_flat_normalization(rep, grid16):
    G = gram_nu0(flat(), rep, grid16)
    assert np.allclose(G, grid16.dx * np.eye(32), atol=1e-15)


def test_gram_scaled_metric(rep, grid16):
    G = gram_nu0(flat(h0=4.0), rep, grid16)
    assert np.allclose(G, 2 * grid16.dx * np.eye(32), atol=1e-15)


def test_gram_positive_for_bump(rep, grid32):
    assert Gram(gram_nu0(bump(), rep, grid32)).min_eigenvalue() > 0


def test_gram_rejects_indefinite():
    with pytest.raises(ValueError):
        Gram(np.diag([1.0, -1.0]))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gram_helpers_consistent(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    G = Gram(A @ A.conj().T + 4 * np.eye(4))
    X = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert np.allclose(G.from_sym(G.to_sym(X)), X, atol=1e-10)
    # adjoint satisfies <Xf, g> = <f, X^dag g>
    f, g = rng.normal(size=4), rng.normal(size=4)
    lhs = (X @ f).conj() @ G.matrix @ g
    rhs = f.conj() @ G.matrix @ (G.adjoint(X) @ g)
    assert abs(lhs - rhs) < 1e-9 * max(1, abs(lhs))
    assert G.selfadjoint_residual(G.hermitize(X)) < 1e-12


def _block_eigs(H, grid, k_index):
    return np.sort(np.linalg.eigvals(fourier_mode_block(H, grid, k_index)).real)


def test_flat_mode_spectrum(rep, grid16):
    H = assemble_H(flat(m0=1.0), rep, grid16, 0.0).matrix
    assert np.allclose(_block_eigs(H, grid16, 0), [-1, 1], atol=1e-12)
    assert np.allclose(_block_eigs(H, grid16, 3), [-math.sqrt(10), math.sqrt(10)], atol=1e-12)


def test_static_hamiltonian_time_independent(rep, grid16):
    m = ReducedModel(flat(h0=2.0), grid16, rep)
    assert np.array_equal(m.H(0.0), m.H(17.0))


@settings(max_examples=15, deadline=None)
@given(t=st.floats(-200, 200))
def test_hamiltonian_selfadjoint(t):
    model = ReducedModel(bump(mu=1.5), GridSpec(16))
    assert model.gram.selfadjoint_residual(model.H(t)) < 1e-10


def test_asymptotic_gap_flat(rep, grid16):
    op = assemble_H_asymptotic(flat(m0=1.0), rep, grid16, "out")
    assert op.info["gap"] == pytest.approx(1.0, abs=1e-12)


def test_massless_flags_hypothesis(rep, grid16):
    op = assemble_H_asymptotic(flat(m0=0.0), rep, grid16, "in")
    assert op.info["gap"] < 1e-12
    with pytest.raises(HypothesisViolation):
        assemble_H_asymptotic(flat(m0=0.0), rep, grid16, "in", require_gap=True)


def test_hamiltonian_decay_rate(rep, grid32):
    model = ReducedModel(bump(mu=1.5), grid32, rep)
    H_out = model.H_asymptotic("out")
    ts = np.array([10.0, 20.0, 40.0, 80.0, 160.0])
    vals = np.array([model.gram.norm(model.H(t) - H_out) for t in ts])
    slope = np.polyfit(np.log(np.sqrt(1 + ts ** 2)), np.log(vals), 1)[0]
    assert slope == pytest.approx(-1.5, abs=0.1)
    C = vals[0] * 10 ** 1.5
    assert vals[0] <= C * 10 ** -1.5 * (1 + 1e-12)


def test_check_massive_zero_mass(grid16):
    r = check_massive(flat(m0=0.0), grid16, "out")
    assert r.sufficient_value == 0.0
    assert r.gap < 1e-12
    assert not r.sufficient


def test_check_massive_steep_mass(grid32):
    # m = 1 + 0.9 sin(4x): |m'| reaches 3.6 where m is near 1
    prof = lambda x: 1 + 0.9 * np.sin(4 * x)
    fam = custom_family(m=lambda t, x: prof(x) + 0 * t, static=True)
    fam = replace(fam, profiles={**fam.profiles, "m_out": prof, "m_in": prof})
    r = check_massive(fam, grid32, "out")
    assert r.sufficient_value <= 0
    assert r.gap > 0


def test_check_massive_flat(grid16):
    r = check_massive(flat(m0=2.0), grid16, "in")
    assert r.sufficient_value == pytest.approx(4.0)
    assert r.gap == pytest.approx(2.0)


def test_reduced_model_requires_reduction(grid16):
    with pytest.raises(ReductionOrderViolation):
        ReducedModel(shifted(), grid16)


def test_physical_hamiltonian_conjugate_to_reduced(rep, grid16):
    fam = bump(mu=1.5, lapse_amp=0.3)
    from dirac_vacua.geometry import conformal_reduce
    red = ReducedModel(conformal_reduce(fam), grid16, rep)
    c = np.real(fam.c(0.0, grid16.nodes))
    C = np.kron(np.eye(2), np.diag(c))
    Hp = assemble_H_physical(fam, rep, grid16, 0.7)
    assert Hp.residual() < 1e-10
    expect = np.linalg.inv(np.sqrt(C)) @ red.H(0.7) @ np.sqrt(C)
    assert np.abs(Hp.matrix - expect).max() < 1e-10
    assert np.allclose(PhysicalModel(fam, grid16, rep).H(0.7), Hp.matrix)


def test_ramp_modes_follow_metric(rep, grid16):
    fam = cosmological_ramp(mu=1.5)
    H = ReducedModel(fam, grid16, rep).H(2.0)
    h = float(fam.h(2.0, 0.0))
    k = grid16.wavenumbers[2]
    e = math.sqrt(k * k / h + 1)
    assert np.allclose(_block_eigs(H, grid16, 2), [-e, e], atol=1e-10)
