import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirac_vacua.errors import AdjointError, GapViolation, QuadratureError
from dirac_vacua.functional_calculus import (apply_function, eig_decompose, resolvent_functional,
                                             s_operator, spectral_projection)
from dirac_vacua.geometry import GridSpec, bump, flat
from dirac_vacua.operator_assembly import DiscreteOperator, Gram, ReducedModel, fourier_mode_block


@pytest.fixture(scope="module")
def flat8():
    return ReducedModel(flat(m0=1.0), GridSpec(8))


def test_eig_flat_spectrum(flat8):
    es = eig_decompose(flat8.operator(0.0))
    k = GridSpec(8).wavenumbers
    e = np.sqrt(k ** 2 + 1)
    expect = np.sort(np.concatenate([e, -e]))
    assert np.allclose(es.values, expect, atol=1e-12)
    assert es.orthonormality_residual() < 1e-12


def test_eig_identity():
    G = Gram(np.diag([1.0, 2.0, 3.0]))
    assert np.allclose(eig_decompose(np.eye(3), G).values, 1.0)


def _random_selfadjoint(rng, n):
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    G = B @ B.conj().T + n * np.eye(n)
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    X = X + X.conj().T
    # A = G^{-1} X is selfadjoint for <., .>_G
    return np.linalg.solve(G, X), Gram(G)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_eig_reconstruction_random(seed):
    A, G = _random_selfadjoint(np.random.default_rng(seed), 6)
    es = eig_decompose(A, G)
    assert np.abs(es.apply(lambda w: w) - A).max() < 1e-10
    assert es.orthonormality_residual() < 1e-10


def test_eig_rejects_non_selfadjoint():
    with pytest.raises(AdjointError):
        eig_decompose(np.array([[0.0, 1.0], [0.0, 0.0]]), Gram(np.eye(2)))


def test_projection_rank_flat(flat8):
    P = spectral_projection(flat8.operator(0.0), "+")
    assert round(np.trace(P).real) == 8
    Pm = spectral_projection(flat8.operator(0.0), "-")
    assert np.trace(P + Pm).real == pytest.approx(16)


def test_projection_coordinate():
    H = np.diag([1.0, -1.0, 1.0, -1.0])
    G = Gram(np.eye(4))
    assert np.allclose(spectral_projection(H, "+", G), np.diag([1, 0, 1, 0]))
    assert np.allclose(spectral_projection(H, "-", G), np.diag([0, 1, 0, 1]))


def test_projection_gap_violation():
    with pytest.raises(GapViolation):
        spectral_projection(np.diag([1.0, 0.0]), "+", Gram(np.eye(2)))


def test_quadrature_scalar_inverse():
    r = resolvent_functional(np.array([[4.0]]), "inv_abs", nodes=64, gram=Gram(np.eye(1)))
    assert r.matrix[0, 0].real == pytest.approx(0.25, abs=1e-8)


def test_quadrature_sign_tanh_sinh(flat8):
    op = flat8.operator(0.0)
    ref = apply_function(op.matrix, op.gram, np.sign)
    r = resolvent_functional(op, "sign", nodes=200, scheme="tanh-sinh", lam_max_factor=1e6)
    assert r.scheme == "tanh-sinh"
    assert op.gram.norm(r.matrix - ref) / op.gram.norm(ref) < 1e-6


def test_quadrature_tanh_sinh_refuses_short_window(flat8):
    with pytest.raises(QuadratureError):
        resolvent_functional(flat8.operator(0.0), "sign", nodes=200, scheme="tanh-sinh")


def test_quadrature_auto_falls_back(flat8):
    r = resolvent_functional(flat8.operator(0.0), "sign", nodes=200, scheme="auto")
    assert r.scheme == "tangent"


def test_quadrature_inverse_sqrt_pattern():
    H = np.diag([1.0, -1.0, 2.0, -2.0])
    r = resolvent_functional(H, "inv_sqrt_sq_plus_1", nodes=64, gram=Gram(np.eye(4)))
    expect = [2 ** -0.5, 2 ** -0.5, 5 ** -0.5, 5 ** -0.5]
    assert np.allclose(np.diag(r.matrix).real, expect, atol=1e-10)


@pytest.mark.parametrize("kind,f", [("sign", np.sign), ("inv_abs", lambda w: 1 / np.abs(w)),
                                    ("inv_sqrt_sq_plus_1", lambda w: (w * w + 1) ** -0.5)])
def test_quadrature_matches_eig_on_bump(kind, f):
    m = ReducedModel(bump(mu=1.5), GridSpec(32))
    op = m.operator(0.4)
    ref = apply_function(op.matrix, op.gram, f)
    r = resolvent_functional(op, kind, nodes=400)
    assert op.gram.norm(r.matrix - ref) / op.gram.norm(ref) < 1e-6


def test_s_operator_zero():
    assert np.allclose(s_operator(np.zeros((4, 4)), Gram(np.eye(4))), np.eye(4))


def test_s_operator_flat_blocks(flat8):
    g = GridSpec(8)
    S = s_operator(flat8.operator(0.0))
    H = flat8.H(0.0)
    for i, k in enumerate(g.wavenumbers):
        ev = np.sort(np.linalg.eigvals(fourier_mode_block(S, g, i)).real)
        assert np.allclose(ev, math.sqrt(k * k + 2), atol=1e-12)
    assert np.abs(S @ H - H @ S).max() < 1e-10
