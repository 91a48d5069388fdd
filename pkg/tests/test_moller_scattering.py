import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirac_vacua.errors import NoConvergence
from dirac_vacua.evolution import Propagator
from dirac_vacua.functional_calculus import spectral_projection
from dirac_vacua.geometry import GridSpec, bump, conformal_reduce, flat
from dirac_vacua.moller_scattering import (cook_accelerated_limit, default_schedule,
                                           lift_to_physical, moller_projection, purify)
from dirac_vacua.operator_assembly import Gram, ReducedModel


@pytest.fixture(scope="module")
def bump_long():
    m = ReducedModel(bump(mu=1.5), GridSpec(16, t_max=640))
    p = Propagator(m.H, m.gram)
    return m, p, moller_projection(m, p, "+", "out", default_schedule(640))


@pytest.fixture(scope="module")
def flat_model():
    m = ReducedModel(flat(m0=1.0), GridSpec(16, t_max=40))
    return m, Propagator(m.H, m.gram)


def test_default_schedule():
    assert default_schedule(640) == (10, 20, 40, 80, 160, 320, 640)
    assert default_schedule(100, t_first=5, ratio=3) == (5, 15, 45)


def test_static_limit_exact(flat_model):
    m, p = flat_model
    r = moller_projection(m, p, "+", "out", (10.0, 20.0, 40.0))
    P = spectral_projection(m.H(0.0), "+", m.gram)
    assert m.gram.norm(r.c_plus - P) < 1e-9
    assert r.tail_bound < 1e-9
    assert math.isinf(r.mu_hat)


def test_static_out_equals_in(flat_model):
    m, p = flat_model
    out = moller_projection(m, p, "-", "out", (10.0, 20.0, 40.0))
    inn = moller_projection(m, p, "-", "in", (10.0, 20.0, 40.0))
    assert m.gram.norm(out.c_plus - inn.c_plus) < 1e-6


def test_bump_rate(bump_long):
    _, _, r = bump_long
    assert r.mu_hat == pytest.approx(1.5, abs=0.3)


def test_bump_identities(bump_long):
    _, _, r = bump_long
    ids = r.identities()
    assert ids["completeness"] < 1e-6
    assert max(ids.values()) < 1e-6


def test_summary_is_plain_data(bump_long):
    import json
    s = bump_long[2].summary()
    json.dumps(s)
    assert s["direction"] == "out" and s["method"] == "moller"


def test_minus_side_gives_same_pair(bump_long):
    # the result always stores (c+, c-); computing from the negative branch must agree
    m, p, r = bump_long
    rm = moller_projection(m, p, "-", "out", default_schedule(640))
    assert m.gram.norm(rm.c_minus - r.c_minus) < r.tail_bound + rm.tail_bound


def test_schedule_too_short(flat_model):
    m, p = flat_model
    with pytest.raises(NoConvergence):
        moller_projection(m, p, "+", "out", (10.0, 20.0))


def test_direction_validated(flat_model):
    m, p = flat_model
    with pytest.raises(ValueError):
        moller_projection(m, p, "+", "sideways", (10.0, 20.0, 40.0))


def test_tail_bound_covers_schedule_doubling():
    m = ReducedModel(bump(mu=1.5), GridSpec(16, t_max=320))
    p = Propagator(m.H, m.gram)
    short = moller_projection(m, p, "+", "out", (10.0, 20.0, 40.0, 80.0))
    long = moller_projection(m, p, "+", "out", (10.0, 20.0, 40.0, 80.0, 160.0, 320.0))
    assert m.gram.norm(long.c_plus - short.c_plus) <= short.tail_bound


def test_cook_static_is_initial_projection(flat_model):
    m, p = flat_model
    r = cook_accelerated_limit(m, p, "+", "out", T=20.0)
    P = spectral_projection(m.H(0.0), "+", m.gram)
    assert m.gram.norm(r.c_plus - P) < 1e-9


def test_cook_agrees_with_moller(bump_long):
    m, p, r = bump_long
    c = cook_accelerated_limit(m, p, "+", "out", T=640.0)
    assert m.gram.norm(c.c_plus - r.c_plus) <= c.tail_bound + r.tail_bound
    assert c.extras["integrand_exponent"] == pytest.approx(2.5, abs=0.3)


def test_lift_trivial_factors(bump_long):
    m, _, r = bump_long
    for c0 in (np.ones(16), np.full(16, 4.0)):
        lifted = lift_to_physical(r, c0)
        assert np.abs(lifted.c_plus - r.c_plus).max() < 1e-14
        assert lifted.lifted


def test_lift_preserves_projection_identities():
    g = GridSpec(16, t_max=40)
    fam = bump(mu=1.5, lapse_amp=0.5)
    m = ReducedModel(conformal_reduce(fam), g)
    p = Propagator(m.H, m.gram)
    r = moller_projection(m, p, "+", "out", (10.0, 20.0, 40.0))
    lifted = lift_to_physical(r, np.real(fam.c(0.0, g.nodes)))
    assert max(lifted.identities().values()) < 1e-9


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.floats(0.0, 0.05))
def test_purify_recovers_nearby_projection(seed, eps):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)))
    P = Q[:, :3] @ Q[:, :3].conj().T
    noise = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    A = P + eps * noise / np.linalg.norm(noise, 2)
    G = Gram(np.eye(6))
    out = purify(A, G)
    assert np.abs(out @ out - out).max() < 1e-12
    assert np.linalg.norm(out - P, 2) <= 4 * eps + 1e-12
