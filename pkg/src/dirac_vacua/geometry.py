"""Asymptotically static metric families on R x S^1 and their reductions.

The metric is ``g = -c^2 dt^2 + h (dx - b dt)^2`` with mass ``m``.  Fields are
closed-form evaluators ``f(t, x)`` taking a scalar time and an array of
positions.  Catalog families accept complex ``t`` so that time derivatives can
be taken by the complex-step rule.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import solve_ivp

from .diagnostics import PowerFit, japanese_bracket, power_fit
from .errors import (FlowIntegrationFailure, InsufficientData, InvalidMetric,
                     ReductionOrderViolation)

Field = Callable[[float, np.ndarray], np.ndarray]
Profile = Callable[[np.ndarray], np.ndarray]

FIELDS = ("h", "c", "b", "m")
SIDES = ("out", "in")


def _bracket(t):
    return np.sqrt(1.0 + t * t)


def _constant(value: float) -> Field:
    return lambda t, x: np.full(np.shape(x), value, dtype=np.result_type(t, float))


def _constant_profile(value: float) -> Profile:
    return lambda x: np.full(np.shape(x), float(value))


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class GridSpec:
    """Equispaced periodic grid on the circle of circumference ``L``."""

    points: int
    circumference: float = 2 * math.pi
    t_max: float = 640.0
    antiperiodic: bool = False

    def __post_init__(self):
        if not isinstance(self.points, (int, np.integer)) or self.points <= 0 or self.points % 2:
            raise ValueError(f"points must be an even positive integer, got {self.points!r}")
        if self.circumference <= 0:
            raise ValueError("circumference must be positive")

    @property
    def M(self) -> int:
        return int(self.points)

    @property
    def L(self) -> float:
        return float(self.circumference)

    @property
    def dx(self) -> float:
        return self.L / self.M

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.M) * self.dx

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Wavenumbers in FFT order; the antiperiodic structure shifts by pi/L."""
        k = np.fft.fftfreq(self.M, d=self.dx) * 2 * math.pi
        if self.antiperiodic:
            k = k + math.pi / self.L
        return k

    @cached_property
    def abs_k2(self) -> np.ndarray:
        """|k| per column of a component-major 2M vector."""
        a = np.abs(self.wavenumbers)
        return np.concatenate([a, a])

    @cached_property
    def derivative(self) -> np.ndarray:
        """Dense spectral derivative F^{-1} diag(ik) F (anti-Hermitian)."""
        eye = np.eye(self.M)
        return np.fft.ifft(1j * self.wavenumbers[:, None] * np.fft.fft(eye, axis=0), axis=0)

    def to_dict(self) -> dict:
        return {"points": self.M, "circumference": self.L, "t_max": self.t_max,
                "antiperiodic": self.antiperiodic}


# ---------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class MetricFamily:
    name: str
    h: Field
    c: Field
    b: Field
    m: Field
    profiles: Mapping[str, Profile]
    mu: float
    shift_free: bool = True
    lapse_trivial: bool = True
    lapse_static: bool = True
    static: bool = False
    analytic: bool = True
    params: Mapping = field(default_factory=dict)
    conformal_factor: Field | None = None

    def field(self, name: str) -> Field:
        if name not in FIELDS:
            raise KeyError(name)
        return getattr(self, name)

    def profile(self, name: str, side: str) -> Profile:
        """Asymptotic profile of field ``name`` (``h``, ``c`` or ``m``) as t -> +/-inf."""
        if side not in SIDES:
            raise ValueError(f"side must be 'out' or 'in', got {side!r}")
        return self.profiles[f"{name}_{side}"]

    @property
    def reduced(self) -> bool:
        return self.shift_free and self.lapse_trivial

    def fingerprint(self) -> str:
        payload = json.dumps({"name": self.name, "mu": self.mu, "params": dict(self.params),
                              "shift_free": self.shift_free, "lapse_trivial": self.lapse_trivial},
                             sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()


def time_derivative(family: MetricFamily, name: str, t: float, x) -> np.ndarray:
    """d/dt of a field: complex step for analytic families, 4th-order differences otherwise."""
    f = family.field(name)
    x = np.asarray(x, dtype=float)
    if family.analytic:
        eps = 1e-20
        return np.imag(f(t + 1j * eps, x)) / eps
    d = 1e-3 * float(_bracket(t))
    vals = [np.real(f(t + j * d, x)) for j in (-2, -1, 1, 2)]
    return (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * d)


def space_derivative(f: Field, t: float, x, analytic: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if analytic:
        eps = 1e-20
        return np.imag(f(t, x + 1j * eps)) / eps
    d = 1e-4
    return (f(t, x - 2 * d) - 8 * f(t, x - d) + 8 * f(t, x + d) - f(t, x + 2 * d)) / (12 * d)


def flat(m0: float = 1.0, h0: float = 1.0) -> MetricFamily:
    """Static flat family h = h0, m = m0."""
    profiles = {"h_out": _constant_profile(h0), "h_in": _constant_profile(h0),
                "c_out": _constant_profile(1.0), "c_in": _constant_profile(1.0),
                "m_out": _constant_profile(m0), "m_in": _constant_profile(m0)}
    return MetricFamily("flat", _constant(h0), _constant(1.0), _constant(0.0), _constant(m0),
                        profiles, mu=math.inf, static=True, params={"m0": m0, "h0": h0})


def bump(mu: float = 1.5, m0: float = 1.0, a_h: float = 0.3, a_m: float = 0.2,
         asym: float = 0.5, lapse_amp: float = 0.0) -> MetricFamily:
    """Localized-in-time bump of h and m around the flat metric.

    ``asym`` makes the profile time-asymmetric (in and out states differ);
    ``lapse_amp`` adds a static lapse ``c = 1 + lapse_amp sin x``.
    """
    def h(t, x):
        return 1.0 + a_h * (1.0 + asym * np.tanh(t)) * np.cos(x) * _bracket(t) ** (-mu)

    def m(t, x):
        return m0 + a_m * np.sin(x) * _bracket(t) ** (-mu)

    def c(t, x):
        return 1.0 + lapse_amp * np.sin(x) + 0.0 * t

    profiles = {"h_out": _constant_profile(1.0), "h_in": _constant_profile(1.0),
                "m_out": _constant_profile(m0), "m_in": _constant_profile(m0),
                "c_out": lambda x: 1.0 + lapse_amp * np.sin(x),
                "c_in": lambda x: 1.0 + lapse_amp * np.sin(x)}
    return MetricFamily("bump", h, c, _constant(0.0), m, profiles, mu=mu,
                        lapse_trivial=lapse_amp == 0.0,
                        params={"mu": mu, "m0": m0, "a_h": a_h, "a_m": a_m, "asym": asym,
                                "lapse_amp": lapse_amp})


def cosmological_ramp(mu: float = 1.5, m0: float = 1.0, h_in: float = 1.0,
                      h_out: float = 2.0) -> MetricFamily:
    """Spatially homogeneous expansion from h_in to h_out (x-independent)."""
    mid, half = 0.5 * (h_in + h_out), 0.5 * (h_out - h_in)

    def h(t, x):
        jt = _bracket(t)
        return mid + half * (t / jt) * (1.0 - jt ** (-mu)) + 0.0 * np.asarray(x)

    profiles = {"h_out": _constant_profile(h_out), "h_in": _constant_profile(h_in),
                "c_out": _constant_profile(1.0), "c_in": _constant_profile(1.0),
                "m_out": _constant_profile(m0), "m_in": _constant_profile(m0)}
    return MetricFamily("cosmological-ramp", h, _constant(1.0), _constant(0.0), _constant(m0),
                        profiles, mu=mu, params={"mu": mu, "m0": m0, "h_in": h_in, "h_out": h_out})


def shifted(mu: float = 1.5, m0: float = 1.0, b0: float = 0.1, lapse_amp: float = 0.25,
            a_h: float = 0.3, a_m: float = 0.2, asym: float = 0.5) -> MetricFamily:
    """Bump family with a decaying shift and a static lapse."""
    base = bump(mu=mu, m0=m0, a_h=a_h, a_m=a_m, asym=asym, lapse_amp=lapse_amp)

    def b(t, x):
        return b0 * np.sin(x) * _bracket(t) ** (-1.0 - mu)

    params = dict(base.params, b0=b0)
    return replace(base, name="shifted", b=b, shift_free=b0 == 0.0, params=params)


def _series(coeffs, x):
    out = np.zeros(np.shape(x), dtype=np.result_type(x, float))
    for n, a, bb in coeffs:
        out = out + a * np.cos(n * x) + bb * np.sin(n * x)
    return out


def table(spec: Mapping, mu: float) -> MetricFamily:
    """Family from Fourier coefficient tables.

    ``spec[name] = {"static": [[n, a_n, b_n], ...], "decaying": [...], "asym": s}``
    gives ``f = S(x) + (1 + s tanh t) D(x) <t>^{-p}`` with ``p = mu`` for h, c, m
    and ``p = 1 + mu`` for the shift b.  Missing fields default to h = c = 1,
    b = 0, m = 1.
    """
    defaults = {"h": [[0, 1.0, 0.0]], "c": [[0, 1.0, 0.0]], "b": [], "m": [[0, 1.0, 0.0]]}
    fields, profiles = {}, {}
    decaying_any = {}
    for name in FIELDS:
        entry = spec.get(name, {})
        stat = [tuple(r) for r in entry.get("static", defaults[name])]
        dec = [tuple(r) for r in entry.get("decaying", [])]
        asym = float(entry.get("asym", 0.0))
        p = mu + 1.0 if name == "b" else mu
        decaying_any[name] = bool(dec)

        def make(stat=stat, dec=dec, asym=asym, p=p):
            def f(t, x):
                return _series(stat, x) + (1.0 + asym * np.tanh(t)) * _series(dec, x) * _bracket(t) ** (-p)
            return f

        fields[name] = make()
        if name != "b":
            for side in SIDES:
                profiles[f"{name}_{side}"] = (lambda s: (lambda x: _series(s, x)))(stat)
    trivial_c = [tuple(r) for r in spec.get("c", {}).get("static", defaults["c"])] == [(0, 1.0, 0.0)]
    return MetricFamily(
        "table", fields["h"], fields["c"], fields["b"], fields["m"], profiles, mu=mu,
        shift_free=not decaying_any["b"] and not spec.get("b", {}).get("static"),
        lapse_trivial=trivial_c and not decaying_any["c"],
        lapse_static=not decaying_any["c"],
        static=not any(decaying_any.values()),
        params={"table": json.loads(json.dumps(spec)), "mu": mu})


CATALOG = {"flat": flat, "bump": bump, "cosmological-ramp": cosmological_ramp,
           "shifted": shifted}


def make_family(name: str, **params) -> MetricFamily:
    if name == "table":
        return table(params.get("table", {}), float(params.get("mu", 1.5)))
    try:
        factory = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown family {name!r}; known: {sorted(CATALOG) + ['table']}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# decay verification


@dataclass(frozen=True)
class DecayEntry:
    field: str
    side: str
    order: int
    required: float
    fit: PowerFit | None
    compliant: bool

    @property
    def exponent(self) -> float:
        return math.inf if self.fit is None or self.fit.exact else self.fit.exponent

    def to_dict(self) -> dict:
        return {"field": self.field, "side": self.side, "order": self.order,
                "required": self.required,
                "exponent": "exact" if math.isinf(self.exponent) else self.exponent,
                "ci95": None if self.fit is None else self.fit.ci95,
                "compliant": self.compliant}


@dataclass(frozen=True)
class DecayReport:
    mu: float
    entries: tuple

    @property
    def compliant(self) -> bool:
        return all(e.compliant for e in self.entries)

    def get(self, field: str, side: str = "out", order: int = 0) -> DecayEntry:
        for e in self.entries:
            if (e.field, e.side, e.order) == (field, side, order):
                return e
        raise KeyError((field, side, order))

    def to_dict(self) -> dict:
        return {"mu": self.mu, "compliant": self.compliant,
                "entries": [e.to_dict() for e in self.entries]}


def _check_positive(family: MetricFamily, grid: GridSpec, t_samples) -> None:
    x = grid.nodes
    for t in t_samples:
        for name in ("h", "c"):
            v = np.real(family.field(name)(float(t), x))
            if not np.all(v > 0):
                raise InvalidMetric(f"{name} is not positive at t={t}")
    for name in ("h", "c"):
        for side in SIDES:
            if not np.all(family.profile(name, side)(x) > 0):
                raise InvalidMetric(f"asymptotic {name} ({side}) is not positive")


def verify_decay(family: MetricFamily, grid: GridSpec, t_samples, slack: float = 0.2,
                 zero_tol: float = 1e-13) -> DecayReport:
    """Fit sup_x |d_t^k (f - f_inf)| ~ <t>^{-rho} for k in {0, 1} on each side."""
    t_samples = np.asarray(sorted(float(t) for t in t_samples))
    if len(t_samples) < 4:
        raise InsufficientData(f"need at least 4 time samples, got {len(t_samples)}")
    _check_positive(family, grid, t_samples)
    x = grid.nodes
    entries = []
    mu = family.mu
    for side, sel in (("out", t_samples > 0), ("in", t_samples < 0)):
        ts = t_samples[sel]
        if len(ts) < 4:
            continue
        jt = japanese_bracket(ts)
        if jt.max() / jt.min() < 10 * (1 - 1e-9):
            raise InsufficientData(f"{side} samples span less than one decade")
        for name in FIELDS:
            f = family.field(name)
            ref = np.zeros_like(x) if name == "b" else family.profile(name, side)(x)
            base = 1.0 + mu if name == "b" else mu
            scale = max(1.0, float(np.max(np.abs(ref))))
            for order in (0, 1):
                if order == 0:
                    vals = [np.max(np.abs(np.real(f(t, x)) - ref)) for t in ts]
                else:
                    vals = [np.max(np.abs(time_derivative(family, name, t, x))) for t in ts]
                vals = np.asarray(vals)
                required = base + order
                if np.all(vals <= zero_tol * scale):
                    fit, ok = None, True
                else:
                    fit = power_fit(jt, vals, zero_tol=zero_tol * scale)
                    ok = fit.exact or fit.exponent >= required - slack
                entries.append(DecayEntry(name, side, order, required, fit, bool(ok)))
    if not entries:
        raise InsufficientData("no side has at least 4 samples")
    return DecayReport(mu, tuple(entries))


# ---------------------------------------------------------------------------
# reductions


def conformal_reduce(family: MetricFamily) -> MetricFamily:
    """Divide the metric by c^2: h -> h/c^2, m -> c m, c -> 1."""
    if not family.shift_free:
        raise ReductionOrderViolation("remove the shift before the conformal reduction")
    if family.lapse_trivial:
        return family
    h, c, m = family.h, family.c, family.m
    p = family.profiles
    profiles = dict(p)
    for side in SIDES:
        profiles[f"h_{side}"] = (lambda hp, cp: (lambda x: hp(x) / cp(x) ** 2))(p[f"h_{side}"], p[f"c_{side}"])
        profiles[f"m_{side}"] = (lambda mp, cp: (lambda x: mp(x) * cp(x)))(p[f"m_{side}"], p[f"c_{side}"])
        profiles[f"c_{side}"] = _constant_profile(1.0)
    return replace(family,
                   name=family.name + "~conformal",
                   h=lambda t, x: h(t, x) / c(t, x) ** 2,
                   m=lambda t, x: m(t, x) * c(t, x),
                   c=_constant(1.0),
                   profiles=profiles,
                   lapse_trivial=True, lapse_static=True,
                   conformal_factor=family.conformal_factor or c)


class FlowMap:
    """Solutions x = X(t, y) of dx/dt = b(t, x) with X(0, y) = y, plus J = dX/dy."""

    def __init__(self, family: MetricFamily, window: float, rtol: float = 1e-11,
                 atol: float = 1e-13):
        self.family = family
        self.window = float(window)
        self.rtol, self.atol = rtol, atol
        self._cache: dict = {}

    def _rhs(self, t, state):
        n = state.size // 2
        X, J = state[:n], state[n:]
        b = np.real(self.family.b(t, X))
        bx = space_derivative(self.family.b, t, X, analytic=self.family.analytic)
        return np.concatenate([b, bx * J])

    def _solve(self, y, t_end):
        y0 = np.concatenate([y, np.ones_like(y)])
        sol = solve_ivp(self._rhs, (0.0, t_end), y0, method="DOP853", rtol=self.rtol,
                        atol=self.atol, dense_output=True)
        if not sol.success:
            raise FlowIntegrationFailure(f"flow integration to t={t_end} failed: {sol.message}")
        return sol

    def _asymptote(self, y, sign):
        # continue from |t| = 1 in the log-time variable s = ln|t|
        start = self._entry(y)[sign](sign * 1.0)
        mu = self.family.mu
        s_max = min(35.0 / max(mu, 1e-3), 300.0)

        def rhs(s, state):
            t = sign * math.exp(s)
            return t * self._rhs(t, state)

        sol = solve_ivp(rhs, (0.0, s_max), start, method="DOP853", rtol=self.rtol,
                        atol=self.atol)
        if not sol.success:
            raise FlowIntegrationFailure(f"asymptotic flow integration failed: {sol.message}")
        return sol.y[:, -1]

    def _entry(self, y):
        key = np.asarray(y, dtype=float).tobytes()
        entry = self._cache.get(key)
        if entry is None:
            w = max(self.window, 1.0)
            entry = {1: self._solve(y, w).sol, -1: self._solve(y, -w).sol, "w": w}
            self._cache[key] = entry
        return entry

    def __call__(self, t: float, y) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=float)
        t = float(np.real(t))
        if t == 0.0:
            return y.copy(), np.ones_like(y)
        entry = self._entry(y)
        if abs(t) > entry["w"]:
            key = y.tobytes()
            w = max(2 * entry["w"], abs(t))
            entry = {1: self._solve(y, w).sol, -1: self._solve(y, -w).sol, "w": w}
            self._cache[key] = entry
        state = entry[1 if t > 0 else -1](t)
        n = y.size
        return state[:n], state[n:]

    def limit(self, side: str, y) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=float)
        key = ("limit", side, y.tobytes())
        if key not in self._cache:
            state = self._asymptote(y, 1 if side == "out" else -1)
            n = y.size
            self._cache[key] = (state[:n], state[n:])
        return self._cache[key]


def shift_flow_reduce(family: MetricFamily, grid: GridSpec, rtol: float = 1e-11) -> MetricFamily:
    """Pull the family back along the flow of the shift so that b vanishes.

    With x = X(t, y) and J = dX/dy the metric becomes
    ``-c(t,X)^2 dt^2 + h(t,X) J^2 dy^2``.
    """
    if family.shift_free:
        return family
    flow = FlowMap(family, grid.t_max, rtol=rtol)
    h, c, m = family.h, family.c, family.m

    def pulled(f, with_jacobian=False):
        def g(t, y):
            X, J = flow(t, y)
            v = np.real(f(float(np.real(t)), X))
            return v * J ** 2 if with_jacobian else v
        return g

    profiles = {}
    for side in SIDES:
        hp, cp, mp = (family.profile(n, side) for n in ("h", "c", "m"))

        def mk(fp, jac, side=side):
            def prof(y):
                X, J = flow.limit(side, y)
                return fp(X) * J ** 2 if jac else fp(X)
            return prof

        profiles[f"h_{side}"] = mk(hp, True)
        profiles[f"c_{side}"] = mk(cp, False)
        profiles[f"m_{side}"] = mk(mp, False)
    reduced = replace(family, name=family.name + "~flow", h=pulled(h, True), c=pulled(c),
                      m=pulled(m), b=_constant(0.0), profiles=profiles, shift_free=True,
                      lapse_static=family.lapse_trivial, analytic=False)
    return reduced


def reduce_family(family: MetricFamily, grid: GridSpec) -> MetricFamily:
    """Shift-flow reduction followed by the conformal reduction."""
    return conformal_reduce(shift_flow_reduce(family, grid))


def christoffel_time(family: MetricFamily, t: float, x) -> dict:
    """Time Christoffel symbols of -dt^2 + h dx^2: G^1_01 = h_t/(2h), G^0_11 = h_t/2."""
    if not family.reduced:
        raise ReductionOrderViolation("christoffel_time needs c = 1 and b = 0")
    x = np.asarray(x, dtype=float)
    ht = time_derivative(family, "h", t, x)
    h = np.real(family.h(t, x))
    return {"Gamma1_01": 0.5 * ht / h, "Gamma0_11": 0.5 * ht}
