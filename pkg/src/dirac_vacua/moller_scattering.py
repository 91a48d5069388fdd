"""Long-time limits c+/- = lim U(0,T) 1_{R+/-}(H_inf) U(T,0) and their acceleration."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .adiabatic_projections import CorrectionLattice, MODES
from .diagnostics import PowerFit, japanese_bracket, power_fit
from .errors import NoConvergence
from .evolution import Propagator, lifted_gram
from .functional_calculus import spectral_projection, sym_eigh
from .operator_assembly import Gram, ReducedModel

DIRECTIONS = ("out", "in")


@dataclass
class ScatteringResult:
    c_plus: np.ndarray
    c_minus: np.ndarray
    gram: Gram
    direction: str
    schedule: tuple
    residuals: tuple
    mu_hat: float
    tail_bound: float
    lifted: bool = False
    method: str = "moller"
    extras: dict = field(default_factory=dict)

    def identities(self) -> dict:
        cp, cm, G = self.c_plus, self.c_minus, self.gram
        n = cp.shape[0]
        return {
            "idempotent_plus": G.norm(cp @ cp - cp),
            "idempotent_minus": G.norm(cm @ cm - cm),
            "completeness": G.norm(cp + cm - np.eye(n)),
            "selfadjoint_plus": G.norm(cp - G.adjoint(cp)),
            "selfadjoint_minus": G.norm(cm - G.adjoint(cm)),
        }

    def summary(self) -> dict:
        out = {"direction": self.direction, "method": self.method,
               "schedule": list(self.schedule), "residuals": list(self.residuals),
               "mu_hat": _json_float(self.mu_hat), "tail_bound": _json_float(self.tail_bound),
               "lifted": self.lifted, "identities": self.identities()}
        for k, v in self.extras.items():
            if isinstance(v, (int, float, str, bool)) or v is None:
                out[k] = _json_float(v) if isinstance(v, float) else v
            elif isinstance(v, (list, tuple)):
                out[k] = [_json_float(x) if isinstance(x, float) else x for x in v]
        return out


def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def default_schedule(t_max: float, t_first: float = 10.0, ratio: float = 2.0) -> tuple:
    out, T = [], t_first
    while T <= t_max * (1 + 1e-12):
        out.append(float(T))
        T *= ratio
    return tuple(out)


def purify(A: np.ndarray, gram: Gram) -> np.ndarray:
    """Nearest Gram-orthogonal projection: 1_{(1/2, inf)} of the selfadjoint part."""
    w, Q = sym_eigh(gram.hermitize(A), gram)
    Qs = Q[:, w > 0.5]
    return gram.from_sym(Qs @ Qs.conj().T)


def _signed(direction: str, T: float) -> float:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    return abs(T) if direction == "out" else -abs(T)


def _richardson(seq, ratio: float, gram: Gram, spread_max: float = 0.3):
    """Extrapolate a geometric-in-T sequence assuming a single-power tail."""
    inc = [gram.norm(seq[i + 1] - seq[i]) for i in range(len(seq) - 1)]
    est = [math.log(inc[i] / inc[i + 1]) / math.log(ratio)
           for i in range(len(inc) - 1) if inc[i] > 0 and inc[i + 1] > 0]
    info = {"increments": inc, "exponent_estimates": est}
    if not inc or inc[-1] == 0.0:
        info.update(extrapolated=False, exponent=math.inf)
        return seq[-1], 0.0, info
    if len(est) >= 2 and np.var(est[-3:]) <= spread_max and min(est[-3:]) > 0:
        p = float(np.mean(est[-3:]))
        limit = seq[-1] + (seq[-1] - seq[-2]) / (ratio ** p - 1.0)
        p_cons = max(min(est[-3:]), 0.25)
        info.update(extrapolated=True, exponent=p)
    else:
        limit = seq[-1]
        p_cons = max(min(est[-3:]) if est else 0.25, 0.25)
        info.update(extrapolated=False, exponent=float(np.mean(est[-3:])) if est else math.nan)
    # the extrapolation step is only trusted up to its own size: increments need
    # not be aligned in operator space, so the bound is ||limit - B_N|| + tail(B_N)
    tail = gram.norm(limit - seq[-1]) + inc[-1] / (ratio ** p_cons - 1.0)
    return limit, tail, info


def moller_projection(model: ReducedModel, prop: Propagator, side: str = "+",
                      direction: str = "out", schedule=None, purify_result: bool = True,
                      zero_tol: float = 1e-10) -> ScatteringResult:
    """Moller limit of the evolved asymptotic projection.

    The raw sequence A_j = U(0,T_j) P_inf U(T_j,0) converges like T^{-mu}.  The
    limit is taken from the adiabatic sequence B_j = U(0,T_j) P(T_j) U(T_j,0),
    which has the same limit but converges faster, extrapolated when its
    increments follow a single power.  mu_hat is fitted to ||A_j - limit||.
    """
    gram = model.gram
    schedule = tuple(schedule or default_schedule(model.grid.t_max))
    if len(schedule) < 3:
        raise NoConvergence("schedule needs at least three times")
    ratio = schedule[1] / schedule[0]
    P_inf = spectral_projection(model.H_asymptotic(direction), side, gram)
    A_seq, B_seq = [], []
    for T in schedule:
        Ts = _signed(direction, T)
        U = prop.U_from_zero(Ts)
        Ui = gram.adjoint(U)
        A_seq.append(Ui @ P_inf @ U)
        P_T = spectral_projection(model.H(Ts), side, gram)
        B_seq.append(Ui @ P_T @ U)
    limit, tail, rich = _richardson(B_seq, ratio, gram)
    c_side = purify(limit, gram) if purify_result else limit
    purification_shift = gram.norm(c_side - limit)
    errors = np.array([gram.norm(A - c_side) for A in A_seq])
    increments = np.array([gram.norm(A_seq[i + 1] - A_seq[i]) for i in range(len(A_seq) - 1)])
    fit = power_fit(schedule, errors, zero_tol=zero_tol)
    mu_hat = math.inf if fit.exact else fit.exponent
    inc_fit = power_fit(schedule[:-1], increments, zero_tol=zero_tol) if len(increments) >= 3 else None
    if not fit.exact and mu_hat <= 0.05:
        raise NoConvergence(f"A_j does not decay (fitted exponent {mu_hat:.3f}); "
                            "check the decay report and the asymptotic gap")
    n = gram.n
    other = np.eye(n) - c_side
    c_plus, c_minus = (c_side, other) if side == "+" else (other, c_side)
    extras = {
        "side": side,
        "errors": errors.tolist(),
        "mu_hat_ci95": fit.ci95,
        "mu_hat_increments": (math.inf if inc_fit is None or inc_fit.exact else inc_fit.exponent),
        "adiabatic_increments": rich["increments"],
        "adiabatic_exponents": rich["exponent_estimates"],
        "extrapolated": rich["extrapolated"],
        "purification_shift": purification_shift,
        "max_drift": prop.max_drift(),
    }
    return ScatteringResult(c_plus, c_minus, gram, direction, schedule, tuple(increments.tolist()),
                            mu_hat, tail + purification_shift, extras=extras)


# ---------------------------------------------------------------------------
# Cook integral


def _filon_weights(z: np.ndarray, dt: float):
    """int_0^dt e^{z tau/dt} dtau and int_0^dt (tau/dt) e^{z tau/dt} dtau."""
    small = np.abs(z) < 1e-3
    zz = np.where(small, 1.0, z)
    ez = np.exp(zz)
    phi0 = np.where(small, 1 + z / 2 + z * z / 6 + z ** 3 / 24, (ez - 1) / zz)
    phi1 = np.where(small, 0.5 + z / 3 + z * z / 8 + z ** 3 / 30, (ez * (zz - 1) + 1) / zz ** 2)
    return dt * phi0, dt * phi1


def _coarse_indices(nodes, spacing0: float, growth_start: float = 10.0):
    idx = [0]
    for i in range(1, len(nodes)):
        t_last = nodes[idx[-1]]
        if abs(nodes[i] - t_last) >= spacing0 * max(1.0, float(japanese_bracket(t_last)) / growth_start):
            idx.append(i)
    if idx[-1] != len(nodes) - 1:
        idx.append(len(nodes) - 1)
    return idx


def cook_accelerated_limit(model: ReducedModel, prop: Propagator, side: str = "+",
                           direction: str = "out", T: float | None = None, order: int = 1,
                           mode: str = "paper_leading", coarse_dt0: float = 0.1,
                           h_rel: float = 1e-3, fit_from: float = 5.0,
                           purify_result: bool = True) -> ScatteringResult:
    """P~(0) + int_0^{+/-T} U(0,t) (dP~ + [P~, iH]) U(t,0) dt with a Filon-type rule.

    On each propagator step the evolution is exp(i tau H_mid); the integrand is
    interpolated linearly in tau and the oscillatory factors are integrated
    exactly in the eigenbasis of H_mid.  The integrand itself is evaluated on a
    coarser subset of nodes and interpolated (cubic Lagrange) to the step ends.
    """
    if mode not in MODES:
        raise ValueError(mode)
    gram = model.gram
    T = _signed(direction, T if T is not None else model.grid.t_max)
    n = gram.n
    eye = np.eye(n)
    lat0 = CorrectionLattice(model, 0.0, mode, h_rel=h_rel)
    Pt0 = lat0.corrected_projection(order)
    nodes = prop.nodes(T)
    coarse = _coarse_indices(nodes, coarse_dt0)
    coarse_t = [nodes[i] for i in coarse]
    cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    norms: list[tuple[float, float]] = []

    def coarse_values(ci: int):
        if ci not in cache:
            t = coarse_t[ci]
            lat = lat0 if t == 0.0 else CorrectionLattice(model, t, mode, h_rel=h_rel)
            D = lat.integrand_original(order)
            cache[ci] = (D, lat.corrected_projection(order))
            norms.append((t, gram.norm(D)))
            for old in [k for k in cache if k < ci - 4]:
                del cache[old]
        return cache[ci]

    abs_ct = [abs(v) for v in coarse_t]

    def interpolate(t: float):
        """Cubic Lagrange interpolation of (D, P~) between coarse nodes."""
        i = bisect.bisect_right(abs_ct, abs(t)) - 1
        i = min(max(i, 0), len(coarse_t) - 2)
        for k in (i, i + 1):
            if coarse_t[k] == t:
                return coarse_values(k)
        lo = min(max(i - 1, 0), max(len(coarse_t) - 4, 0))
        idx = list(range(lo, min(lo + 4, len(coarse_t))))
        ts = [coarse_t[k] for k in idx]
        D = Pt = 0
        for a, k in enumerate(idx):
            wgt = 1.0
            for b, tb in enumerate(ts):
                if b != a:
                    wgt *= (t - tb) / (ts[a] - tb)
            Dk, Pk = coarse_values(k)
            D = D + wgt * Dk
            Pt = Pt + wgt * Pk
        return D, Pt

    def step_integrand(t: float, H_mid: np.ndarray) -> np.ndarray:
        # within a step the propagator is generated by H_mid, so the exact
        # derivative of U(0,t) P~ U(t,0) carries [P~, i(H_mid - H(t))] as well
        D, Pt = interpolate(t)
        dH = H_mid - model.H(t)
        return D + 1j * (Pt @ dH - dH @ Pt)

    integral = np.zeros((n, n), dtype=complex)
    partial = {}
    sched = [s for s in default_schedule(abs(T)) if s < abs(T)] + [abs(T)]
    U_last = None
    for step in prop.walk(T):
        dt = step.t1 - step.t0
        H_mid = prop.generator(0.5 * (step.t0 + step.t1))
        w, Q = step.values, step.vectors
        Y0 = Q.conj().T @ gram.to_sym(step_integrand(step.t0, H_mid)) @ Q
        Y1 = Q.conj().T @ gram.to_sym(step_integrand(step.t1, H_mid)) @ Q
        z = -1j * (w[:, None] - w[None, :]) * dt
        f0, f1 = _filon_weights(z, dt)
        seg = gram.from_sym(Q @ (Y0 * f0 + (Y1 - Y0) * f1) @ Q.conj().T)
        U0 = step.U0
        integral += gram.adjoint(U0) @ seg @ U0
        for s in sched:
            if s not in partial and abs(step.t1) >= s * (1 - 1e-12):
                partial[s] = integral.copy()
        U_last = (w, Q, dt, U0)
    w, Q, dt, U0 = U_last
    U_T = gram.from_sym((Q * np.exp(1j * dt * w)) @ Q.conj().T) @ U0
    latT = CorrectionLattice(model, T, mode, h_rel=h_rel)
    PtT = latT.corrected_projection(order)
    ftc = gram.adjoint(U_T) @ PtT @ U_T - Pt0
    quad_gap = gram.norm(ftc - integral)
    raw = Pt0 + integral
    ts = np.array([abs(t) for t, _ in norms])
    vals = np.array([v for _, v in norms])
    sel = ts >= fit_from
    fit: PowerFit | None = None
    rho = math.nan
    if sel.sum() >= 4:
        fit = power_fit(japanese_bracket(ts[sel]), vals[sel], zero_tol=1e-300)
        rho = math.inf if fit.exact else fit.exponent
    last_norm = gram.norm(interpolate(T)[0])
    if np.all(vals == 0):
        tail = 0.0
        rho = math.inf
    elif math.isfinite(rho) and rho > 1.0:
        tail = last_norm * abs(T) / (rho - 1.0)
    else:
        tail = math.inf
    c_plus_raw = raw if side == "+" else eye - raw
    c_plus = purify(c_plus_raw, gram) if purify_result else c_plus_raw
    purification_shift = gram.norm(c_plus - c_plus_raw)
    seq = [Pt0 + partial[s] for s in sched if s in partial]
    increments = [gram.norm(seq[i + 1] - seq[i]) for i in range(len(seq) - 1)]
    extras = {
        "side": side, "order": order, "mode": mode,
        "integrand_exponent": rho,
        "integrand_exponent_ci95": None if fit is None else fit.ci95,
        "integrand_norms": vals.tolist(), "integrand_times": ts.tolist(),
        "ftc_discrepancy": quad_gap,
        "purification_shift": purification_shift,
        "coarse_nodes": len(coarse_t),
        "max_drift": prop.max_drift(),
    }
    return ScatteringResult(c_plus, eye - c_plus, gram, direction, tuple(sched),
                            tuple(increments), rho - 1.0 if math.isfinite(rho) else rho,
                            tail + quad_gap + purification_shift, method="cook", extras=extras)


def lift_to_physical(result: ScatteringResult, c0: np.ndarray, n: int = 2) -> ScatteringResult:
    """c -> c0^{(1-n)/2} c c0^{(n-1)/2}; the Gram becomes the physical one."""
    p = 0.5 * (n - 1)
    c0 = np.asarray(c0, dtype=float)
    left = np.concatenate([c0, c0]) ** (-p)
    right = np.concatenate([c0, c0]) ** p

    def lift(c):
        return (left[:, None] * c) * right[None, :]

    return replace(result, c_plus=lift(result.c_plus), c_minus=lift(result.c_minus),
                   gram=lifted_gram(result.gram, c0, n), lifted=True)
