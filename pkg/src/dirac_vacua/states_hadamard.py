"""Quasi-free state covariances, two-point kernels and high-frequency diagnostics.

Conventions.  A state on a Cauchy surface is a pair of complementary
Gram-selfadjoint projections ``c+`` and ``c-``.  Its covariances are the operators
``lambda± = i gamma(n) c±``.  In the discrete pairing ``(f, g) -> f^* (beta x w) g``,
the matching sesquilinear forms are ``(beta x w) lambda± = G c±``, where ``G`` is the
nu_0 Gram matrix.  The factor ``i beta gamma^0`` is already part of ``G``, so it
must not be applied a second time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import PowerFit, annulus_slope, fourier_blocks, power_fit
from .errors import (HadamardDiagnosticFailure, InsufficientData, KernelObstruction,
                     PositivityViolation)
from .evolution import Propagator, static_exponential
from .functional_calculus import sym_eigh
from .geometry import GridSpec, MetricFamily, reduce_family
from .operator_assembly import Gram, PhysicalModel, ReducedModel
from .spin_algebra import CliffordRep, make_clifford

PROVENANCE = ("in", "out", "vacuum", "instantaneous", "custom")


def _spinor_diag(values: np.ndarray) -> np.ndarray:
    return np.concatenate([values, values])


@dataclass
class StateCovariances:
    c_plus: np.ndarray
    c_minus: np.ndarray
    gram: Gram
    rep: CliffordRep
    provenance: str = "custom"
    diagnostics: dict = field(default_factory=dict)

    @property
    def i_gamma_n(self) -> np.ndarray:
        M = self.gram.n // 2
        return np.kron(self.rep.i_gamma0, np.eye(M))

    @property
    def lambda_plus(self) -> np.ndarray:
        return self.i_gamma_n @ self.c_plus

    @property
    def lambda_minus(self) -> np.ndarray:
        return self.i_gamma_n @ self.c_minus

    def forms(self) -> tuple[np.ndarray, np.ndarray]:
        """Hermitian forms ``G c±`` (the covariances paired with beta)."""
        G = self.gram.matrix
        return G @ self.c_plus, G @ self.c_minus

    def sum_rule_residual(self) -> float:
        ign = self.i_gamma_n
        return float(np.linalg.norm(self.lambda_plus + self.lambda_minus - ign, 2)
                     / np.linalg.norm(ign, 2))

    def purity_residuals(self) -> dict:
        g, cp, cm = self.gram, self.c_plus, self.c_minus
        eye = np.eye(g.n)
        return {
            "idempotent_plus": g.norm(cp @ cp - cp),
            "idempotent_minus": g.norm(cm @ cm - cm),
            "completeness": g.norm(cp + cm - eye),
            "selfadjoint_plus": g.norm(cp - g.adjoint(cp)),
            "selfadjoint_minus": g.norm(cm - g.adjoint(cm)),
        }


def _min_form_eigenvalue(F: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (F + F.conj().T)).min())


def cauchy_covariances(c_plus: np.ndarray, c_minus: np.ndarray, gram: Gram,
                       rep: CliffordRep | None = None, provenance: str = "custom",
                       positivity_tol: float = 1e-8) -> StateCovariances:
    """Wrap ``c±`` as covariances and check positivity and the sum rule.

    Raises :class:`PositivityViolation` if either form ``G c±`` has an
    eigenvalue below ``-positivity_tol * ||G||``.
    """
    rep = rep or make_clifford()
    state = StateCovariances(np.asarray(c_plus), np.asarray(c_minus), gram, rep, provenance)
    scale = float(np.abs(np.diag(gram.matrix)).max())
    Fp, Fm = state.forms()
    mins = {"plus": _min_form_eigenvalue(Fp), "minus": _min_form_eigenvalue(Fm)}
    state.diagnostics.update({
        "min_eigenvalue_plus": mins["plus"],
        "min_eigenvalue_minus": mins["minus"],
        "positivity_scale": scale,
        "sum_rule_residual": state.sum_rule_residual(),
        **state.purity_residuals(),
    })
    for side, value in mins.items():
        if value < -positivity_tol * scale:
            raise PositivityViolation(
                f"lambda_{side} has eigenvalue {value:.3e} below -{positivity_tol:g} x {scale:.3e}")
    return state


def static_vacuum(family: MetricFamily, grid: GridSpec, rep: CliffordRep | None = None,
                  kernel_tol: float = 1e-8) -> StateCovariances:
    """Vacuum of a time-independent family: ``c± = 1_{R±}(H)``."""
    if not family.static:
        raise ValueError(f"family {family.name!r} is not static")
    reduced = family if family.reduced else reduce_family(family, grid)
    model = ReducedModel(reduced, grid, rep)
    w, Q = sym_eigh(model.H(0.0), model.gram)
    zero = np.abs(w) <= kernel_tol * max(1.0, float(np.abs(w).max()))
    if zero.any():
        raise KernelObstruction(f"H has {int(zero.sum())} zero mode(s); no vacuum exists")
    Qp = Q[:, w > 0]
    c_plus = model.gram.from_sym(Qp @ Qp.conj().T)
    state = cauchy_covariances(c_plus, np.eye(model.dim) - c_plus, model.gram, model.rep,
                               provenance="vacuum")
    state.diagnostics["gap"] = float(np.abs(w).min())
    return state


# ---------------------------------------------------------------------------
# spacetime two-point kernels


@dataclass(frozen=True)
class TwoPoint:
    t: float
    s: float
    plus: np.ndarray
    minus: np.ndarray
    sum_rule_residual: float
    equation_residual: float | None

    def to_dict(self) -> dict:
        return {"t": self.t, "s": self.s, "sum_rule_residual": self.sum_rule_residual,
                "equation_residual": self.equation_residual}


def _two_point_pair(state: StateCovariances, U_t0: np.ndarray, U_0s: np.ndarray,
                    lapse_s: np.ndarray | None):
    ign = state.i_gamma_n
    right = U_0s if lapse_s is None else U_0s * _spinor_diag(lapse_s)[None, :]
    Lp = U_t0 @ ign @ state.c_plus @ right
    Lm = U_t0 @ ign @ state.c_minus @ right
    return Lp, Lm, U_t0 @ ign @ right


def spacetime_two_point(state: StateCovariances, prop: Propagator, t: float, s: float,
                        lapse_s: np.ndarray | None = None, check_equation: bool = True,
                        fd_step: float | None = None) -> TwoPoint:
    """``Lambda±(t, s) = U(t,0) i gamma(n) c± U(0,s) c_s``.

    ``c_s`` is the lapse on the surface at time ``s``. It is the density
    factor of the spacetime volume and is omitted (taken as 1) for reduced
    families.  The equation residual is
    ``||(d_t - i H(t)) Lambda+|| / (||H(t)|| ||Lambda+||)``, with the time
    derivative taken by a 4th-order central difference of the propagated kernel.
    The default difference step is ``0.03 / ||H(t)||``, which keeps the
    truncation error far below the stepper's own consistency error.
    """
    g = prop.gram
    U_0s = g.adjoint(prop.U_from_zero(s))
    Lp, Lm, total = _two_point_pair(state, prop.U_from_zero(t), U_0s, lapse_s)
    sum_res = float(np.linalg.norm(Lp + Lm - total, 2) / np.linalg.norm(total, 2))
    eq_res = None
    if check_equation:
        H = prop.generator(t)
        h = fd_step or min(1e-2, 0.03 / g.norm(H))
        vals = [_two_point_pair(state, prop.U_from_zero(t + j * h), U_0s, lapse_s)[0]
                for j in (-2, -1, 1, 2)]
        dL = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)
        eq_res = float(g.norm(dL - 1j * H @ Lp) / (g.norm(H) * g.norm(Lp)))
    return TwoPoint(t, s, Lp, Lm, sum_res, eq_res)


def time_consistency(state: StateCovariances, prop: Propagator, t: float, s: float) -> float:
    """Relative residual of ``lambda(t) = U(s,t)^* lambda(s) U(s,t)`` on the forms.

    ``lambda(r)`` is the equal-time covariance carried to the surface at ``r``
    through time zero, ``G U(r,0) c+ U(0,r)``.
    """
    g = prop.gram
    G = g.matrix

    def form_at(r: float) -> np.ndarray:
        U = prop.U_from_zero(r)
        return G @ U @ state.c_plus @ g.adjoint(U)

    F_s = form_at(s)
    U_st = prop.matrix(s, t)
    lhs = form_at(t)
    rhs = U_st.conj().T @ F_s @ U_st
    return float(np.linalg.norm(lhs - rhs, 2) / np.linalg.norm(F_s, 2))


def time_consistency_static(state: StateCovariances, H: np.ndarray, t: float, s: float) -> float:
    """Same residual as :func:`time_consistency` with exact exponentials of a static ``H``."""
    g = state.gram
    G = g.matrix
    U_st = static_exponential(H, g, s - t)
    U_t = static_exponential(H, g, t)
    U_s = static_exponential(H, g, s)
    F_t = G @ U_t @ state.c_plus @ g.adjoint(U_t)
    F_s = G @ U_s @ state.c_plus @ g.adjoint(U_s)
    return float(np.linalg.norm(F_t - U_st.conj().T @ F_s @ U_st, 2) / np.linalg.norm(F_s, 2))


def conformal_transform(Lam: np.ndarray, c_t: np.ndarray, c_s: np.ndarray, n: int = 2) -> np.ndarray:
    """``c_t^{(n-1)/2} Lambda c_s^{-(n+1)/2}`` with pointwise lapse factors."""
    left = _spinor_diag(np.asarray(c_t, dtype=float)) ** (0.5 * (n - 1))
    right = _spinor_diag(np.asarray(c_s, dtype=float)) ** (-0.5 * (n + 1))
    return (left[:, None] * Lam) * right[None, :]


def conformal_covariance_check(Lam_tilde: np.ndarray, Lam: np.ndarray, c_t: np.ndarray,
                               c_s: np.ndarray, n: int = 2) -> float:
    """Relative residual between the reduced-frame kernel and the transformed physical one."""
    mapped = conformal_transform(Lam, c_t, c_s, n)
    scale = np.linalg.norm(Lam_tilde, 2)
    if scale == 0:
        return float(np.linalg.norm(mapped, 2))
    return float(np.linalg.norm(Lam_tilde - mapped, 2) / scale)


@dataclass(frozen=True)
class DualFrameReport:
    t: float
    s: float
    residual_plus: float
    residual_minus: float
    state_time: float

    @property
    def residual(self) -> float:
        return max(self.residual_plus, self.residual_minus)

    def to_dict(self) -> dict:
        return {"t": self.t, "s": self.s, "residual_plus": self.residual_plus,
                "residual_minus": self.residual_minus, "state_time": self.state_time}


def dual_frame_two_point(family: MetricFamily, grid: GridSpec, t: float, s: float,
                         state_time: float = 0.0, rep: CliffordRep | None = None,
                         config=None, n: int = 2) -> DualFrameReport:
    """Compute the two-point kernel separately in the physical and reduced frames.

    Each frame uses its own Hamiltonian, propagator and Gram matrix. The state is
    the instantaneous vacuum at ``state_time``, built from each frame's own
    ``H(state_time)``.  The physical kernel is then mapped with
    :func:`conformal_transform` and compared to the reduced one.
    """
    rep = rep or make_clifford()
    x = grid.nodes
    c_lapse = np.real(family.c(0.0, x)) * np.ones_like(x)
    phys = PhysicalModel(family, grid, rep)
    reduced = ReducedModel(reduce_family(family, grid), grid, rep)
    kernels = []
    for model, lapse in ((phys, c_lapse), (reduced, None)):
        prop = Propagator(model.H, model.gram, config)
        Uq = prop.U_from_zero(state_time)
        w, Q = sym_eigh(model.H(state_time), model.gram)
        Qp = Q[:, w > 0]
        Pq = model.gram.from_sym(Qp @ Qp.conj().T)
        c_plus = model.gram.adjoint(Uq) @ Pq @ Uq
        state = StateCovariances(c_plus, np.eye(model.gram.n) - c_plus, model.gram, rep)
        tp = spacetime_two_point(state, prop, t, s, lapse_s=lapse, check_equation=False)
        kernels.append(tp)
    (Pp, Pr) = kernels
    res_p = conformal_covariance_check(Pr.plus, Pp.plus, c_lapse, c_lapse, n)
    res_m = conformal_covariance_check(Pr.minus, Pp.minus, c_lapse, c_lapse, n)
    return DualFrameReport(t, s, res_p, res_m, state_time)


# ---------------------------------------------------------------------------
# high-frequency diagnostics


def symbol_projection(rep: CliffordRep, k: float, side: str = "+") -> np.ndarray:
    """Spectral projection of the principal symbol ``i alpha k`` onto the ``side`` half line."""
    S = 1j * rep.alpha * k
    S = 0.5 * (S + S.conj().T)
    w, Q = np.linalg.eigh(S)
    sel = w > 0 if side == "+" else w < 0
    return Q[:, sel] @ Q[:, sel].conj().T


def _window(grid: GridSpec, x0: float, width: float) -> np.ndarray:
    # periodic Gaussian bump centred at x0
    d = np.angle(np.exp(1j * (grid.nodes - x0)))
    return np.exp(-0.5 * (d / width) ** 2)


def local_blocks(A_sym: np.ndarray, grid: GridSpec, x0: float | None = None,
                 width: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """2x2 blocks of ``A_sym`` at every Fourier mode.

    With ``x0=None`` these are the Fourier-diagonal (x-averaged) blocks.
    Otherwise each block is the compression onto the windowed plane wave
    ``w(x - x0) e^{ikx}``, normalized to unit length.
    """
    M = grid.M
    k = grid.wavenumbers
    if x0 is None:
        Ah = fourier_blocks(A_sym, M).reshape(2, M, 2, M)
        idx = np.arange(M)
        return k, np.transpose(Ah[:, idx, :, idx], (0, 1, 2)).reshape(M, 2, 2)
    wgt = _window(grid, x0, width or grid.L / 8)
    E = wgt[:, None] * np.exp(1j * np.outer(grid.nodes, k))
    E /= np.linalg.norm(E, axis=0)[None, :]
    A4 = A_sym.reshape(2, M, 2, M)
    blocks = np.einsum("ik,aibj,jk->kab", E.conj(), A4, E)
    return k, blocks


@dataclass(frozen=True)
class SymbolReport:
    side: str
    band: tuple
    slope: float
    fit: PowerFit | None
    ks: tuple
    deviations: tuple
    slice_slopes: dict
    threshold: float
    fail_threshold: float

    @property
    def exact(self) -> bool:
        return self.fit is not None and self.fit.exact

    @property
    def worst_slope(self) -> float:
        return max([self.slope, *self.slice_slopes.values()])

    @property
    def passed(self) -> bool:
        return self.worst_slope <= self.threshold

    def to_dict(self) -> dict:
        slope = self.slope if math.isfinite(self.slope) else str(self.slope)
        return {"side": self.side, "band": list(self.band), "slope": slope,
                "ci95": None if self.fit is None else self.fit.ci95,
                "worst_slope": self.worst_slope, "exact": self.exact, "passed": self.passed,
                "ks": list(self.ks), "deviations": list(self.deviations),
                "slice_slopes": {str(k): v for k, v in self.slice_slopes.items()},
                "threshold": self.threshold}


def _deviation_fit(ks, devs, zero_tol):
    fit = power_fit(ks, devs, zero_tol=zero_tol)
    return fit, (-math.inf if fit.exact else fit.slope)


def hadamard_symbol_test(c: np.ndarray, gram: Gram, grid: GridSpec, rep: CliffordRep | None = None,
                         side: str = "+", band: tuple | None = None, slices: int = 4,
                         threshold: float = -0.8, fail_threshold: float = -0.5,
                         zero_tol: float = 1e-13, raise_on_failure: bool = True) -> SymbolReport:
    """Decay of ``||c(k) - 1_{R±}(symbol(k))||`` over the band ``|k| in [8, M/4]``.

    The x-averaged blocks give the reported slope. Windowed blocks at
    ``slices`` equally spaced points give per-slice slopes. The verdict uses the
    worst (largest) of all these slopes, so a defect that averages out over x
    is still caught. The zero mode is never part of a fit.
    """
    rep = rep or make_clifford()
    M = grid.M
    band = band or (8, M // 4)
    A = gram.to_sym(c)
    centres = [None] + [grid.L * j / slices for j in range(slices)]
    results = {}
    for x0 in centres:
        k, blocks = local_blocks(A, grid, x0)
        sel = (np.abs(k) >= band[0]) & (np.abs(k) <= band[1]) & (k != 0)
        ks, devs = [], []
        for i in np.flatnonzero(sel):
            ref = symbol_projection(rep, k[i], side)
            devs.append(float(np.linalg.norm(blocks[i] - ref, 2)))
            ks.append(abs(float(k[i])))
        if len(ks) < 3:
            raise InsufficientData(f"band {band} holds fewer than 3 modes on M={M}")
        results[x0] = (ks, devs, *_deviation_fit(ks, devs, zero_tol))
    ks, devs, fit, slope = results[None]
    slice_slopes = {round(x0, 6): results[x0][3] for x0 in centres[1:]}
    report = SymbolReport(side, tuple(band), slope, fit, tuple(ks), tuple(devs), slice_slopes,
                          threshold, fail_threshold)
    if raise_on_failure and report.worst_slope > fail_threshold:
        raise HadamardDiagnosticFailure(
            f"symbol deviation slope {report.worst_slope:.2f} > {fail_threshold}", report.to_dict())
    return report


def half_swapped_state(H: np.ndarray, gram: Gram) -> np.ndarray:
    """A pure state that is non-Hadamard by construction.

    The positive and negative branches of ``H`` are exchanged for every
    eigenvalue with ``|E|`` above the median. The result is still a projection.
    """
    w, Q = sym_eigh(H, gram)
    high = np.abs(w) > np.median(np.abs(w))
    keep = (w > 0) ^ high
    Qk = Q[:, keep]
    return gram.from_sym(Qk @ Qk.conj().T)


@dataclass(frozen=True)
class SmoothingReport:
    slope: float
    centers: tuple
    norms: tuple
    band: tuple
    ratio: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.slope <= self.threshold

    def to_dict(self) -> dict:
        return {"slope": self.slope if math.isfinite(self.slope) else str(self.slope),
                "centers": list(self.centers), "norms": list(self.norms),
                "band": list(self.band), "ratio": self.ratio,
                "threshold": self.threshold, "passed": self.passed}


def smoothing_difference_test(c: np.ndarray, P_corrected: np.ndarray, gram: Gram, grid: GridSpec,
                              order: int = 1, band: tuple | None = None,
                              ratio: float = math.sqrt(2.0)) -> SmoothingReport:
    """Frequency decay of ``c - P~(0)`` by annulus block norms.

    The threshold is ``-(order + 0.8)``. A shortfall is recorded and is not
    fatal, because it can come from limited resolution.
    """
    M = grid.M
    band = band or (8, M // 4)
    A_hat = fourier_blocks(gram.to_sym(c - P_corrected), M)
    absk = np.concatenate([np.abs(grid.wavenumbers)] * 2)
    rep = annulus_slope(A_hat, absk, band, ratio)
    return SmoothingReport(rep.slope, rep.centers, rep.norms, tuple(band), ratio, -(order + 0.8))
