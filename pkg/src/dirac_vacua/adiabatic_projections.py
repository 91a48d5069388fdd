"""Instantaneous and corrected spectral projections, dressing and Cook integrands.

All time derivatives are 4th-order central differences on a lattice
``t0 + j h`` (``h = h_rel <t0>``).  Quantities are memoized per lattice index,
so nested derivatives needed by higher correction orders reuse every
eigendecomposition.

Conventions: with W = exp(iR), the dressed generator is
``H~ = W H W^{-1} + i^{-1} (d_t W) W^{-1}`` and the corrected projection is
``P~ = W^{-1} P W``.  The Cook integrand ``dP + [P, i H~]`` is the conjugate by W
of ``dP~ + [P~, i H]``, the derivative of ``U(0,t) P~(t) U(t,0)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diagnostics import AnnulusReport, annulus_slope, fourier_blocks, japanese_bracket
from .errors import DegeneracyError, ExpSeriesError, GapViolation, ModificationFailure
from .functional_calculus import _gap_check, sym_eigh
from .geometry import GridSpec
from .operator_assembly import DiscreteOperator, Gram, ReducedModel

MODES = ("paper_leading", "sylvester_exact")


def central_difference(f, h: float):
    """4th-order derivative from f(+-1), f(+-2); equal samples give exactly zero."""
    return ((8.0 / 12) * (f(1) - f(-1)) - (1.0 / 12) * (f(2) - f(-2))) / h


def fd_step(t: float, h_rel: float = 1e-3) -> float:
    return h_rel * float(japanese_bracket(t))


def operator_slope(A: np.ndarray, grid: GridSpec, gram: Gram, band=None,
                   ratio: float = 2.0) -> AnnulusReport:
    """Log-log slope of Fourier-annulus block norms of the Gram-symmetrized operator."""
    band = band or (2.0, grid.M / 4)
    A_hat = fourier_blocks(gram.to_sym(A), grid.M)
    return annulus_slope(A_hat, grid.abs_k2, band, ratio)


# ---------------------------------------------------------------------------
# gap modification


class GapModification:
    """Finite-rank push of eigenvalues away from [-delta, delta].

    The positive branch is the ``n_plus`` largest eigenvalues; any of them
    below ``delta`` is moved to ``delta`` and any negative-branch eigenvalue
    above ``-delta`` is moved to ``-delta``.  Outside ``t_range`` the
    modification is zero.
    """

    def __init__(self, hamiltonian: Callable[[float], np.ndarray], gram: Gram, delta: float,
                 n_plus: int, t_range: tuple[float, float], rank_budget: int = 8):
        self.hamiltonian = hamiltonian
        self.gram = gram
        self.delta = float(delta)
        self.n_plus = int(n_plus)
        self.t_range = (float(t_range[0]), float(t_range[1]))
        self.rank_budget = rank_budget

    def shifts(self, t: float):
        w, Q = sym_eigh(self.hamiltonian(t), self.gram)
        n = len(w)
        split = n - self.n_plus
        shift = np.zeros(n)
        pos = np.arange(n) >= split
        shift[pos & (w < self.delta)] = self.delta - w[pos & (w < self.delta)]
        neg = ~pos
        shift[neg & (w > -self.delta)] = -self.delta - w[neg & (w > -self.delta)]
        return w, Q, shift

    def rank(self, t: float) -> int:
        if not self.t_range[0] <= t <= self.t_range[1]:
            return 0
        return int(np.count_nonzero(self.shifts(t)[2]))

    def __call__(self, t: float) -> np.ndarray:
        n = self.gram.n
        if not self.t_range[0] <= t <= self.t_range[1]:
            return np.zeros((n, n), dtype=complex)
        w, Q, shift = self.shifts(t)
        sel = shift != 0
        if sel.sum() > self.rank_budget:
            raise ModificationFailure(
                f"{int(sel.sum())} eigenvalues inside the gap at t={t:g} exceed the rank budget "
                f"{self.rank_budget}")
        if not sel.any():
            return np.zeros((n, n), dtype=complex)
        Qs = Q[:, sel]
        return self.gram.from_sym((Qs * shift[sel]) @ Qs.conj().T)

    def modified(self, t: float) -> np.ndarray:
        return self.hamiltonian(t) + self(t)


def gap_modification(model: ReducedModel, t_range: tuple[float, float], delta: float | None = None,
                     rank_budget: int = 8) -> GapModification:
    """Modification for a reduced model; delta defaults to half the smallest asymptotic gap."""
    gaps, counts = [], []
    for side in ("out", "in"):
        w, _ = sym_eigh(model.H_asymptotic(side), model.gram)
        gaps.append(float(np.abs(w).min()))
        counts.append(int(np.count_nonzero(w > 0)))
    if min(gaps) <= 0:
        raise GapViolation("asymptotic Hamiltonian has no gap")
    if counts[0] != counts[1]:
        raise ModificationFailure("asymptotic Hamiltonians have different positive ranks")
    delta = 0.5 * min(gaps) if delta is None else delta
    return GapModification(model.H, model.gram, delta, counts[0], t_range, rank_budget)


# ---------------------------------------------------------------------------
# lattice engine


class CorrectionLattice:
    """Corrected projections of every order at the lattice points t0 + j h."""

    def __init__(self, model: ReducedModel, t0: float, mode: str = "paper_leading",
                 h: float | None = None, h_rel: float = 1e-3,
                 modification: GapModification | None = None, delta: float | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.model = model
        self.gram = model.gram
        self.t0 = float(t0)
        self.h = h if h is not None else fd_step(t0, h_rel)
        self.mode = mode
        self.modification = modification
        self.delta = delta
        self._memo: dict = {}
        n = model.dim
        self._eye = np.eye(n)

    def _get(self, key, fn):
        v = self._memo.get(key)
        if v is None:
            v = fn()
            self._memo[key] = v
        return v

    def time(self, j: int) -> float:
        return self.t0 + j * self.h

    def H(self, j: int) -> np.ndarray:
        def fn():
            t = self.time(j)
            H = self.model.H(t)
            if self.modification is not None:
                H = H + self.modification(t)
            return H
        return self._get(("H", j), fn)

    def eig(self, j: int):
        def fn():
            w, Q = sym_eigh(self.H(j), self.gram)
            _gap_check(w, self.delta)
            return w, Q
        return self._get(("eig", j), fn)

    def P(self, j: int) -> np.ndarray:
        def fn():
            w, Q = self.eig(j)
            Qp = Q[:, w > 0]
            return self.gram.from_sym(Qp @ Qp.conj().T)
        return self._get(("P", j), fn)

    def eps(self, j: int) -> np.ndarray:
        def fn():
            w, Q = self.eig(j)
            return self.gram.from_sym((Q * np.sqrt(w * w + 1)) @ Q.conj().T)
        return self._get(("eps", j), fn)

    def _fd(self, f, j: int) -> np.ndarray:
        return central_difference(lambda off: f(j + off), self.h)

    def Pdot(self, j: int) -> np.ndarray:
        return self._get(("Pdot", j), lambda: self._fd(self.P, j))

    def offdiag(self, Y: np.ndarray, j: int) -> np.ndarray:
        P = self.P(j)
        return P @ Y @ (self._eye - P)

    def solve_commutator(self, Y: np.ndarray, j: int) -> np.ndarray:
        """Approximate inverse of X -> H X - X H on the (+,-) block, applied to -Y."""
        w, Q = self.eig(j)
        if self.mode == "paper_leading":
            inv2eps = self.gram.from_sym((Q / (2 * np.sqrt(w * w + 1))) @ Q.conj().T)
            return -inv2eps @ Y
        Ys = Q.conj().T @ self.gram.to_sym(Y) @ Q
        den = w[:, None] - w[None, :]
        mask = (w[:, None] > 0) & (w[None, :] < 0)
        if np.any(np.abs(den[mask]) < 1e-12 * max(1.0, np.abs(w).max())):
            raise DegeneracyError("near-degenerate denominators in the Sylvester solve")
        Xs = np.zeros_like(Ys)
        Xs[mask] = -Ys[mask] / den[mask]
        return self.gram.from_sym(Q @ Xs @ Q.conj().T)

    # order n quantities --------------------------------------------------
    def X(self, n: int, j: int) -> np.ndarray:
        """Off-diagonal (P+ . P-) part of the order-n dressing."""
        if n == 0:
            return np.zeros_like(self.H(j))

        def fn():
            return self.offdiag(self.X(n - 1, j) + self.solve_commutator(self.Phi(n - 1, j), j), j)
        return self._get(("X", n, j), fn)

    def S(self, n: int, j: int) -> np.ndarray:
        """Order-n generator; at order 1 in ``paper_leading`` mode this is -(2 eps)^{-1} dP+."""
        if n == 1 and self.mode == "paper_leading":
            return self.solve_commutator(self.Pdot(j), j)
        return self.X(n, j)

    def R(self, n: int, j: int) -> np.ndarray:
        def fn():
            X = self.X(n, j)
            return X + self.gram.adjoint(X)
        return self._get(("R", n, j), fn)

    def W(self, n: int, j: int) -> np.ndarray:
        """exp(i R)."""
        def fn():
            R = self.R(n, j)
            if n == 0 or not np.any(R):
                return self._eye.astype(complex)
            res = self.gram.selfadjoint_residual(R)
            if res > 1e-8:
                raise ExpSeriesError(f"dressing is not selfadjoint (residual {res:.2e})")
            w, Q = sym_eigh(R, self.gram)
            return self.gram.from_sym((Q * np.exp(1j * w)) @ Q.conj().T)
        return self._get(("W", n, j), fn)

    def Winv(self, n: int, j: int) -> np.ndarray:
        return self._get(("Winv", n, j), lambda: self.gram.adjoint(self.W(n, j)))

    def Wdot(self, n: int, j: int) -> np.ndarray:
        return self._get(("Wdot", n, j), lambda: self._fd(lambda i: self.W(n, i), j))

    def Htilde(self, n: int, j: int) -> np.ndarray:
        if n == 0:
            return self.H(j)

        def fn():
            W, Wi = self.W(n, j), self.Winv(n, j)
            return W @ self.H(j) @ Wi - 1j * self.Wdot(n, j) @ Wi
        return self._get(("Ht", n, j), fn)

    def integrand(self, n: int, j: int = 0) -> np.ndarray:
        """dP + [P, i H~_n] (the conjugated-frame Cook integrand)."""
        def fn():
            if n == 0:
                return self.Pdot(j)
            P, Ht = self.P(j), self.Htilde(n, j)
            return self.Pdot(j) + 1j * (P @ Ht - Ht @ P)
        return self._get(("D", n, j), fn)

    def Phi(self, n: int, j: int) -> np.ndarray:
        return self._get(("Phi", n, j), lambda: self.offdiag(self.integrand(n, j), j))

    def corrected_projection(self, n: int, j: int = 0) -> np.ndarray:
        """P~ = W^{-1} P W."""
        return self._get(("Pt", n, j), lambda: self.Winv(n, j) @ self.P(j) @ self.W(n, j))

    def integrand_original(self, n: int, j: int = 0) -> np.ndarray:
        """dP~ + [P~, i H] = W^{-1} (dP + [P, i H~]) W."""
        return self.Winv(n, j) @ self.integrand(n, j) @ self.W(n, j)


# ---------------------------------------------------------------------------
# operations


def instantaneous_projections(model: ReducedModel, t: float,
                              modification: GapModification | None = None,
                              delta: float | None = None):
    H = model.H(t)
    if modification is not None:
        H = H + modification(t)
    w, Q = sym_eigh(H, model.gram)
    _gap_check(w, delta)
    Qp = Q[:, w > 0]
    Pp = model.gram.from_sym(Qp @ Qp.conj().T)
    return Pp, np.eye(model.dim) - Pp


@dataclass(frozen=True)
class Correction:
    t: float
    mode: str
    S: np.ndarray
    R: np.ndarray


def first_correction(model: ReducedModel, t: float, mode: str = "paper_leading",
                     h_rel: float = 1e-3) -> Correction:
    lat = CorrectionLattice(model, t, mode, h_rel=h_rel)
    return Correction(t, mode, lat.S(1, 0), lat.R(1, 0))


def dressed_hamiltonian(model: ReducedModel, R_eval: Callable[[float], np.ndarray], t: float,
                        h_rel: float = 1e-3) -> DiscreteOperator:
    """e^{iR} H e^{-iR} + i^{-1} (d_t e^{iR}) e^{-iR} for an arbitrary dressing evaluator."""
    gram = model.gram
    h = fd_step(t, h_rel)

    def W(s):
        R = R_eval(s)
        if not np.any(R):
            return np.eye(gram.n, dtype=complex)
        res = gram.selfadjoint_residual(R)
        if res > 1e-8:
            raise ExpSeriesError(f"dressing is not selfadjoint (residual {res:.2e})")
        w, Q = sym_eigh(R, gram)
        return gram.from_sym((Q * np.exp(1j * w)) @ Q.conj().T)

    W0 = W(t)
    Wi = gram.adjoint(W0)
    Wd = central_difference(lambda off: W(t + off * h), h)
    Ht = W0 @ model.H(t) @ Wi - 1j * Wd @ Wi
    op = DiscreteOperator(Ht, gram, f"H~({t:g})")
    op.info["residual"] = op.residual()
    op.info["derivative_term_norm"] = gram.norm(Wd @ Wi)
    return op


@dataclass(frozen=True)
class CookIntegrand:
    t: float
    order: int
    mode: str
    matrix: np.ndarray
    norm: float
    slope: AnnulusReport

    def to_dict(self) -> dict:
        return {"t": self.t, "order": self.order, "mode": self.mode, "norm": self.norm,
                "slope": self.slope.to_dict()}


def cook_integrand(model: ReducedModel, t: float, corrected: bool = True,
                   mode: str = "paper_leading", order: int = 1, band=None, ratio: float = 2.0,
                   h_rel: float = 1e-3, lattice: CorrectionLattice | None = None) -> CookIntegrand:
    n = order if corrected else 0
    lat = lattice or CorrectionLattice(model, t, mode, h_rel=h_rel)
    D = lat.integrand(n, 0)
    return CookIntegrand(t, n, mode, D, model.gram.norm(D),
                         operator_slope(D, model.grid, model.gram, band, ratio))


class RefinedDressing:
    """Evaluator t -> R_N(t) built from the recursion with memoized lattices."""

    def __init__(self, model: ReducedModel, order: int, mode: str = "paper_leading",
                 h_rel: float = 1e-3):
        if not 0 <= order <= 4:
            raise ValueError("order must be between 0 and 4")
        self.model, self.order, self.mode, self.h_rel = model, order, mode, h_rel

    def lattice(self, t: float) -> CorrectionLattice:
        return CorrectionLattice(self.model, t, self.mode, h_rel=self.h_rel)

    def __call__(self, t: float) -> np.ndarray:
        return self.lattice(t).R(self.order, 0)


def recursive_refine(model: ReducedModel, order: int, mode: str = "paper_leading",
                     h_rel: float = 1e-3) -> RefinedDressing:
    return RefinedDressing(model, order, mode, h_rel)


@dataclass(frozen=True)
class RefineReport:
    t: float
    slopes: tuple
    norms: tuple
    best_order: int
    saturated: bool

    def to_dict(self) -> dict:
        return {"t": self.t, "slopes": list(self.slopes), "norms": list(self.norms),
                "best_order": self.best_order, "saturated": self.saturated}


def refine_report(model: ReducedModel, t: float, max_order: int, mode: str = "paper_leading",
                  band=None, ratio: float = 2.0, h_rel: float = 1e-3,
                  improvement: float = 0.8) -> RefineReport:
    """Cook-integrand slopes for orders 0..max_order and the best order before saturation."""
    lat = CorrectionLattice(model, t, mode, h_rel=h_rel)
    slopes, norms = [], []
    for n in range(max_order + 1):
        D = lat.integrand(n, 0)
        slopes.append(operator_slope(D, model.grid, model.gram, band, ratio).slope)
        norms.append(model.gram.norm(D))
    best, saturated = 0, False
    for n in range(1, max_order + 1):
        if slopes[n] <= slopes[n - 1] - improvement:
            best = n
        else:
            saturated = True
            break
    return RefineReport(t, tuple(slopes), tuple(norms), best, saturated)
