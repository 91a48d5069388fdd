"""Discrete reduced Hamiltonian, asymptotic Hamiltonians and the nu_0 Gram matrix.

Spinor vectors are component-major: entries ``[psi_0(x_0..x_{M-1}), psi_1(...)]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssemblyError, HypothesisViolation, ReductionOrderViolation
from .geometry import GridSpec, MetricFamily, SIDES, reduce_family
from .spin_algebra import CliffordRep, make_clifford

I2 = np.eye(2, dtype=complex)


class Gram:
    """Positive definite Hermitian form <f, g> = f^* G g and helpers built on it."""

    def __init__(self, matrix: np.ndarray):
        G = np.asarray(matrix, dtype=complex)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError("Gram matrix must be square")
        self.matrix = G
        offdiag = G - np.diag(np.diag(G))
        self.is_diagonal = not np.any(offdiag)
        if self.is_diagonal:
            d = np.real(np.diag(G))
            if np.any(d <= 0) or np.any(np.imag(np.diag(G))):
                raise ValueError("Gram matrix is not positive definite")
            self.d = d
            self.sqrt_d = np.sqrt(d)
        else:
            if np.abs(G - G.conj().T).max() > 1e-12 * np.abs(G).max():
                raise ValueError("Gram matrix is not Hermitian")
            w, Q = np.linalg.eigh(0.5 * (G + G.conj().T))
            if w.min() <= 0:
                raise ValueError("Gram matrix is not positive definite")
            self._sqrt = (Q * np.sqrt(w)) @ Q.conj().T
            self._isqrt = (Q / np.sqrt(w)) @ Q.conj().T
            self._inv = (Q / w) @ Q.conj().T

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def min_eigenvalue(self) -> float:
        if self.is_diagonal:
            return float(self.d.min())
        return float(np.linalg.eigvalsh(self.matrix).min())

    def to_sym(self, A: np.ndarray) -> np.ndarray:
        """G^{1/2} A G^{-1/2}: Hermitian exactly when A is G-selfadjoint."""
        if self.is_diagonal:
            return (self.sqrt_d[:, None] * A) / self.sqrt_d[None, :]
        return self._sqrt @ A @ self._isqrt

    def from_sym(self, X: np.ndarray) -> np.ndarray:
        if self.is_diagonal:
            return (X / self.sqrt_d[:, None]) * self.sqrt_d[None, :]
        return self._isqrt @ X @ self._sqrt

    def sqrt_apply(self, v: np.ndarray) -> np.ndarray:
        if self.is_diagonal:
            return self.sqrt_d.reshape((-1,) + (1,) * (np.ndim(v) - 1)) * v
        return self._sqrt @ v

    def isqrt_apply(self, v: np.ndarray) -> np.ndarray:
        if self.is_diagonal:
            return v / self.sqrt_d.reshape((-1,) + (1,) * (np.ndim(v) - 1))
        return self._isqrt @ v

    def adjoint(self, A: np.ndarray) -> np.ndarray:
        """G^{-1} A^* G."""
        if self.is_diagonal:
            return (A.conj().T / self.d[:, None]) * self.d[None, :]
        return self._inv @ A.conj().T @ self.matrix

    def inverse_unitary(self, U: np.ndarray) -> np.ndarray:
        return self.adjoint(U)

    def norm(self, A: np.ndarray) -> float:
        """Operator norm induced by the form."""
        return float(np.linalg.norm(self.to_sym(A), 2))

    def vector_norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(np.real(np.vdot(v, self.matrix @ v))))

    def selfadjoint_residual(self, A: np.ndarray) -> float:
        """||S - S^*||_F / ||S||_F with S = G^{1/2} A G^{-1/2} (0 for A = 0)."""
        S = self.to_sym(A)
        scale = np.linalg.norm(S)
        if scale == 0:
            return 0.0
        return float(np.linalg.norm(S - S.conj().T) / scale)

    def hermitize(self, A: np.ndarray) -> np.ndarray:
        """Gram-selfadjoint part (A + A^dagger)/2."""
        return 0.5 * (A + self.adjoint(A))

    def unitarity_residual(self, U: np.ndarray) -> float:
        """||U^* G U - G|| / ||G|| (Frobenius)."""
        G = self.matrix
        return float(np.linalg.norm(U.conj().T @ G @ U - G) / np.linalg.norm(G))


@dataclass(frozen=True)
class DiscreteOperator:
    matrix: np.ndarray
    gram: Gram
    label: str
    selfadjoint: bool = True
    info: dict = field(default_factory=dict)

    def residual(self) -> float:
        return self.gram.selfadjoint_residual(self.matrix)

    def norm(self) -> float:
        return self.gram.norm(self.matrix)


def _scalar_derivative(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """Derivative of a periodic scalar function sampled on the nodes."""
    k = np.fft.fftfreq(grid.M, d=grid.dx) * 2 * np.pi
    return np.real(np.fft.ifft(1j * k * np.fft.fft(f)))


class ReducedModel:
    """Fast assembly of H(t) for a reduced family (c = 1, b = 0) on a fixed grid.

    H(t) = (i g0 g1) x a D b + (i g0) x diag(m) with a = h0^{-1/4} h_t^{-1/4} and
    b = h0^{1/4} h_t^{-1/4}.  The term from the time derivative of the density
    weight cancels the spin-connection contribution exactly, and the sandwich
    a D b is anti-selfadjoint for the weight sqrt(h0), so H(t) is selfadjoint for
    nu_0 without any symmetrization.
    """

    def __init__(self, family: MetricFamily, grid: GridSpec, rep: CliffordRep | None = None):
        if not family.reduced:
            raise ReductionOrderViolation("ReducedModel needs c = 1 and b = 0; reduce first")
        self.family = family
        self.grid = grid
        self.rep = rep or make_clifford()
        self.x = grid.nodes
        self.h0 = np.real(family.h(0.0, self.x))
        if np.any(self.h0 <= 0):
            raise AssemblyError("h(0, x) must be positive")
        self.gram = Gram(np.kron(self.rep.normal_form, np.diag(np.sqrt(self.h0) * grid.dx)))
        self._alpha = self.rep.alpha
        self._mass = self.rep.i_gamma0

    @property
    def dim(self) -> int:
        return 2 * self.grid.M

    def build(self, h_t: np.ndarray, m_t: np.ndarray) -> np.ndarray:
        a = self.h0 ** -0.25 * h_t ** -0.25
        b = self.h0 ** 0.25 * h_t ** -0.25
        K = a[:, None] * self.grid.derivative * b[None, :]
        return np.kron(self._alpha, K) + np.kron(self._mass, np.diag(m_t.astype(complex)))

    def H(self, t: float) -> np.ndarray:
        f = self.family
        return self.build(np.real(f.h(t, self.x)), np.real(f.m(t, self.x)))

    def H_asymptotic(self, side: str) -> np.ndarray:
        f = self.family
        return self.build(f.profile("h", side)(self.x), f.profile("m", side)(self.x))

    def operator(self, t: float) -> DiscreteOperator:
        return DiscreteOperator(self.H(t), self.gram, f"H({t:g})")


def gram_nu0(family: MetricFamily, rep: CliffordRep, grid: GridSpec) -> np.ndarray:
    """(i beta gamma^0) x diag(|h_0(x_j)|^{1/2} L/M)."""
    h0 = np.abs(np.real(family.h(0.0, grid.nodes)))
    return np.kron(rep.normal_form, np.diag(np.sqrt(h0) * grid.dx))


def _checked(model: ReducedModel, H: np.ndarray, label: str, tol: float,
             symmetrize: bool) -> DiscreteOperator:
    res = model.gram.selfadjoint_residual(H)
    info = {"raw_residual": res}
    if res > tol:
        if not symmetrize:
            raise AssemblyError(f"{label}: selfadjointness residual {res:.3e} > {tol:g}", res)
        H = model.gram.hermitize(H)
        res2 = model.gram.selfadjoint_residual(H)
        info["symmetrized"] = True
        if res2 > tol:
            raise AssemblyError(f"{label}: residual {res2:.3e} after symmetrization", res2)
    return DiscreteOperator(H, model.gram, label, True, info)


def assemble_H(family: MetricFamily, rep: CliffordRep, grid: GridSpec, t: float,
               tol: float = 1e-8, symmetrize: bool = True) -> DiscreteOperator:
    model = ReducedModel(family, grid, rep)
    return _checked(model, model.H(t), f"H({t:g})", tol, symmetrize)


def assemble_H_asymptotic(family: MetricFamily, rep: CliffordRep, grid: GridSpec, side: str,
                          require_gap: bool = False, gap_threshold: float = 1e-8,
                          tol: float = 1e-8) -> DiscreteOperator:
    """H at t = +inf ('out') or -inf ('in'); the spectral gap is stored in ``info``."""
    if side not in SIDES:
        raise ValueError(side)
    model = ReducedModel(family, grid, rep)
    op = _checked(model, model.H_asymptotic(side), f"H_{side}", tol, symmetrize=True)
    gap = spectral_gap(op)
    op.info["gap"] = gap
    if require_gap and gap <= gap_threshold:
        raise HypothesisViolation(f"asymptotic Hamiltonian ({side}) has gap {gap:.3e}")
    return op


def spectral_gap(op: DiscreteOperator) -> float:
    S = op.gram.to_sym(op.matrix)
    return float(np.abs(np.linalg.eigvalsh(0.5 * (S + S.conj().T))).min())


@dataclass(frozen=True)
class MassiveReport:
    side: str
    gap: float
    sufficient_value: float

    @property
    def sufficient(self) -> bool:
        return self.sufficient_value > 0

    def to_dict(self) -> dict:
        return {"side": self.side, "gap": self.gap, "sufficient_value": self.sufficient_value}


def check_massive(family: MetricFamily, grid: GridSpec, side: str,
                  rep: CliffordRep | None = None) -> MassiveReport:
    """Spectral gap of the asymptotic Hamiltonian and the sufficient-condition value.

    The sufficient condition is evaluated on the conformally reduced profiles,
    inf_x (m~^2 - h~^{-1} (d_x m~)^2) with m~ = c m and h~ = h / c^2, which is
    inf_x (c^2 m^2 - c^2 h^{-1} (d_x (c m))^2) in the original variables.
    """
    rep = rep or make_clifford()
    reduced = reduce_family(family, grid)
    x = grid.nodes
    h = reduced.profile("h", side)(x)
    m = reduced.profile("m", side)(x)
    dm = _scalar_derivative(grid, m)
    value = float(np.min(m ** 2 - dm ** 2 / h))
    op = assemble_H_asymptotic(reduced, rep, grid, side)
    return MassiveReport(side, op.info["gap"], value)


def assemble_H_physical(family: MetricFamily, rep: CliffordRep, grid: GridSpec,
                        t: float) -> DiscreteOperator:
    """Hamiltonian of the original operator for a shift-free family with static lapse c.

    The lapse is split symmetrically around the derivative,
    (i g0 g1) x c^{1/2} a D b c^{1/2} + (i g0) x diag(c m); it is selfadjoint for
    the physical form (i beta g0) x diag(|h_0|^{1/2} L/M).
    """
    if not family.shift_free:
        raise ReductionOrderViolation("remove the shift first")
    if not family.lapse_static:
        raise ReductionOrderViolation("physical assembly supports static lapse only")
    x = grid.nodes
    h0 = np.real(family.h(0.0, x))
    ht = np.real(family.h(t, x))
    c = np.real(family.c(0.0, x))
    m = np.real(family.m(t, x))
    a = np.sqrt(c) * h0 ** -0.25 * ht ** -0.25
    b = np.sqrt(c) * h0 ** 0.25 * ht ** -0.25
    K = a[:, None] * grid.derivative * b[None, :]
    H = np.kron(rep.alpha, K) + np.kron(rep.i_gamma0, np.diag((c * m).astype(complex)))
    gram = Gram(gram_nu0(family, rep, grid))
    return DiscreteOperator(H, gram, f"H_phys({t:g})")


class PhysicalModel:
    """Callable-friendly wrapper around :func:`assemble_H_physical`."""

    def __init__(self, family: MetricFamily, grid: GridSpec, rep: CliffordRep | None = None):
        self.family, self.grid = family, grid
        self.rep = rep or make_clifford()
        self.gram = Gram(gram_nu0(family, self.rep, grid))

    def H(self, t: float) -> np.ndarray:
        return assemble_H_physical(self.family, self.rep, self.grid, t).matrix


def fourier_mode_block(H: np.ndarray, grid: GridSpec, index: int) -> np.ndarray:
    """2x2 block of a translation-invariant operator at FFT index ``index``."""
    M = grid.M
    e = np.exp(1j * grid.wavenumbers[index] * grid.nodes) / np.sqrt(M)
    if grid.antiperiodic:
        # antiperiodic spinors are stored with the e^{i pi x / L} factor removed
        e = np.exp(1j * (grid.wavenumbers[index] - np.pi / grid.L) * grid.nodes) / np.sqrt(M)
    blocks = H.reshape(2, M, 2, M)
    return np.einsum("i,aibj,j->ab", e.conj(), blocks, e)
