"""f(H) for Gram-selfadjoint operators: eigendecomposition and resolvent quadrature."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import AdjointError, GapViolation, QuadratureError
from .operator_assembly import DiscreteOperator, Gram

GAP_FRACTION = 1e-6


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues (ascending) and Gram-orthonormal eigenvectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray
    gram: Gram

    def apply(self, f) -> np.ndarray:
        """f(H) = V f(w) V^* G."""
        V = self.vectors
        return (V * f(self.values)) @ (V.conj().T @ self.gram.matrix)

    def orthonormality_residual(self) -> float:
        V = self.vectors
        return float(np.abs(V.conj().T @ self.gram.matrix @ V - np.eye(V.shape[1])).max())


def _as_pair(op, gram=None):
    if isinstance(op, DiscreteOperator):
        return op.matrix, op.gram
    if gram is None:
        raise TypeError("pass a DiscreteOperator or a matrix together with its Gram")
    return np.asarray(op), gram if isinstance(gram, Gram) else Gram(gram)


def eig_decompose(op, gram=None, tol: float = 1e-8) -> EigenSystem:
    """Generalized Hermitian eigenproblem (G A) v = w G v via Cholesky congruence."""
    A, G = _as_pair(op, gram)
    res = G.selfadjoint_residual(A)
    if res > tol:
        raise AdjointError(f"operator is not selfadjoint for its Gram (residual {res:.3e})")
    if G.is_diagonal:
        S = G.to_sym(A)
        w, Q = np.linalg.eigh(0.5 * (S + S.conj().T))
        V = G.isqrt_apply(Q)
    else:
        GA = G.matrix @ A
        w, V = scipy.linalg.eigh(0.5 * (GA + GA.conj().T), G.matrix)
    return EigenSystem(w, V, G)


def sym_eigh(A: np.ndarray, gram: Gram) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the Hermitian matrix G^{1/2} A G^{-1/2} (no checks; hot path)."""
    S = gram.to_sym(A)
    return np.linalg.eigh(0.5 * (S + S.conj().T))


def apply_function(A: np.ndarray, gram: Gram, f) -> np.ndarray:
    w, Q = sym_eigh(A, gram)
    return gram.from_sym((Q * f(w)) @ Q.conj().T)


def _gap_check(w: np.ndarray, delta: float | None) -> None:
    scale = float(np.abs(w).max()) if w.size else 0.0
    threshold = max(GAP_FRACTION * scale, delta or 0.0)
    inside = np.abs(w) <= threshold
    if inside.any():
        raise GapViolation(f"{int(inside.sum())} eigenvalue(s) within {threshold:.3e} of zero "
                           f"(closest {np.abs(w).min():.3e})")


def spectral_projection(op, side: str = "+", gram=None, delta: float | None = None) -> np.ndarray:
    """Spectral projection onto the positive ('+') or negative ('-') half line."""
    A, G = _as_pair(op, gram)
    w, Q = sym_eigh(A, G)
    _gap_check(w, delta)
    sel = w > 0 if side == "+" else w < 0
    Qs = Q[:, sel]
    return G.from_sym(Qs @ Qs.conj().T)


def projection_pair(A: np.ndarray, gram: Gram, delta: float | None = None):
    """(P+, P-, eigenvalues, sym eigenvectors) in one decomposition."""
    w, Q = sym_eigh(A, gram)
    _gap_check(w, delta)
    Qp = Q[:, w > 0]
    Pp = gram.from_sym(Qp @ Qp.conj().T)
    return Pp, np.eye(A.shape[0]) - Pp, w, Q


def s_operator(op, gram=None) -> np.ndarray:
    """(H^2 + 1)^{1/2}."""
    A, G = _as_pair(op, gram)
    return apply_function(A, G, lambda w: np.sqrt(w * w + 1.0))


# ---------------------------------------------------------------------------
# resolvent quadrature

KINDS = ("sign", "inv_abs", "inv_sqrt_sq_plus_1")


@dataclass(frozen=True)
class QuadratureResult:
    matrix: np.ndarray
    scheme: str
    nodes: int
    scale: float
    tail_estimate: float


def tangent_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint nodes and weights on [0, pi/2]."""
    phi = (np.arange(n) + 0.5) * (0.5 * math.pi / n)
    return phi, np.full(n, 0.5 * math.pi / n)


def tanh_sinh_rule(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Double-exponential nodes on (a, b] truncated at |u| <= u_max."""
    u_max = 3.2
    u = np.linspace(-u_max, u_max, n)
    hstep = u[1] - u[0]
    s = 0.5 * math.pi * np.sinh(u)
    x = np.tanh(s)
    wts = hstep * 0.5 * math.pi * np.cosh(u) / np.cosh(s) ** 2
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * wts


def _inverse_sqrt_integral(B2: np.ndarray, sigma: float, nodes: int) -> np.ndarray:
    """(2/pi) int_0^inf (B2 + lam^2)^{-1} dlam with lam = sigma tan(phi).

    Equals B2^{-1/2} for B2 with positive spectrum.  After the substitution the
    integrand sigma (B2 cos^2 + sigma^2 sin^2)^{-1} is smooth and periodic, so
    the midpoint rule converges geometrically.
    """
    n = B2.shape[0]
    eye = np.eye(n)
    phi, wts = tangent_rule(nodes)
    acc = np.zeros_like(B2, dtype=complex)
    for p, wt in zip(phi, wts):
        c2, s2 = math.cos(p) ** 2, math.sin(p) ** 2
        acc += wt * sigma * np.linalg.solve(B2 * c2 + sigma ** 2 * s2 * eye, eye)
    return (2.0 / math.pi) * acc


def _truncated_integral(B2: np.ndarray, lam_max: float, nodes: int) -> np.ndarray:
    n = B2.shape[0]
    eye = np.eye(n)
    lam, wts = tanh_sinh_rule(nodes, 0.0, lam_max)
    acc = np.zeros_like(B2, dtype=complex)
    for l, wt in zip(lam, wts):
        acc += wt * np.linalg.solve(B2 + l * l * eye, eye)
    return (2.0 / math.pi) * acc


def resolvent_functional(op, kind: str, nodes: int = 64, scheme: str = "tangent",
                         lam_max_factor: float = 50.0, tol: float = 1e-6,
                         gram=None) -> QuadratureResult:
    """sign(H), |H|^{-1} or (H^2+1)^{-1/2} from resolvent integrals.

    ``scheme='tangent'`` integrates over (0, inf) after lam = sigma tan(phi);
    ``scheme='tanh-sinh'`` truncates at lam_max = lam_max_factor * ||H|| and
    raises :class:`QuadratureError` when the neglected tail (2/pi)||B^{-1}... ||
    bound exceeds ``tol``; ``scheme='auto'`` tries tanh-sinh and falls back to
    the tangent substitution.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    A, G = _as_pair(op, gram)
    S = G.to_sym(A)
    S = 0.5 * (S + S.conj().T)
    n = S.shape[0]
    norm = float(np.linalg.norm(S, 2))
    if kind == "inv_sqrt_sq_plus_1":
        B2 = S @ S + np.eye(n)
        b_min = 1.0
    else:
        B2 = S @ S
        b_min = None
    if scheme in ("tanh-sinh", "auto"):
        lam_max = lam_max_factor * max(norm, 1.0)
        # int_{L}^{inf} (b + lam^2)^{-1} <= 1/L for every b >= 0
        tail = (2.0 / math.pi) / lam_max
        # relative to the smallest entry of the result, |B|^{-1} >= 1/||B||
        rel_tail = tail * math.sqrt(max(norm ** 2 + (1.0 if b_min else 0.0), 1e-300))
        if rel_tail > tol:
            if scheme == "tanh-sinh":
                raise QuadratureError(f"truncated tail {rel_tail:.2e} exceeds {tol:g}", rel_tail)
        else:
            X = _truncated_integral(B2, lam_max, nodes)
            return _finish(X, S, G, kind, "tanh-sinh", nodes, lam_max, rel_tail)
    if scheme not in ("tangent", "auto", "tanh-sinh"):
        raise ValueError(f"unknown scheme {scheme!r}")
    top = math.sqrt(norm ** 2 + 1.0) if kind == "inv_sqrt_sq_plus_1" else norm
    sigma = math.sqrt(max(top, 1e-300))
    X = _inverse_sqrt_integral(B2, sigma, nodes)
    return _finish(X, S, G, kind, "tangent", nodes, sigma, 0.0)


def _finish(X, S, G, kind, scheme, nodes, scale, tail) -> QuadratureResult:
    if kind == "sign":
        X = S @ X
    X = 0.5 * (X + X.conj().T)
    return QuadratureResult(G.from_sym(X), scheme, nodes, scale, tail)


def tangent_rate(a: float, sigma: float) -> float:
    """Nominal geometric rate: error ~ exp(-rate * nodes) for the scalar |a|^{-1}."""
    r = min(abs(a), sigma) / max(abs(a), sigma)
    return 4.0 * math.atanh(r) if r < 1 else math.inf
