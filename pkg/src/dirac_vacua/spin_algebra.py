"""Clifford representation, Hermitian form, transported frames and densities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .geometry import GridSpec, MetricFamily, christoffel_time
from .errors import ReductionOrderViolation, TransportFailure

I2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class CliffordRep:
    """Gamma matrices for signature (-, +) and the Hermitian form beta.

    Convention: gamma^a gamma^b + gamma^b gamma^a = 2 g^{ab}, g = diag(-1, 1).
    beta is normalized so that i beta gamma^0 is the identity.
    """

    gamma0: np.ndarray
    gamma1: np.ndarray
    beta: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        """i gamma^0 gamma^1, the matrix multiplying the spatial derivative."""
        return 1j * self.gamma0 @ self.gamma1

    @property
    def i_gamma0(self) -> np.ndarray:
        return 1j * self.gamma0

    @property
    def normal_form(self) -> np.ndarray:
        """i beta gamma^0, the pointwise positive form entering the Gram matrix."""
        return 1j * self.beta @ self.gamma0

    def residuals(self) -> dict[str, float]:
        g0, g1, b = self.gamma0, self.gamma1, self.beta
        nf = self.normal_form
        nf_h = 0.5 * (nf + nf.conj().T)
        return {
            "gamma0_squared": float(np.abs(g0 @ g0 + I2).max()),
            "gamma1_squared": float(np.abs(g1 @ g1 - I2).max()),
            "anticommutator": float(np.abs(g0 @ g1 + g1 @ g0).max()),
            "beta_hermitian": float(np.abs(b - b.conj().T).max()),
            "beta_gamma0": float(np.abs(g0.conj().T @ b + b @ g0).max()),
            "beta_gamma1": float(np.abs(g1.conj().T @ b + b @ g1).max()),
            "normal_form_hermitian": float(np.abs(nf - nf_h).max()),
            # positive value means failure
            "normal_form_positive": float(max(0.0, -np.linalg.eigvalsh(nf_h).min())),
        }

    def min_normal_eigenvalue(self) -> float:
        nf = self.normal_form
        return float(np.linalg.eigvalsh(0.5 * (nf + nf.conj().T)).min())


def make_clifford() -> CliffordRep:
    g0 = np.array([[0, 1], [-1, 0]], dtype=complex)
    g1 = np.array([[1, 0], [0, -1]], dtype=complex)
    beta = 1j * g0
    return CliffordRep(g0, g1, beta)


def density_weight(family: MetricFamily, t: float, x) -> np.ndarray:
    """w(t, x) = |h_t|^{-1/4} |h_0|^{1/4}."""
    x = np.asarray(x, dtype=float)
    return np.abs(np.real(family.h(t, x))) ** -0.25 * np.abs(np.real(family.h(0.0, x))) ** 0.25


def _require_reduced(family: MetricFamily) -> None:
    if not family.reduced:
        raise ReductionOrderViolation("operation needs a reduced family (c = 1, b = 0)")


def frame_transport(family: MetricFamily, x, t: float, rtol: float = 1e-12) -> np.ndarray:
    """Spatial frame component u^1(t, x) from parallel transport along d/dt.

    Solves du/dt = -G^1_01 u with u(0) = h(0, x)^{-1/2}.
    """
    _require_reduced(family)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u0 = np.real(family.h(0.0, x)) ** -0.5
    if t == 0:
        return u0

    def rhs(s, u):
        return -christoffel_time(family, s, x)["Gamma1_01"] * u

    sol = solve_ivp(rhs, (0.0, float(t)), u0, method="DOP853", rtol=rtol, atol=1e-14)
    if not sol.success:
        raise TransportFailure(f"frame transport to t={t} failed: {sol.message}")
    return sol.y[:, -1]


def spin_connection_x(family: MetricFamily, rep: CliffordRep, t: float, x: float) -> np.ndarray:
    """Spatial spin-connection coefficient sigma_1 in the transported frame.

    In one space dimension only the extrinsic curvature survives:
    sigma_1 = (1/4) h^{-1} d_t h gamma^0 gamma^1.
    """
    _require_reduced(family)
    gamma = christoffel_time(family, t, np.array([float(x)]))["Gamma1_01"][0]
    return 0.5 * gamma * rep.gamma0 @ rep.gamma1


def compatibility_residual(family: MetricFamily, rep: CliffordRep, t: float, x0: float,
                           rng: np.random.Generator | None = None, step: float = 1e-3) -> dict:
    """Metric compatibility of the spin connection.

    Returns the algebraic residual ||sigma_1^* beta + beta sigma_1|| and the
    discrepancy of the product rule e_1(psi^* beta phi) = (nabla psi)^* beta phi +
    psi^* beta nabla phi, evaluated with 4th-order differences of random smooth
    spinor fields.
    """
    rng = rng or np.random.default_rng(0)
    sigma = spin_connection_x(family, rep, t, x0)
    alg = float(np.abs(sigma.conj().T @ rep.beta + rep.beta @ sigma).max())
    coeff = rng.normal(size=(2, 2, 3)) + 1j * rng.normal(size=(2, 2, 3))

    def spinor(i, x):
        n = np.arange(1, 4)
        return np.array([np.sum(coeff[i, a] * np.exp(1j * n * x)) for a in range(2)])

    def dspinor(i, x):
        n = np.arange(1, 4)
        return np.array([np.sum(1j * n * coeff[i, a] * np.exp(1j * n * x)) for a in range(2)])

    u = frame_transport(family, np.array([x0]), t)[0]

    def pairing(x):
        return spinor(0, x).conj() @ rep.beta @ spinor(1, x)

    d = step
    lhs = u * (pairing(x0 - 2 * d) - 8 * pairing(x0 - d) + 8 * pairing(x0 + d)
               - pairing(x0 + 2 * d)) / (12 * d)
    nab = [u * dspinor(i, x0) + sigma @ spinor(i, x0) for i in range(2)]
    rhs = nab[0].conj() @ rep.beta @ spinor(1, x0) + spinor(0, x0).conj() @ rep.beta @ nab[1]
    return {"algebraic": alg, "product_rule": float(abs(lhs - rhs))}


def transport_operator(family: MetricFamily, t: float, s: float, grid: GridSpec) -> np.ndarray:
    """Diagonal density operator w(t)/w(s) acting on component-major spinor vectors."""
    _require_reduced(family)
    x = grid.nodes
    ratio = density_weight(family, t, x) / density_weight(family, s, x)
    return np.kron(I2, np.diag(ratio))


def surface_gram(family: MetricFamily, rep: CliffordRep, grid: GridSpec, t: float) -> np.ndarray:
    """Hermitian pairing on the surface at time t: (i beta gamma^0) x diag(|h_t|^{1/2} L/M)."""
    w = np.abs(np.real(family.h(t, grid.nodes))) ** 0.5 * grid.dx
    return np.kron(rep.normal_form, np.diag(w))


def transport_compatibility_residual(family: MetricFamily, rep: CliffordRep, grid: GridSpec,
                                     t: float, s: float, rng: np.random.Generator) -> float:
    """|f^* T^* B_t T g - f^* B_s g| for random f, g (relative)."""
    T = transport_operator(family, t, s, grid)
    Bt = surface_gram(family, rep, grid, t)
    Bs = surface_gram(family, rep, grid, s)
    n = 2 * grid.M
    f = rng.normal(size=n) + 1j * rng.normal(size=n)
    g = rng.normal(size=n) + 1j * rng.normal(size=n)
    lhs = f.conj() @ T.conj().T @ Bt @ T @ g
    rhs = f.conj() @ Bs @ g
    return float(abs(lhs - rhs) / max(abs(rhs), 1e-300))


__all__ = ["CliffordRep", "make_clifford", "density_weight", "frame_transport",
           "spin_connection_x", "compatibility_residual", "transport_operator",
           "surface_gram", "transport_compatibility_residual"]
