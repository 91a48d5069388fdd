"""Cauchy evolution U(t, s) for d_t psi = i H(t) psi with Gram-unitary steppers.

The propagator walks a fixed node grid outward from t = 0 in each time
direction.  Steps grow like <t> beyond |t| = 10 and are capped so that
|dt| * ||dH/dt|| stays below a tolerance.  Any requested time is reached by a
partial step from the preceding node, so the node grid (and hence every
result) does not depend on the order of requests.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, asdict
from typing import Callable, Iterator

import numpy as np

from .errors import UnitarityDriftError
from .operator_assembly import Gram

SCHEMES = ("magnus2", "crank-nicolson")


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = "magnus2"
    dt0: float = 0.02
    growth_start: float = 10.0
    deriv_tol: float = 1.0
    drift_budget: float = 1e-8
    dt_max: float = math.inf

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.dt0 <= 0:
            raise ValueError("dt0 must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dt_max"] = None if math.isinf(self.dt_max) else self.dt_max
        return d


@dataclass
class Step:
    """One step t0 -> t1 of the walk; ``U0`` is U(t0, 0).

    For the Magnus scheme ``values``/``vectors`` diagonalize the Hermitian form
    G^{1/2} H(mid) G^{-1/2} so that U(t0 + tau, 0) = G^{-1/2} Q e^{i tau w} Q^* G^{1/2} U0.
    """

    t0: float
    t1: float
    values: np.ndarray | None
    vectors: np.ndarray | None
    U0: np.ndarray


class Propagator:
    def __init__(self, generator: Callable[[float], np.ndarray], gram: Gram,
                 config: StepperConfig | None = None):
        self.generator = generator
        self.gram = gram
        self.config = config or StepperConfig()
        n = gram.n
        self._eye = np.eye(n, dtype=complex)
        self._nodes = {1: [0.0], -1: [0.0]}
        self._checkpoints = {1: {0: self._eye.copy()}, -1: {0: self._eye.copy()}}
        self.drift_ledger: list[tuple[float, float]] = []
        self.steps_taken = 0
        # local error estimate of step i -> i+1, per direction
        self._step_err = {1: {}, -1: {}}

    # -- node grid -------------------------------------------------------
    def _dH_norm(self, t0: float, t1: float) -> float:
        dH = self.gram.to_sym(self.generator(t1) - self.generator(t0))
        # max row sum bounds the spectral norm of a Hermitian matrix
        return float(np.abs(dH).sum(axis=1).max()) / abs(t1 - t0)

    def _next_node(self, t: float, sign: int) -> float:
        cfg = self.config
        dt = min(cfg.dt0 * max(1.0, math.sqrt(1.0 + t * t) / cfg.growth_start), cfg.dt_max)
        if cfg.deriv_tol and math.isfinite(cfg.deriv_tol):
            rate = self._dH_norm(t, t + sign * dt)
            if rate * dt > cfg.deriv_tol:
                dt = max(cfg.deriv_tol / rate, 1e-3 * cfg.dt0)
        return t + sign * dt

    def _extend(self, sign: int, target: float) -> None:
        nodes = self._nodes[sign]
        while abs(nodes[-1]) < abs(target):
            nodes.append(self._next_node(nodes[-1], sign))

    def nodes(self, t_end: float) -> list[float]:
        """Node times from 0 up to (and including) t_end."""
        sign = 1 if t_end >= 0 else -1
        self._extend(sign, t_end)
        nodes = self._nodes[sign]
        k = self._floor_index(sign, t_end)
        out = nodes[: k + 1]
        if out[-1] != t_end:
            out = out + [t_end]
        return list(out)

    def _floor_index(self, sign: int, t: float) -> int:
        absn = [abs(v) for v in self._nodes[sign]] if sign < 0 else self._nodes[sign]
        return bisect.bisect_right(absn, abs(t) * (1 + 1e-15)) - 1

    # -- stepping --------------------------------------------------------
    def _decompose(self, t_mid: float):
        S = self.gram.to_sym(self.generator(t_mid))
        return np.linalg.eigh(0.5 * (S + S.conj().T))

    def _step_matrix(self, t0: float, t1: float, decomposition=None) -> np.ndarray:
        dt = t1 - t0
        mid = 0.5 * (t0 + t1)
        if self.config.scheme == "magnus2":
            w, Q = decomposition if decomposition is not None else self._decompose(mid)
            return self.gram.from_sym((Q * np.exp(1j * dt * w)) @ Q.conj().T)
        H = self.gram.to_sym(self.generator(mid))
        H = 0.5 * (H + H.conj().T)
        A = self._eye - 0.5j * dt * H
        B = self._eye + 0.5j * dt * H
        return self.gram.from_sym(np.linalg.solve(A, B))

    def _rowsum(self, A: np.ndarray) -> float:
        # max row sum of the Hermitian form: an upper bound on its spectral norm
        return float(np.abs(self.gram.to_sym(A)).sum(axis=1).max())

    def local_error(self, t0: float, t1: float) -> float:
        """Leading local error of one step from three generator samples.

        For the midpoint Magnus step this is dt^3 (||[H, H']|| / 12 + ||H''|| / 24).
        Crank-Nicolson adds its rational-approximation term dt^3 ||H||^3 / 12.
        """
        dt = t1 - t0
        H0, Hm, H1 = (self.generator(t) for t in (t0, 0.5 * (t0 + t1), t1))
        dH = (H1 - H0) / dt
        d2H = 4.0 * (H1 - 2.0 * Hm + H0) / dt ** 2
        err = abs(dt) ** 3 * (self._rowsum(Hm @ dH - dH @ Hm) / 12.0 + self._rowsum(d2H) / 24.0)
        if self.config.scheme == "crank-nicolson":
            err += abs(dt) ** 3 * self._rowsum(Hm) ** 3 / 12.0
        return err

    def _record_error(self, sign: int, i: int, t0: float, t1: float) -> None:
        if i not in self._step_err[sign]:
            self._step_err[sign][i] = self.local_error(t0, t1)

    def error_estimate(self, t: float) -> float:
        """Sum of local error estimates from 0 to t (a bound on ||U_computed - U||)."""
        t = float(t)
        if t == 0.0:
            return 0.0
        sign = 1 if t > 0 else -1
        self.U_from_zero(t)
        k = self._floor_index(sign, t)
        nodes = self._nodes[sign]
        for i in range(k):
            self._record_error(sign, i, nodes[i], nodes[i + 1])
        total = sum(self._step_err[sign][i] for i in range(k))
        if nodes[k] != t:
            total += self.local_error(nodes[k], t)
        return total

    def _check_drift(self, U: np.ndarray, t: float, t_prev: float) -> None:
        drift = self.gram.unitarity_residual(U)
        self.drift_ledger.append((t, drift))
        if drift > self.config.drift_budget:
            raise UnitarityDriftError(
                f"unitarity drift {drift:.3e} exceeds budget {self.config.drift_budget:g} "
                f"on [{t_prev:g}, {t:g}]", interval=(t_prev, t), drift=drift)

    def _is_decade(self, nodes, i: int) -> bool:
        if i == 0:
            return False
        a, b = abs(nodes[i - 1]), abs(nodes[i])
        return math.floor(math.log10(max(a, 1e-300))) < math.floor(math.log10(b)) and b >= 1

    def _U_node(self, sign: int, k: int) -> np.ndarray:
        cps = self._checkpoints[sign]
        if k in cps:
            return cps[k]
        start = max(i for i in cps if i <= k)
        nodes = self._nodes[sign]
        U = cps[start]
        for i in range(start, k):
            U = self._step_matrix(nodes[i], nodes[i + 1]) @ U
            self.steps_taken += 1
            if self._is_decade(nodes, i + 1):
                cps[i + 1] = U
                self._check_drift(U, nodes[i + 1], nodes[start])
        cps[k] = U
        self._check_drift(U, nodes[k], nodes[start])
        return U

    def U_from_zero(self, t: float) -> np.ndarray:
        """U(t, 0)."""
        t = float(t)
        if t == 0.0:
            return self._eye.copy()
        sign = 1 if t > 0 else -1
        self._extend(sign, t)
        k = self._floor_index(sign, t)
        U = self._U_node(sign, k)
        tk = self._nodes[sign][k]
        if tk != t:
            U = self._step_matrix(tk, t) @ U
        return U

    def matrix(self, t: float, s: float = 0.0) -> np.ndarray:
        """U(t, s) = U(t, 0) U(0, s) with U(0, s) the Gram inverse of U(s, 0)."""
        if t == s:
            return self._eye.copy()
        Ut = self.U_from_zero(t)
        if s == 0.0:
            return Ut
        return Ut @ self.gram.adjoint(self.U_from_zero(s))

    def evolve(self, f: np.ndarray, s: float, t: float) -> np.ndarray:
        return self.matrix(t, s) @ f

    def walk(self, t_end: float) -> Iterator[Step]:
        """Yield every step from 0 to t_end (Magnus only, decompositions included)."""
        if self.config.scheme != "magnus2":
            raise ValueError("walk() needs the Magnus stepper")
        nodes = self.nodes(t_end)
        sign = 1 if t_end >= 0 else -1
        n_global = len(nodes) if self._nodes[sign][len(nodes) - 1] == nodes[-1] else len(nodes) - 1
        cps = self._checkpoints[sign]
        U = self._eye.copy()
        for i in range(len(nodes) - 1):
            t0, t1 = nodes[i], nodes[i + 1]
            w, Q = self._decompose(0.5 * (t0 + t1))
            yield Step(t0, t1, w, Q, U)
            U = self._step_matrix(t0, t1, (w, Q)) @ U
            self.steps_taken += 1
            if i + 1 < n_global and (i + 1) not in cps and self._is_decade(nodes, i + 1):
                cps[i + 1] = U
                self._check_drift(U, t1, 0.0)
        self._check_drift(U, nodes[-1], 0.0)

    def max_drift(self) -> float:
        return max((d for _, d in self.drift_ledger), default=0.0)


def static_exponential(H: np.ndarray, gram: Gram, t: float) -> np.ndarray:
    """exp(i t H) through the Hermitian form of H (reference for static families)."""
    S = gram.to_sym(H)
    w, Q = np.linalg.eigh(0.5 * (S + S.conj().T))
    return gram.from_sym((Q * np.exp(1j * t * w)) @ Q.conj().T)


def conformal_lift(U_tilde: np.ndarray, c_t: np.ndarray, c_s: np.ndarray, n: int = 2) -> np.ndarray:
    """U = c_t^{(1-n)/2} U~ c_s^{(n-1)/2} with the lapse acting pointwise on both components."""
    p = 0.5 * (n - 1)
    left = np.concatenate([c_t, c_t]) ** (-p)
    right = np.concatenate([c_s, c_s]) ** p
    return (left[:, None] * U_tilde) * right[None, :]


def lifted_gram(gram_tilde: Gram, c0: np.ndarray, n: int = 2) -> Gram:
    """Physical Gram (c0^{(n-1)/2})^* G~ c0^{(n-1)/2}."""
    p = 0.5 * (n - 1)
    f = np.concatenate([c0, c0]) ** p
    return Gram(f[:, None] * gram_tilde.matrix * f[None, :])
