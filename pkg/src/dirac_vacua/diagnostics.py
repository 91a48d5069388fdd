"""Log-log rate fits and Fourier-annulus block norms."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import stats

from .errors import InsufficientData


@dataclass(frozen=True)
class PowerFit:
    """Result of fitting ``y ~ C * x**slope`` by least squares in log-log space."""

    slope: float
    stderr: float
    ci95: float
    intercept: float
    n: int
    exact: bool = False

    @property
    def exponent(self) -> float:
        # decay exponent (positive when y decreases)
        return -self.slope

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exponent"] = self.exponent
        for key in ("slope", "exponent", "stderr", "ci95", "intercept"):
            if isinstance(d[key], float) and not math.isfinite(d[key]):
                d[key] = str(d[key])
        return d


def exact_fit(n: int) -> PowerFit:
    return PowerFit(-math.inf, 0.0, 0.0, -math.inf, n, exact=True)


def power_fit(x, y, zero_tol: float = 0.0) -> PowerFit:
    """Least-squares slope of log y against log x.

    Samples with ``y <= zero_tol`` are dropped.  If every sample is dropped the
    data is identically zero and an ``exact`` fit (infinite decay) is returned.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    keep = y > zero_tol
    if not keep.any():
        return exact_fit(len(y))
    if keep.sum() < 3:
        raise InsufficientData(f"need at least 3 nonzero samples, got {int(keep.sum())}")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    res = stats.linregress(lx, ly)
    n = int(keep.sum())
    q = stats.t.ppf(0.975, n - 2) if n > 2 else math.inf
    return PowerFit(float(res.slope), float(res.stderr), float(q * res.stderr),
                    float(res.intercept), n)


def japanese_bracket(t):
    return np.sqrt(1.0 + np.square(t))


def unitary_dft(M: int) -> np.ndarray:
    return np.fft.fft(np.eye(M)) / math.sqrt(M)


def fourier_blocks(A: np.ndarray, M: int) -> np.ndarray:
    """Return ``(I2 x F) A (I2 x F)^*`` for a component-major 2M x 2M matrix."""
    A = np.asarray(A)
    # apply the unitary DFT on both index sides, per spinor component block
    A4 = A.reshape(2, M, 2, M)
    Ah = np.fft.fft(A4, axis=1, norm="ortho")
    Ah = np.fft.ifft(Ah, axis=3, norm="ortho")
    return Ah.reshape(2 * M, 2 * M)


@dataclass(frozen=True)
class AnnulusReport:
    slope: float
    centers: tuple
    norms: tuple
    band: tuple
    ratio: float
    fit: PowerFit | None

    def to_dict(self) -> dict:
        return {
            "slope": self.slope if math.isfinite(self.slope) else str(self.slope),
            "centers": list(self.centers),
            "norms": list(self.norms),
            "band": list(self.band),
            "ratio": self.ratio,
        }


def annulus_edges(kmin: float, kmax: float, ratio: float = 2.0) -> list[float]:
    edges = [float(kmin)]
    while edges[-1] * ratio <= kmax * (1 + 1e-9):
        edges.append(edges[-1] * ratio)
    return edges


def annulus_norms(A_hat: np.ndarray, absk: np.ndarray, band, ratio: float = 2.0):
    """Spectral norms of column groups ``A_hat[:, |k| in [a, b)]``.

    ``absk`` has one entry per column (length 2M).  The last annulus is closed
    so that the band end ``M/4`` is included.
    """
    kmin, kmax = band
    edges = annulus_edges(kmin, kmax, ratio)
    centers, norms = [], []
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        last = i == len(edges) - 2
        sel = (absk >= a - 1e-9) & ((absk <= b + 1e-9) if last else (absk < b - 1e-9))
        if not sel.any():
            continue
        centers.append(math.sqrt(a * b))
        norms.append(float(np.linalg.norm(A_hat[:, sel], 2)))
    return np.array(centers), np.array(norms)


def annulus_slope(A_hat: np.ndarray, absk: np.ndarray, band, ratio: float = 2.0,
                  zero_tol: float = 1e-300) -> AnnulusReport:
    centers, norms = annulus_norms(A_hat, absk, band, ratio)
    if len(norms) == 0:
        raise InsufficientData("no Fourier modes inside the requested band")
    if np.all(norms <= zero_tol):
        return AnnulusReport(-math.inf, tuple(centers), tuple(norms), tuple(band), ratio, None)
    if len(norms) < 2:
        raise InsufficientData("need at least two annuli for a slope")
    keep = norms > zero_tol
    slope = float(np.polyfit(np.log(centers[keep]), np.log(norms[keep]), 1)[0])
    fit = power_fit(centers, norms) if keep.sum() >= 3 else None
    return AnnulusReport(slope, tuple(map(float, centers)), tuple(map(float, norms)),
                         tuple(band), ratio, fit)
