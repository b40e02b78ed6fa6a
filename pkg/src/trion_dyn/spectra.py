"""Cavity emission spectrum after a single fermion excitation.

The detected field is taken proportional to the cavity operator with unit
constant, and the Langevin terms are left out of it. All spectra carry the
same normalisation, so values compare across parameter sets.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import find_peaks

from .dissipation import RateTable
from .model import ModelError, SystemParams
from .stochastic import damped_rabi

TAIL_DECAYS = 30.0  # semi-infinite integrals stop at gamma_ac * t = 30
_GL_NODES = 16
_PANEL_PHASE = 10.0


@dataclass(frozen=True)
class SpectralRates:
    """Rate combination that controls the spectrum."""

    gamma_100: float
    gamma_110: float
    gamma_001: float
    rabi_sq: float  # Omega_tilde^2, negative when overdamped
    omega: float

    @property
    def gamma_ac(self) -> float:
        return self.gamma_100 + 0.5 * (self.gamma_110 + self.gamma_001)

    @property
    def rabi_tilde(self) -> complex:
        return cmath.sqrt(self.rabi_sq)


def spectral_rates(params: SystemParams, rates: RateTable) -> SpectralRates:
    if params.Delta != 0:
        raise ModelError("the single-excitation spectrum is defined at exact resonance")
    damped_rabi(params, rates)  # branch check
    g110, g001 = rates[(1, 1, 0)], rates[(0, 0, 1)]
    w2 = abs(params.eta) ** 2 - (g001 - g110) ** 2 / 4.0
    return SpectralRates(rates[(1, 0, 0)], g110, g001, w2, params.omega)


def _check_convergent(sr: SpectralRates) -> None:
    if sr.gamma_ac <= 0:
        raise ModelError("gamma_ac must be > 0 for the spectrum integrals to converge")
    if sr.rabi_sq < 0 and math.sqrt(-sr.rabi_sq) >= sr.gamma_ac:
        raise ModelError("overdamped growth rate exceeds gamma_ac; integrals diverge")


def _correlator(sr: SpectralRates, t, tau, carrier: bool = True):
    om = sr.rabi_tilde
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    val = np.conj(np.sin(om * t)) * np.sin(om * (t + tau)) * np.exp(-sr.gamma_ac * (2 * t + tau))
    if carrier:
        val = val * np.exp(-1j * sr.omega * tau)
    return val


def autocorrelation(params: SystemParams, rates: RateTable, t, tau) -> np.ndarray:
    """<c^dagger(t) c(t + tau)> after preparation in |0,0,1>."""
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(t < 0) or np.any(tau < 0):
        raise ModelError("t and tau must be >= 0")
    return _correlator(spectral_rates(params, rates), t, tau)


def autocorrelation_from_amplitudes(c110: Callable[[np.ndarray], np.ndarray],
                                    omega_100: float, gamma_100: float, t, tau) -> np.ndarray:
    """Same correlator assembled from any solution for C_110(t).

    C_110*(t) C_110(t+tau) exp(i w_100 tau - gamma_100 (2t + tau)).
    """
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return (np.conj(c110(t)) * c110(t + tau)
            * np.exp(1j * omega_100 * tau - gamma_100 * (2 * t + tau)))


@dataclass(frozen=True)
class PeakReport:
    n_peaks: int
    positions: np.ndarray
    values: np.ndarray
    split: bool


@dataclass(frozen=True)
class SpectrumResult:
    nu: np.ndarray
    S: np.ndarray
    gamma_ac: float
    rabi_tilde: complex
    omega: float
    tail_bound: float = 0.0
    peaks: PeakReport | None = field(default=None)

    @property
    def detuning(self) -> np.ndarray:
        return self.nu - self.omega


def _analytic_values(sr: SpectralRates, x: np.ndarray) -> np.ndarray:
    g, w2 = sr.gamma_ac, sr.rabi_sq
    pref = abs(w2) / (4.0 * g * (w2 + g * g))
    z = g - 1j * x
    return pref * np.real((2 * g - 1j * x) / (z * z + w2)) / math.pi


def spectrum_analytic(params: SystemParams, rates: RateTable, nu) -> SpectrumResult:
    """Closed-form S(nu) (shared normalisation, detector constant 1)."""
    sr = spectral_rates(params, rates)
    _check_convergent(sr)
    nu = np.asarray(nu, dtype=float).reshape(-1)
    S = _analytic_values(sr, nu - sr.omega)
    res = SpectrumResult(nu, S, sr.gamma_ac, sr.rabi_tilde, sr.omega)
    return _with_peaks(res)


def _panels(length: float, max_freq: float) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights on [0, length]."""
    per = max(4, int(math.ceil(length * max_freq / _PANEL_PHASE)))
    x0, w0 = np.polynomial.legendre.leggauss(_GL_NODES)
    edges = np.linspace(0.0, length, per + 1)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + 0.5 * h[:, None] * (x0[None, :] + 1)).reshape(-1)
    weights = (0.5 * h[:, None] * w0[None, :]).reshape(-1)
    return nodes, weights


def spectrum_numeric(params: SystemParams, rates: RateTable, nu,
                     t_max: float | None = None,
                     correlator: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
                     ) -> SpectrumResult:
    """S(nu) = (1/pi) Re int dtau G(tau) e^{i nu tau}, G(tau) = int dt <c^dag(t) c(t+tau)>.

    Both integrals use composite Gauss-Legendre quadrature on [0, t_max]
    (default gamma_ac t_max = 30). ``correlator(t, tau)`` may replace the
    closed-form one; it must return the slowly varying part, i.e. the
    correlator multiplied by exp(i omega tau).
    """
    sr = spectral_rates(params, rates)
    _check_convergent(sr)
    g = sr.gamma_ac
    if t_max is None:
        t_max = TAIL_DECAYS / g
    if not (t_max > 0 and math.isfinite(t_max)):
        raise ModelError("t_max must be positive")
    nu = np.asarray(nu, dtype=float).reshape(-1)
    x = nu - sr.omega
    om = abs(sr.rabi_tilde)
    fmax = float(np.max(np.abs(x), initial=0.0)) + 2 * om + g
    tt, wt = _panels(t_max, 2 * om + g)
    tau, wtau = _panels(t_max, fmax)
    corr = correlator or (lambda a, b: _correlator(sr, a, b, carrier=False))
    G = np.empty(len(tau), dtype=complex)
    for k0 in range(0, len(tau), 512):
        sl = slice(k0, k0 + 512)
        G[sl] = corr(tt[None, :], tau[sl, None]) @ wt
    phase = np.exp(1j * np.outer(x, tau))
    S = np.real(phase @ (wtau * G)) / math.pi
    # Discarded tail: |corr| <= C exp(-gamma_eff (2t + tau)).
    kappa = math.sqrt(-sr.rabi_sq) if sr.rabi_sq < 0 else 0.0
    g_eff = g - kappa
    bound = math.exp(-g_eff * t_max) / (math.pi * g_eff * g_eff) if g_eff > 0 else math.inf
    res = SpectrumResult(nu, S, g, sr.rabi_tilde, sr.omega, bound)
    return _with_peaks(res)


def _with_peaks(res: SpectrumResult) -> SpectrumResult:
    try:
        pk = peak_analysis(res)
    except ModelError:
        pk = None
    return SpectrumResult(res.nu, res.S, res.gamma_ac, res.rabi_tilde, res.omega,
                          res.tail_bound, pk)


def peak_analysis(spec: SpectrumResult, min_points_per_gamma: int = 8,
                  rel_floor: float = 1e-9) -> PeakReport:
    """Local maxima with prominence above rel_floor * max|S|, refined by a parabola.

    Prominence is measured against the whole curve, so a quartic-flat top at the
    splitting threshold still counts as one peak while rounding ripples do not.
    """
    nu, S = np.asarray(spec.nu), np.asarray(spec.S)
    if len(nu) < 3:
        raise ModelError("need at least three grid points")
    step = np.diff(nu)
    if np.any(step <= 0):
        raise ModelError("frequency grid must be increasing")
    if step.max() > spec.gamma_ac / min_points_per_gamma:
        raise ModelError(f"grid too coarse: spacing {step.max():.3g} exceeds "
                         f"gamma_ac/{min_points_per_gamma}")
    top = float(np.max(np.abs(S)))
    pos, val = [], []
    if top > 0:
        idx, _ = find_peaks(S, prominence=rel_floor * top)
        for i in idx:
            y0, y1, y2 = S[i - 1], S[i], S[i + 1]
            den = y0 - 2 * y1 + y2
            off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
            h = 0.5 * (nu[i + 1] - nu[i - 1])
            pos.append(nu[i] + off * h)
            val.append(y1 - 0.25 * (y0 - y2) * off)
    return PeakReport(len(pos), np.array(pos), np.array(val), len(pos) == 2)


def expected_peaks(params: SystemParams, rates: RateTable) -> np.ndarray:
    """Detunings (nu - omega) of the maxima: +/- sqrt(Omega_tilde^2 - gamma_ac^2)."""
    sr = spectral_rates(params, rates)
    d = sr.rabi_sq - sr.gamma_ac ** 2
    if d <= 0:
        return np.array([0.0])
    r = math.sqrt(d)
    return np.array([-r, r])
