"""Named parameter sets used by the CLI presets and the acceptance checks.

Frequencies are in units of the relevant Rabi frequency (or of Omega for the
scan), so the presets are dimensionless.
"""

from __future__ import annotations

import math

import numpy as np

from .dissipation import RateTable, relaxation_rates
from .model import SystemParams, Truncation

# omega + Omega = W keeps every RWA preset on the PLUS resonance.
BASE = dict(W=30.0, omega=20.0, Omega=10.0)

SCAN_N = 1
SCAN_GRID = np.linspace(-2.0, 1.0, 60)


def fig3_params() -> SystemParams:
    return SystemParams(**BASE, eta=1.0)


def fig4_params() -> SystemParams:
    # gamma_001 = gamma/2 = 0.15, gamma_110 = mu_omega/2 = 0.15 at T = 0.
    return SystemParams(**BASE, eta=1.0, gamma=0.3, mu_omega=0.3)


def equivalence_params(finite_T: bool = False) -> SystemParams:
    extra = {}
    if finite_T:
        # nbar_omega = nbar_Omega = 0.2 needs exp(E/T) = 6; N1 = 0.1 needs exp(W/T) = 9.
        extra = dict(T_em=BASE["omega"] / math.log(6.0), T_p=BASE["Omega"] / math.log(6.0),
                     T_a=BASE["W"] / math.log(9.0))
    return SystemParams(**BASE, eta=1.0, gamma=0.2, mu_omega=0.1, mu_Omega=0.1, **extra)


FIG5_RATES = dict(gamma=1.0, mu_omega=0.5, mu_Omega=0.5)


def fig5_system(ratio: float, gamma: float = 1.0, mu_omega: float = 0.5,
                mu_Omega: float = 0.5) -> tuple[SystemParams, RateTable]:
    """Spectrum setup with |Omega_tilde| = ratio * gamma_ac."""
    trunc = Truncation(1, 1)
    base = SystemParams(**BASE, gamma=gamma, mu_omega=mu_omega, mu_Omega=mu_Omega)
    r = relaxation_rates(base, trunc)
    g_ac = r[(1, 0, 0)] + 0.5 * (r[(1, 1, 0)] + r[(0, 0, 1)])
    eta = math.sqrt((ratio * g_ac) ** 2 + (r[(0, 0, 1)] - r[(1, 1, 0)]) ** 2 / 4.0)
    p = base.with_(eta=eta)
    return p, relaxation_rates(p, trunc)


def scan_params(rabi: float, Omega: float = 1.0) -> SystemParams:
    """Two-resonance pair with |Omega_R^(2)| = |Omega_R^(3)| = rabi * Omega (n = 1)."""
    r = rabi * Omega / math.sqrt(SCAN_N)
    return SystemParams(W=10.0 * Omega, omega=10.0 * Omega, Omega=Omega, chi=r, pump_R=r)


def control_params() -> SystemParams:
    return SystemParams(**BASE, pump_R=0.5)
