"""Thermal factors, per-state relaxation rates and Langevin noise correlators.

Rate convention: gamma_{alpha n s} is the *amplitude* decay rate of C_{alpha n s},
so populations decay at 2 gamma. The truncated tables use the same hard Fock
cutoff as the density-matrix generator; at the top rung of a mode there is no
level to absorb into, so the thermal absorption term of that mode drops out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .model import ModelError, SystemParams, Truncation, mode_operators

PSD_FLOOR = -1e-12


class NoiseModelError(RuntimeError):
    """Noise correlator is not positive semidefinite."""


@dataclass(frozen=True)
class ThermalFactors:
    N0: float
    N1: float
    nbar_omega: float
    nbar_Omega: float


def _boltzmann(energy: float, temperature: float) -> float:
    """exp(-E/T) with the T -> 0 limit taken exactly."""
    if temperature == 0:
        return 0.0
    return math.exp(-energy / temperature)


def bose(energy: float, temperature: float) -> float:
    if temperature == 0:
        return 0.0
    if energy <= 0:
        raise ModelError("Bose factor needs a positive mode energy")
    x = energy / temperature
    return math.exp(-x) / -math.expm1(-x)  # stable for large x


def thermal_factors(params: SystemParams) -> ThermalFactors:
    x = _boltzmann(params.W, params.T_a)
    return ThermalFactors(
        N0=1.0 / (1.0 + x),
        N1=x / (1.0 + x),
        nbar_omega=bose(params.omega, params.T_em),
        nbar_Omega=bose(abs(params.Omega), params.T_p) if params.T_p > 0 else 0.0,
    )


def _mode_term(mu: float, nbar: float, k: int) -> float:
    return mu * (nbar * (k + 1) + (nbar + 1.0) * k)


def relaxation_rate(params: SystemParams, alpha: int, n: int, s: int,
                    factors: ThermalFactors | None = None) -> float:
    """Untruncated amplitude decay rate of |alpha, n, s>."""
    f = factors or thermal_factors(params)
    atom = params.gamma * (f.N0 if s == 1 else f.N1)
    return 0.5 * (atom
                  + _mode_term(params.mu_omega, f.nbar_omega, n)
                  + _mode_term(params.mu_Omega, f.nbar_Omega, alpha))


@dataclass(frozen=True)
class RateTable:
    """Map from basis labels to amplitude decay rates.

    Keys are ``(alpha, n, s)`` for the quantum phonon model and ``(n, s)`` for
    the classical-pump model.
    """

    rates: Mapping[tuple, float]
    truncation: Truncation | None = None
    vector: np.ndarray | None = field(default=None, repr=False)

    def __getitem__(self, key: tuple) -> float:
        return self.rates[tuple(key)]

    def __iter__(self):
        return iter(self.rates.items())

    def as_vector(self) -> np.ndarray:
        """Rates aligned with the basis ordering of ``truncation``."""
        if self.vector is None:
            raise ModelError("rate table has no basis alignment")
        return self.vector


def _accumulate(params: SystemParams, f: ThermalFactors, a: int, n: int, s: int,
                top_a: bool, top_n: bool, phonon: bool) -> float:
    # Same term order as the jump list: sigma^dag, sigma, c^dag, c, b^dag, b.
    acc = 0.0
    acc += params.gamma * f.N1 * (1 - s)
    acc += params.gamma * f.N0 * s
    acc += params.mu_omega * f.nbar_omega * (0 if top_n else n + 1)
    acc += params.mu_omega * (f.nbar_omega + 1.0) * n
    if phonon:
        acc += params.mu_Omega * f.nbar_Omega * (0 if top_a else a + 1)
        acc += params.mu_Omega * (f.nbar_Omega + 1.0) * a
    return 0.5 * acc


def relaxation_rates(params: SystemParams, truncation: Truncation) -> RateTable:
    """Rates for every state of a truncated space (hard cutoff at the top rung)."""
    f = thermal_factors(params)
    table: dict[tuple, float] = {}
    vec = np.zeros(truncation.dim)
    for i, (a, n, s) in enumerate(truncation.states()):
        value = _accumulate(params, f, a, n, s, a == truncation.alpha_max,
                            n == truncation.n_max, True)
        table[(a, n, s)] = value
        vec[i] = value
    vec.setflags(write=False)
    return RateTable(table, truncation, vec)


def classical_pump_rates(params: SystemParams, n_max: int) -> RateTable:
    """Photon + atom rates with the phonon reservoir removed."""
    trunc = Truncation(0, n_max)
    f = thermal_factors(params)
    table: dict[tuple, float] = {}
    vec = np.zeros(trunc.dim)
    for i, (_, n, s) in enumerate(trunc.states()):
        value = _accumulate(params, f, 0, n, s, True, n == n_max, False)
        table[(n, s)] = value
        vec[i] = value
    vec.setflags(write=False)
    return RateTable(table, trunc, vec)


@dataclass(frozen=True)
class Jump:
    label: str
    rate: float
    op: np.ndarray = field(repr=False)


def jump_operators(params: SystemParams, truncation: Truncation,
                   include_phonon: bool = True) -> tuple[Jump, ...]:
    """Unit-normalised jump operators with their rates (zero-rate jumps dropped)."""
    ops = mode_operators(truncation)
    f = thermal_factors(params)
    b, c, sg = ops["b"], ops["c"], ops["sigma"]
    cand = [
        ("sigma_dag", params.gamma * f.N1, sg.conj().T),
        ("sigma", params.gamma * f.N0, sg),
        ("c_dag", params.mu_omega * f.nbar_omega, c.conj().T),
        ("c", params.mu_omega * (f.nbar_omega + 1.0), c),
    ]
    if include_phonon:
        cand += [
            ("b_dag", params.mu_Omega * f.nbar_Omega, b.conj().T),
            ("b", params.mu_Omega * (f.nbar_Omega + 1.0), b),
        ]
    return tuple(Jump(lbl, r, op) for lbl, r, op in cand if r > 0)


class NoiseKind(str, Enum):
    FROZEN_POPULATIONS = "FROZEN_POPULATIONS"
    ZERO_T_SINK = "ZERO_T_SINK"
    LINDBLAD_MATCHED = "LINDBLAD_MATCHED"


@dataclass(frozen=True)
class NoiseModel:
    """Correlator recipe. ``jumps`` is required for LINDBLAD_MATCHED; ``sink``
    is the basis index receiving the norm in ZERO_T_SINK (ground state)."""

    kind: NoiseKind
    jumps: tuple[Jump, ...] = ()
    sink: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NoiseKind(self.kind))

    @classmethod
    def for_system(cls, kind: NoiseKind | str, params: SystemParams,
                   truncation: Truncation, include_phonon: bool = True) -> "NoiseModel":
        kind = NoiseKind(kind)
        jumps = jump_operators(params, truncation, include_phonon) \
            if kind is NoiseKind.LINDBLAD_MATCHED else ()
        return cls(kind, jumps, 0)


def gain_term(jumps: tuple[Jump, ...], X: np.ndarray) -> np.ndarray:
    """sum_k g_k l_k X l_k^dagger."""
    out = np.zeros_like(X, dtype=complex)
    for j in jumps:
        out += j.rate * (j.op @ X @ j.op.conj().T)
    return out


def noise_correlator(model: NoiseModel, rates: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Correlator matrix D for the current averaged dyadics ``X[a, b] = <C_a C_b*>``.

    FROZEN_POPULATIONS: D = diag(2 g_a X_aa). ZERO_T_SINK: only the sink diagonal,
    equal to sum_a 2 g_a X_aa summed over every state, which balances the norm
    exactly. LINDBLAD_MATCHED: D = sum_k g_k l_k X l_k^dagger.
    """
    X = np.asarray(X)
    g = np.asarray(rates, dtype=float)
    if model.kind is NoiseKind.FROZEN_POPULATIONS:
        return np.diag(2.0 * g * np.real(np.diagonal(X))).astype(complex)
    if model.kind is NoiseKind.ZERO_T_SINK:
        D = np.zeros(X.shape, dtype=complex)
        D[model.sink, model.sink] = float(np.sum(2.0 * g * np.real(np.diagonal(X))))
        return D
    if not model.jumps:
        # No jump with non-zero rate: nothing feeds back.
        return np.zeros(X.shape, dtype=complex)
    return gain_term(model.jumps, X)


def psd_factor(D: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    """L with L L^dagger = D, after clipping round-off negatives.

    Raises :class:`NoiseModelError` for eigenvalues below ``floor``.
    """
    H = 0.5 * (D + D.conj().T)
    if not np.any(H):
        return np.zeros_like(H)
    diag = np.real(np.diagonal(H))
    if np.count_nonzero(H - np.diag(np.diagonal(H))) == 0:
        if diag.min() < floor:
            raise NoiseModelError(f"noise correlator eigenvalue {diag.min():.3e} < {floor}")
        return np.diag(np.sqrt(np.clip(diag, 0.0, None))).astype(complex)
    w, V = np.linalg.eigh(H)
    if w.min() < floor:
        raise NoiseModelError(f"noise correlator eigenvalue {w.min():.3e} < {floor}")
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)
