"""Density-matrix reference solver on the truncated space.

The Hamiltonian here is assembled from Kronecker-product ladder operators,
independently of the block bookkeeping in :mod:`trion_dyn.closed`. The
dissipator is the sum of the partial Lindbladians of the fermion, photon and
phonon reservoirs, written as

    d rho/dt = -i (H_eff rho - rho H_eff^dagger) + sum_k g_k l_k rho l_k^dagger,
    H_eff = H - i Gamma,  Gamma = 1/2 sum_k g_k l_k^dagger l_k.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import null_space

from .dissipation import Jump, gain_term, jump_operators
from .model import (ModelError, StateVector, SystemParams, Truncation, check_times,
                    mode_operators)


class TraceDriftError(RuntimeError):
    """Trace of the density matrix drifted beyond tolerance."""


class HamiltonianKind(str, Enum):
    RWA_PLUS = "RWA_PLUS"
    RWA_MINUS = "RWA_MINUS"
    CLASSICAL_PUMP = "CLASSICAL_PUMP"
    FULL_TWO_RESONANCE = "FULL_TWO_RESONANCE"


_TIME_DEPENDENT = {HamiltonianKind.CLASSICAL_PUMP, HamiltonianKind.FULL_TWO_RESONANCE}


@dataclass(frozen=True)
class LindbladGenerator:
    truncation: Truncation
    kind: HamiltonianKind
    H_static: np.ndarray = field(repr=False)
    H_drive: np.ndarray | None = field(repr=False)  # coefficient of exp(-i Omega t)
    drive_frequency: float
    jumps: tuple[Jump, ...]
    Gamma: np.ndarray = field(repr=False)

    @property
    def time_dependent(self) -> bool:
        return self.H_drive is not None

    def hamiltonian(self, t: float = 0.0) -> np.ndarray:
        if self.H_drive is None:
            return self.H_static
        ph = np.exp(-1j * self.drive_frequency * t)
        V = self.H_drive * ph
        return self.H_static + V + V.conj().T

    def H_eff(self, t: float = 0.0) -> np.ndarray:
        return self.hamiltonian(t) - 1j * self.Gamma

    def rhs(self, t: float, rho: np.ndarray) -> np.ndarray:
        He = self.H_eff(t)
        return -1j * (He @ rho - rho @ He.conj().T) + gain_term(self.jumps, rho)

    def liouvillian(self) -> np.ndarray:
        """Superoperator on row-major vec(rho) (time-independent kinds only)."""
        if self.time_dependent:
            raise ModelError("Liouvillian matrix needs a static Hamiltonian")
        d = self.truncation.dim
        eye = np.eye(d)
        He = self.H_eff()
        L = -1j * (np.kron(He, eye) - np.kron(eye, He.conj()))
        for j in self.jumps:
            L += j.rate * np.kron(j.op, j.op.conj())
        return L


def build_generator(params: SystemParams, truncation: Truncation,
                    hamiltonian_kind: HamiltonianKind | str = HamiltonianKind.RWA_PLUS
                    ) -> LindbladGenerator:
    kind = HamiltonianKind(hamiltonian_kind)
    if kind in _TIME_DEPENDENT and truncation.alpha_max != 0:
        raise ModelError("classical-pump kinds use a photon x fermion space (alpha_max = 0)")
    ops = mode_operators(truncation)
    b, c, sg = ops["b"], ops["c"], ops["sigma"]
    sgd, cd, bd = sg.conj().T, c.conj().T, b.conj().T
    a_num, n_num, s_num = (np.diag(q).astype(complex) for q in truncation.quantum_numbers())
    eye = np.eye(truncation.dim)
    H0 = params.omega * (n_num + 0.5 * eye) + params.W * s_num
    drive = None
    if kind is HamiltonianKind.RWA_PLUS:
        V = -params.eta * (sgd @ c @ b)
        H = H0 + params.Omega * (a_num + 0.5 * eye) + V + V.conj().T
    elif kind is HamiltonianKind.RWA_MINUS:
        V = -params.eta * (sgd @ c @ bd)
        H = H0 + params.Omega * (a_num + 0.5 * eye) + V + V.conj().T
    elif kind is HamiltonianKind.CLASSICAL_PUMP:
        H = H0
        drive = -params.pump_R * (sgd @ c)
    else:
        V = -params.chi * (sgd @ c)
        H = H0 + V + V.conj().T
        drive = -params.pump_R * (sgd @ c)
    jumps = jump_operators(params, truncation, include_phonon=kind not in _TIME_DEPENDENT)
    acc = np.zeros((truncation.dim, truncation.dim), dtype=complex)
    for j in jumps:
        acc = acc + j.rate * (j.op.conj().T @ j.op)
    Gamma = 0.5 * acc
    return LindbladGenerator(truncation, kind, H, drive, params.Omega, jumps, Gamma)


@dataclass(frozen=True)
class DensitySeries:
    truncation: Truncation
    times: np.ndarray
    rho: np.ndarray  # (nt, d, d)

    def populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.rho, axis1=1, axis2=2))

    def traces(self) -> np.ndarray:
        return self.populations().sum(axis=1)


def pure_density(state: StateVector) -> np.ndarray:
    v = state.amplitudes
    return np.outer(v, v.conj())


def validate_density(rho: np.ndarray, tol: float = 1e-10) -> None:
    if not np.allclose(rho, rho.conj().T, atol=tol):
        raise ModelError("density matrix must be Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ModelError("density matrix must have unit trace")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise ModelError("density matrix must be positive semidefinite")


def _integrate(fun: Callable, y0: np.ndarray, t0: float, t1: float, shape,
               rtol: float, atol: float) -> np.ndarray:
    if t1 == t0:
        return y0
    d = shape

    def f(t, y):
        rho = y.view(complex).reshape(d)
        return fun(t, rho).reshape(-1).view(float)

    sol = solve_ivp(f, (t0, t1), y0.reshape(-1).view(float), method="DOP853",
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"integration failed: {sol.message}")
    return sol.y[:, -1].copy().view(complex).reshape(d)


def evolve_rho(gen: LindbladGenerator, rho0: np.ndarray | StateVector, times,
               rtol: float = 1e-11, atol: float = 1e-13,
               trace_tol: float = 1e-8) -> DensitySeries:
    """Adaptive integration of the master equation.

    The state is re-symmetrised at every output time; a trace drift above
    ``trace_tol`` aborts with :class:`TraceDriftError`.
    """
    t = check_times(times)
    rho = pure_density(rho0) if isinstance(rho0, StateVector) else np.array(rho0, dtype=complex)
    validate_density(rho)
    d = gen.truncation.dim
    if rho.shape != (d, d):
        raise ModelError("initial density matrix does not match the truncation")
    tr0 = np.trace(rho).real
    out = np.empty((len(t), d, d), dtype=complex)
    cur, tcur = rho, 0.0 if len(t) == 0 else t[0]
    for k, tk in enumerate(t):
        cur = _integrate(gen.rhs, cur, tcur, tk, (d, d), rtol, atol)
        cur = 0.5 * (cur + cur.conj().T)
        drift = abs(np.trace(cur).real - tr0)
        if drift > trace_tol:
            raise TraceDriftError(f"trace drift {drift:.3e} at t={tk}")
        out[k] = cur
        tcur = tk
    return DensitySeries(gen.truncation, t, out)


def steady_state(gen: LindbladGenerator) -> np.ndarray:
    """Fixed point from the null space of the Liouvillian."""
    ns = null_space(gen.liouvillian())
    if ns.shape[1] != 1:
        raise ModelError(f"steady state is not unique (null space dim {ns.shape[1]})")
    d = gen.truncation.dim
    rho = ns[:, 0].reshape(d, d)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def compare_to_dyadics(rho_series: DensitySeries, dyadic_times: np.ndarray,
                       dyadics: np.ndarray) -> float:
    """max over t of max |rho_mn - <C_m C_n*>|.

    Both sides use the row/column convention rho = <C C^dagger>.
    """
    if len(rho_series.times) != len(dyadic_times) or not np.allclose(
            rho_series.times, dyadic_times, rtol=0, atol=1e-12):
        raise ModelError("time grids differ")
    if rho_series.rho.shape != np.shape(dyadics):
        raise ModelError("truncations differ")
    return float(np.max(np.abs(rho_series.rho - np.asarray(dyadics))))
