"""Exact RWA dynamics: 2x2 invariant blocks and their closed-form solution.

Each block pairs |alpha, n, 0> with its fermion-excited partner. On the PLUS
branch the partner is |alpha-1, n-1, 1>, on the MINUS branch |alpha+1, n-1, 1>.
With C = (C_upper, C_partner) every block obeys

    dC/dt + M C = 0,   M = [[i w + g1, -i R*], [-i R, i w - i D + g2]]

where w is the block frequency, R the generalised Rabi frequency, D the
detuning and (g1, g2) optional amplitude decay rates. States that belong to
no block inside the truncation only pick up their bare phase.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (Branch, ModelError, StateSeries, StateVector, SystemParams,
                    Truncation, check_times)

# cond(V) above this switches to the confluent (Jordan) propagator.
_JORDAN_COND = 1e6


@dataclass(frozen=True)
class RwaBlock:
    """One invariant 2x2 subspace.

    ``alpha`` is ``None`` for blocks of the classical-pump chain, where the
    phonon index has been dropped.
    """

    alpha: int | None
    n: int
    Omega_R: complex
    omega_block: float
    Delta: float

    @property
    def rabi(self) -> float:
        return abs(self.Omega_R)


def bare_frequency(params: SystemParams, alpha: int, n: int, s: int) -> float:
    return params.Omega * (alpha + 0.5) + params.omega * (n + 0.5) + params.W * s


def partner_of(params: SystemParams, alpha: int, n: int) -> tuple[int, int, int]:
    """Fermion-excited partner of |alpha, n, 0> on the chosen branch."""
    if params.resonance_branch is Branch.PLUS:
        return alpha - 1, n - 1, 1
    return alpha + 1, n - 1, 1


def make_block(params: SystemParams, alpha: int, n: int) -> RwaBlock:
    """Block headed by |alpha, n, 0>."""
    if n < 1:
        raise ModelError("a block needs n >= 1")
    if params.resonance_branch is Branch.PLUS:
        if alpha < 1:
            raise ModelError("a PLUS block needs alpha >= 1")
        weight = alpha * n
    else:
        if alpha < 0:
            raise ModelError("alpha must be >= 0")
        weight = (alpha + 1) * n
    return RwaBlock(alpha=alpha, n=n, Omega_R=params.eta * math.sqrt(weight),
                    omega_block=bare_frequency(params, alpha, n, 0),
                    Delta=params.Delta)


@dataclass(frozen=True)
class BlockEigensystem:
    """Eigen-solution of one block.

    ``lambda_k = i w - i delta_k``; eigenvectors are ``(1, a_k)`` when the
    coupling is non-zero. With zero coupling the block is diagonal, the
    eigenvectors are the basis vectors and ``a_k`` is ``None``.
    """

    lambda_1: complex
    lambda_2: complex
    delta_1: complex
    delta_2: complex
    a_1: complex | None
    a_2: complex | None
    matrix: np.ndarray
    vectors: np.ndarray
    degenerate: bool
    jordan: bool


def block_matrix(block: RwaBlock, gamma_pair: tuple[float, float] | None = None) -> np.ndarray:
    g1, g2 = gamma_pair if gamma_pair is not None else (0.0, 0.0)
    w, d, r = block.omega_block, block.Delta, block.Omega_R
    return np.array([[1j * w + g1, -1j * np.conj(r)],
                     [-1j * r, 1j * w - 1j * d + g2]], dtype=complex)


def block_eigensystem(block: RwaBlock, gamma_pair: tuple[float, float] | None = None
                      ) -> BlockEigensystem:
    """Closed-form eigenvalues and eigenvectors of a block."""
    M = block_matrix(block, gamma_pair)
    r, d, w = block.Omega_R, block.Delta, block.omega_block
    mag2 = abs(r) ** 2
    if gamma_pair is None:
        root = math.sqrt(d * d / 4.0 + mag2)
        delta_1, delta_2 = complex(d / 2 + root), complex(d / 2 - root)
        g1 = 0.0
    else:
        g1, g2 = gamma_pair
        root = cmath.sqrt((d + 1j * (g2 - g1)) ** 2 / 4.0 + mag2)
        base = d / 2 + 1j * (g1 + g2) / 2
        delta_1, delta_2 = base + root, base - root
    lam_1, lam_2 = 1j * w - 1j * delta_1, 1j * w - 1j * delta_2

    if r == 0:
        # Diagonal block: order eigenvalues to match the basis vectors.
        vectors = np.eye(2, dtype=complex)
        lam_1, lam_2 = complex(M[0, 0]), complex(M[1, 1])
        delta_1, delta_2 = 1j * (lam_1 - 1j * w), 1j * (lam_2 - 1j * w)
        return BlockEigensystem(lam_1, lam_2, delta_1, delta_2, None, None, M,
                                vectors, degenerate=bool(lam_1 == lam_2), jordan=False)

    with np.errstate(over="ignore", invalid="ignore"):
        a_1 = (delta_1 - 1j * g1) / np.conj(r)
        a_2 = (delta_2 - 1j * g1) / np.conj(r)
    vectors = np.array([[1.0, 1.0], [a_1, a_2]], dtype=complex)
    # Near-defective or vanishingly weak coupling: (1, a_k) is numerically
    # useless there, so the propagator switches to the confluent closed form.
    jordan = bool(not np.all(np.isfinite(vectors)) or np.linalg.cond(vectors) > _JORDAN_COND)
    return BlockEigensystem(complex(lam_1), complex(lam_2), complex(delta_1),
                            complex(delta_2), complex(a_1), complex(a_2), M, vectors,
                            degenerate=bool(abs(lam_1 - lam_2) <= 1e-9 * max(1.0, abs(mag2) ** 0.5)),
                            jordan=jordan)


def _sinhc(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    small = np.abs(z) < 1e-4
    zs = z[small]
    out[small] = 1.0 + zs * zs / 6.0 + zs ** 4 / 120.0
    zl = z[~small]
    out[~small] = np.sinh(zl) / zl
    return out


def confluent_propagator(M: np.ndarray, t: np.ndarray) -> np.ndarray:
    """exp(-M t) for a 2x2 matrix, valid at exceptional points.

    With M = mu + N, N traceless, N^2 = k^2 I and
    exp(-N t) = cosh(k t) I - t sinhc(k t) N.
    """
    t = np.asarray(t, dtype=float)
    mu = (M[0, 0] + M[1, 1]) / 2
    N = M - mu * np.eye(2)
    k = cmath.sqrt(-(N[0, 0] * N[1, 1] - N[0, 1] * N[1, 0]))
    kt = k * t
    ch = np.cosh(kt)
    sh = t * _sinhc(kt)
    env = np.exp(-mu * t)
    out = np.empty(t.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = env * (ch - sh * N[0, 0])
    out[..., 0, 1] = env * (-sh * N[0, 1])
    out[..., 1, 0] = env * (-sh * N[1, 0])
    out[..., 1, 1] = env * (ch - sh * N[1, 1])
    return out


def block_propagator(eig: BlockEigensystem, t) -> np.ndarray:
    """exp(-M t), shape ``t.shape + (2, 2)``."""
    t = np.asarray(t, dtype=float)
    if eig.jordan:
        return confluent_propagator(eig.matrix, t)
    V = eig.vectors
    Vinv = np.linalg.inv(V)
    e1 = np.exp(-eig.lambda_1 * t)[..., None, None]
    e2 = np.exp(-eig.lambda_2 * t)[..., None, None]
    P1 = np.outer(V[:, 0], Vinv[0, :])
    P2 = np.outer(V[:, 1], Vinv[1, :])
    return e1 * P1 + e2 * P2


def evolve_block(block: RwaBlock, eig: BlockEigensystem, initial: Sequence[complex], t
                 ) -> np.ndarray:
    """Pair amplitudes at times ``t``; returns shape ``(len(t), 2)``.

    The initial pair is expanded as A(1, a_1) + B(1, a_2) and each component
    evolves with exp(-lambda_k t).
    """
    t = check_times(np.atleast_1d(t))
    c0 = np.asarray(initial, dtype=complex).reshape(2)
    if eig.jordan:
        return confluent_propagator(eig.matrix, t) @ c0
    A, B = np.linalg.solve(eig.vectors, c0)
    e1 = A * np.exp(-eig.lambda_1 * t)
    e2 = B * np.exp(-eig.lambda_2 * t)
    return np.column_stack([e1 * eig.vectors[0, 0] + e2 * eig.vectors[0, 1],
                            e1 * eig.vectors[1, 0] + e2 * eig.vectors[1, 1]])


@dataclass(frozen=True)
class BlockStructure:
    """Partition of a truncated basis into RWA blocks and spectators."""

    truncation: Truncation
    upper: np.ndarray  # index of |alpha, n, 0> per block
    lower: np.ndarray  # index of the fermion-excited partner
    blocks: tuple[RwaBlock, ...]
    spectators: np.ndarray
    spectator_freqs: np.ndarray
    bare: np.ndarray  # bare frequency of every basis index


def rwa_structure(params: SystemParams, truncation: Truncation) -> BlockStructure:
    upper, lower, blocks = [], [], []
    paired = np.zeros(truncation.dim, dtype=bool)
    for alpha in range(truncation.alpha_max + 1):
        for n in range(1, truncation.n_max + 1):
            pa, pn, ps = partner_of(params, alpha, n)
            if not truncation.contains(pa, pn, ps):
                continue
            i, j = truncation.index(alpha, n, 0), truncation.index(pa, pn, ps)
            upper.append(i)
            lower.append(j)
            blocks.append(make_block(params, alpha, n))
            paired[i] = paired[j] = True
    a, n, s = truncation.quantum_numbers()
    bare = params.Omega * (a + 0.5) + params.omega * (n + 0.5) + params.W * s
    spect = np.flatnonzero(~paired)
    return BlockStructure(truncation, np.array(upper, dtype=int), np.array(lower, dtype=int),
                          tuple(blocks), spect, bare[spect], bare)


def rwa_matrix(params: SystemParams, truncation: Truncation) -> np.ndarray:
    """Hermitian RWA Hamiltonian assembled from the block structure."""
    st = rwa_structure(params, truncation)
    H = np.diag(st.bare).astype(complex)
    for i, j, blk in zip(st.upper, st.lower, st.blocks):
        H[j, i] = -blk.Omega_R
        H[i, j] = -np.conj(blk.Omega_R)
    return H


@dataclass(frozen=True)
class Propagator:
    """exp(-i H_eff dt) restricted to the block structure.

    ``apply`` works on arrays whose last axis is the basis index.
    """

    upper: np.ndarray
    lower: np.ndarray
    U: np.ndarray  # (n_blocks, 2, 2)
    spectators: np.ndarray
    phases: np.ndarray  # (n_spectators,)

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        xi = x[..., self.upper]
        xj = x[..., self.lower]
        U = self.U
        out[..., self.upper] = U[:, 0, 0] * xi + U[:, 0, 1] * xj
        out[..., self.lower] = U[:, 1, 0] * xi + U[:, 1, 1] * xj
        out[..., self.spectators] = self.phases * x[..., self.spectators]
        return out

    def matrix(self, dim: int) -> np.ndarray:
        return self.apply(np.eye(dim, dtype=complex)).T


def exact_propagator(params: SystemParams, truncation: Truncation, dt: float,
                     rates: np.ndarray | None = None) -> Propagator:
    """Block-exact propagator over ``dt``; ``rates`` is the per-index decay
    vector (``None`` for the closed system)."""
    st = rwa_structure(params, truncation)
    U = np.empty((len(st.blocks), 2, 2), dtype=complex)
    for k, (i, j, blk) in enumerate(zip(st.upper, st.lower, st.blocks)):
        pair = None if rates is None else (float(rates[i]), float(rates[j]))
        U[k] = block_propagator(block_eigensystem(blk, pair), dt)
    g = 0.0 if rates is None else np.asarray(rates)[st.spectators]
    phases = np.exp(-(1j * st.spectator_freqs + g) * dt)
    return Propagator(st.upper, st.lower, U, st.spectators, phases)


def evolve_closed(params: SystemParams, initial: StateVector, times) -> StateSeries:
    """Closed RWA evolution, block by block, sampled at ``times``."""
    t = check_times(times)
    if abs(initial.norm_sq() - 1.0) > 1e-12:
        raise ModelError("initial state must be normalised")
    trunc = initial.truncation
    st = rwa_structure(params, trunc)
    c0 = initial.amplitudes
    out = np.zeros((len(t), trunc.dim), dtype=complex)
    for i, j, blk in zip(st.upper, st.lower, st.blocks):
        if c0[i] == 0 and c0[j] == 0:
            continue
        pair = evolve_block(blk, block_eigensystem(blk), (c0[i], c0[j]), t)
        out[:, i] = pair[:, 0]
        out[:, j] = pair[:, 1]
    sp = st.spectators
    out[:, sp] = c0[sp] * np.exp(-1j * np.outer(t, st.spectator_freqs))
    return StateSeries(trunc, t, out)


@dataclass(frozen=True)
class AnticrossingDiagram:
    """Eigenbranches delta_{1,2} versus detuning, both in units of |Omega_R|.

    The branch value is the block frequency offset -Im(Lambda) + w, so the
    decoupled asymptotes are 0 and the detuning itself.
    """

    detuning: np.ndarray
    branches: np.ndarray  # (n, 2): upper, lower
    unit: float

    @property
    def separation(self) -> np.ndarray:
        return self.branches[:, 0] - self.branches[:, 1]


def anticrossing_diagram(params: SystemParams, block: tuple[int, int] = (1, 1),
                         detuning_grid: Sequence[float] = ()) -> AnticrossingDiagram:
    grid = np.asarray(detuning_grid, dtype=float).reshape(-1)
    if not np.all(np.isfinite(grid)):
        raise ModelError("detuning grid must be finite")
    base = make_block(params, *block)
    unit = abs(make_block(params, 1 if params.resonance_branch is Branch.PLUS else 0, 1).Omega_R)
    if unit == 0:
        raise ModelError("anticrossing needs a non-zero coupling")
    rows = []
    for d in grid:
        eig = block_eigensystem(RwaBlock(base.alpha, base.n, base.Omega_R, base.omega_block, d))
        lam = np.array([eig.lambda_1, eig.lambda_2])
        shifted = -np.imag(lam) + base.omega_block
        rows.append(np.sort(shifted)[::-1])
    branches = np.array(rows).reshape(-1, 2) / unit
    return AnticrossingDiagram(grid / unit, branches, unit)
