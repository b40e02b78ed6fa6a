"""Parameters, truncated basis, state vectors and observables.

Units: hbar = 1 everywhere, so every energy is stored as an angular
frequency. The basis is the product phonon (alpha) x photon (n) x fermion (s),
ordered alpha-major, then n, then s.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

# Largest Hilbert-space size we are willing to index (dense complex matrices
# of this size already take ~1.6 GB).
MAX_BASIS_SIZE = 10_000


class ModelError(ValueError):
    """Invalid physical input."""


class Branch(str, Enum):
    """Which parametric resonance the RWA keeps."""

    PLUS = "PLUS"  # omega + Omega ~ W
    MINUS = "MINUS"  # omega - Omega ~ W


def _finite(name: str, value: complex) -> None:
    if not cmath.isfinite(complex(value)):
        raise ModelError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the emitter/photon/phonon system.

    Rates are amplitude-independent partial rates of each subsystem; the
    per-state rates follow from :func:`trion_dyn.dissipation.relaxation_rates`.
    """

    W: float
    omega: float
    Omega: float
    chi: complex = 0.0
    eta: complex = 0.0
    pump_R: complex = 0.0
    gamma: float = 0.0
    mu_omega: float = 0.0
    mu_Omega: float = 0.0
    T_a: float = 0.0
    T_em: float = 0.0
    T_p: float = 0.0
    resonance_branch: Branch = Branch.PLUS

    def __post_init__(self) -> None:
        for name in ("W", "omega", "Omega", "chi", "eta", "pump_R", "gamma",
                     "mu_omega", "mu_Omega", "T_a", "T_em", "T_p"):
            _finite(name, getattr(self, name))
        for name in ("W", "omega", "Omega", "gamma", "mu_omega", "mu_Omega",
                     "T_a", "T_em", "T_p"):
            if isinstance(getattr(self, name), complex):
                raise ModelError(f"{name} must be real")
        if self.omega <= 0:
            raise ModelError("omega must be > 0")
        for name in ("gamma", "mu_omega", "mu_Omega"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be >= 0")
        for name in ("T_a", "T_em", "T_p"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be >= 0")
        object.__setattr__(self, "resonance_branch", Branch(self.resonance_branch))
        for name in ("chi", "eta", "pump_R"):
            object.__setattr__(self, name, complex(getattr(self, name)))

    @property
    def Delta(self) -> float:
        """Detuning from the selected parametric resonance."""
        if self.resonance_branch is Branch.PLUS:
            return self.Omega + self.omega - self.W
        return self.omega - self.Omega - self.W

    @property
    def theta(self) -> float:
        """Phase of the parametric coupling."""
        return cmath.phase(self.eta)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class ModeGeometry:
    """Dipole and local mode fields at the emitter position.

    ``field_gradient[i, j]`` is dE_i/dx_j.
    """

    dipole_vector: np.ndarray
    field_at_atom: np.ndarray
    field_gradient: np.ndarray
    phonon_amplitude: np.ndarray

    def __post_init__(self) -> None:
        shapes = {"dipole_vector": (3,), "field_at_atom": (3,),
                  "field_gradient": (3, 3), "phonon_amplitude": (3,)}
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != shape:
                raise ModelError(f"{name} must have shape {shape}")
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def couplings_from_geometry(geom: ModeGeometry, branch: Branch = Branch.PLUS
                            ) -> tuple[complex, complex, complex]:
    """Return ``(chi, eta, pump_R)`` from the local fields.

    chi = d.E ; eta = d.(Q.grad)E on the PLUS branch and d.(Q*.grad)E on the
    MINUS branch. The classical pump coupling uses the same contraction with
    the classical displacement amplitude.
    """
    d = geom.dipole_vector
    chi = complex(d @ geom.field_at_atom)
    q = geom.phonon_amplitude
    if Branch(branch) is Branch.MINUS:
        q = np.conj(q)
    directional = geom.field_gradient @ q  # (Q.grad)E_i = sum_j Q_j dE_i/dx_j
    eta = complex(d @ directional)
    return chi, eta, eta


class BasisState(NamedTuple):
    alpha: int
    n: int
    s: int

    def label(self) -> str:
        return f"{self.alpha}{self.n}{self.s}"


@dataclass(frozen=True)
class Truncation:
    """Hard Fock cutoff for the phonon and photon modes."""

    alpha_max: int
    n_max: int

    def __post_init__(self) -> None:
        if int(self.alpha_max) != self.alpha_max or int(self.n_max) != self.n_max:
            raise ModelError("truncation bounds must be integers")
        if self.alpha_max < 0 or self.n_max < 0:
            raise ModelError("truncation bounds must be >= 0")
        if 2 * (self.alpha_max + 1) * (self.n_max + 1) > MAX_BASIS_SIZE:
            raise ModelError("truncation exceeds the supported basis size")

    @property
    def dim(self) -> int:
        return 2 * (self.alpha_max + 1) * (self.n_max + 1)

    def index(self, alpha: int, n: int, s: int) -> int:
        if not (0 <= alpha <= self.alpha_max and 0 <= n <= self.n_max and s in (0, 1)):
            raise ModelError(f"state |{alpha},{n},{s}> outside truncation {self}")
        return (alpha * (self.n_max + 1) + n) * 2 + s

    def contains(self, alpha: int, n: int, s: int) -> bool:
        return 0 <= alpha <= self.alpha_max and 0 <= n <= self.n_max and s in (0, 1)

    def state_of(self, i: int) -> BasisState:
        if not 0 <= i < self.dim:
            raise ModelError(f"index {i} outside basis of size {self.dim}")
        s = i % 2
        rest = i // 2
        return BasisState(rest // (self.n_max + 1), rest % (self.n_max + 1), s)

    def states(self) -> list[BasisState]:
        return build_basis(self.alpha_max, self.n_max)

    def quantum_numbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-index (alpha, n, s) as integer arrays."""
        idx = np.arange(self.dim)
        s = idx % 2
        rest = idx // 2
        return rest // (self.n_max + 1), rest % (self.n_max + 1), s


def default_truncation(excitation: int) -> Truncation:
    """Cutoff with a margin of three quanta above the initial excitation."""
    m = max(4, int(excitation) + 3)
    return Truncation(m, m)


def build_basis(alpha_max: int, n_max: int) -> list[BasisState]:
    Truncation(alpha_max, n_max)  # validation
    return [BasisState(a, n, s)
            for a in range(alpha_max + 1)
            for n in range(n_max + 1)
            for s in (0, 1)]


@dataclass(frozen=True)
class StateVector:
    """Complex amplitudes over a truncated basis (immutable)."""

    truncation: Truncation
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        amp = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amp.size != self.truncation.dim:
            raise ModelError(
                f"expected {self.truncation.dim} amplitudes, got {amp.size}")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def basis(cls, truncation: Truncation, alpha: int, n: int, s: int) -> "StateVector":
        amp = np.zeros(truncation.dim, dtype=complex)
        amp[truncation.index(alpha, n, s)] = 1.0
        return cls(truncation, amp)

    @classmethod
    def from_mapping(cls, truncation: Truncation,
                     amplitudes: Mapping[tuple[int, int, int], complex],
                     normalize: bool = False) -> "StateVector":
        amp = np.zeros(truncation.dim, dtype=complex)
        for key, value in amplitudes.items():
            amp[truncation.index(*key)] += value
        if normalize:
            nrm = np.linalg.norm(amp)
            if nrm == 0:
                raise ModelError("cannot normalize the zero vector")
            amp = amp / nrm
        return cls(truncation, amp)

    def __getitem__(self, key: tuple[int, int, int]) -> complex:
        return complex(self.amplitudes[self.truncation.index(*key)])

    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def copy(self) -> np.ndarray:
        """Writable copy of the amplitudes."""
        return self.amplitudes.copy()

    def as_mapping(self) -> dict[BasisState, complex]:
        return {self.truncation.state_of(i): complex(c)
                for i, c in enumerate(self.amplitudes) if c != 0}

    def excitation(self) -> int:
        """Largest total quantum number with non-zero amplitude."""
        a, n, s = self.truncation.quantum_numbers()
        nz = np.abs(self.amplitudes) > 0
        return int(np.max((a + n + s)[nz])) if nz.any() else 0


def fidelity(a: StateVector | np.ndarray, b: StateVector | np.ndarray) -> float:
    """|<a|b>| (global-phase insensitive overlap)."""
    va = a.amplitudes if isinstance(a, StateVector) else np.asarray(a)
    vb = b.amplitudes if isinstance(b, StateVector) else np.asarray(b)
    return float(abs(np.vdot(va, vb)))


@dataclass(frozen=True)
class Observables:
    """Observable expectations. Field intensity is in units of |E(r)|^2,
    atomic energy in units of W."""

    e_field_sq: float
    atom_energy: float
    photon_number: float
    phonon_number: float
    excitation: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.e_field_sq, self.atom_energy, self.photon_number,
                self.phonon_number, self.excitation)


OBSERVABLE_COLUMNS = ("e_field_sq", "atom_energy", "photon_number",
                      "phonon_number", "excitation")


def _populations(state, truncation: Truncation | None, normalized_tol: float | None):
    if isinstance(state, StateVector):
        p = np.abs(state.amplitudes) ** 2
        if normalized_tol is not None and abs(p.sum() - 1.0) > normalized_tol:
            raise ModelError(f"state norm^2 {p.sum()!r} deviates from 1")
        return state.truncation, p
    rho = np.asarray(state)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ModelError("dyadic input must be a square matrix")
    if truncation is None:
        raise ModelError("a truncation is required for matrix input")
    if rho.shape[0] != truncation.dim:
        raise ModelError("matrix size does not match truncation")
    return truncation, np.real(np.diagonal(rho))


def observables(state: StateVector | np.ndarray, truncation: Truncation | None = None,
                normalized_tol: float | None = 1e-9) -> Observables:
    """Expectation values from a state vector or from averaged dyadics.

    For a matrix input ``X[a, b] = <C_a C_b*>`` the result is linear in X, so
    ensemble averages and mixtures work directly. The c^2 and c^dagger^2 parts
    of E^2 average to zero in number states and are dropped:
    <E^2>/|E|^2 = 2<c^dagger c> + 1.
    """
    trunc, p = _populations(state, truncation,
                            normalized_tol if isinstance(state, StateVector) else None)
    a, n, s = trunc.quantum_numbers()
    photon = float(p @ n)
    excite = float(p @ s)
    return Observables(
        e_field_sq=2.0 * photon + float(p.sum()),
        atom_energy=excite,
        photon_number=photon,
        phonon_number=float(p @ a),
        excitation=excite,
    )


def observables_series(populations: np.ndarray, truncation: Truncation) -> np.ndarray:
    """Vectorised observables for an array of population rows.

    Returns shape ``(nt, 5)`` in :data:`OBSERVABLE_COLUMNS` order.
    """
    p = np.asarray(populations, dtype=float)
    a, n, s = truncation.quantum_numbers()
    photon = p @ n
    excite = p @ s
    return np.column_stack([2.0 * photon + p.sum(axis=1), excite, photon, p @ a, excite])


@dataclass(frozen=True)
class StateSeries:
    """Sampled amplitudes, shape ``(len(times), dim)``."""

    truncation: Truncation
    times: np.ndarray
    amplitudes: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[StateVector]:
        for row in self.amplitudes:
            yield StateVector(self.truncation, row)

    def state(self, k: int) -> StateVector:
        return StateVector(self.truncation, self.amplitudes[k])

    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def observables(self) -> np.ndarray:
        return observables_series(self.populations(), self.truncation)

    def norms(self) -> np.ndarray:
        return self.populations().sum(axis=1)


def ladder(n_levels: int) -> np.ndarray:
    """Annihilation operator on ``n_levels`` Fock states (hard cutoff)."""
    return np.diag(np.sqrt(np.arange(1, n_levels, dtype=float)), 1).astype(complex)


def mode_operators(truncation: Truncation) -> dict[str, np.ndarray]:
    """Dense b, c and sigma (lowering) on the ordered product basis."""
    na, nn = truncation.alpha_max + 1, truncation.n_max + 1
    ia, in_, is_ = np.eye(na), np.eye(nn), np.eye(2)
    sig = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    return {
        "b": np.kron(np.kron(ladder(na), in_), is_),
        "c": np.kron(np.kron(ia, ladder(nn)), is_),
        "sigma": np.kron(np.kron(ia, in_), sig),
    }


def as_array(values: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ModelError("time grid must be finite")
    return arr


def check_times(times) -> np.ndarray:
    t = as_array(times)
    if np.any(t < 0):
        raise ModelError("times must be >= 0")
    if np.any(np.diff(t) < 0):
        raise ModelError("times must be non-decreasing")
    return t


__all__ = [
    "Branch", "SystemParams", "ModeGeometry", "couplings_from_geometry",
    "BasisState", "Truncation", "build_basis", "default_truncation", "StateVector",
    "Observables", "observables", "observables_series", "StateSeries",
    "fidelity", "mode_operators", "ladder", "ModelError", "OBSERVABLE_COLUMNS",
    "check_times",
]
