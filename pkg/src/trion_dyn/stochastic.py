"""Stochastic state-vector evolution and its averaged-dyadic counterpart.

Each trajectory obeys dC = -i H_eff C dt - i dR with a delta-correlated complex
Gaussian source, E[dR dR^dagger] = D dt. One step of length dt is

    C <- U(dt/2) C ;  C <- C - i L xi sqrt(dt) ;  C <- U(dt/2) C

with U the block-exact propagator of H_eff, D = L L^dagger and xi circular
standard normal. D is evaluated at the injection point (mid-step).
"""

from __future__ import annotations

import cmath
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .closed import Propagator, exact_propagator, rwa_matrix, rwa_structure
from .dissipation import (NoiseKind, NoiseModel, RateTable, noise_correlator,
                          psd_factor, relaxation_rates)
from .model import (Branch, ModelError, StateSeries, StateVector, SystemParams,
                    Truncation, check_times, observables_series)

NORM_LIMIT = 10.0
STABILITY_LIMIT = 0.05


class IntegratorError(RuntimeError):
    """A trajectory blew up."""


class Closure(str, Enum):
    MEAN_FIELD = "mean-field"  # D from the running ensemble mean
    DYADIC = "dyadic"  # D from the deterministic dyadic solution
    ANALYTIC = "analytic"  # D from the weak-damping closed form


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float
    t_max: float
    n_trajectories: int
    seed: int = 0
    noise_model: NoiseKind = NoiseKind.ZERO_T_SINK
    output_stride: int = 1
    closure: Closure = Closure.MEAN_FIELD
    refresh_every_step: bool = True
    threads: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "noise_model", NoiseKind(self.noise_model))
        object.__setattr__(self, "closure", Closure(self.closure))
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ModelError("dt must be positive")
        if not (self.t_max >= 0 and math.isfinite(self.t_max)):
            raise ModelError("t_max must be >= 0")
        if self.n_trajectories < 1:
            raise ModelError("n_trajectories must be >= 1")
        if self.output_stride < 1:
            raise ModelError("output_stride must be >= 1")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ModelError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ModelError("threads must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


def stability_number(dt: float, params: SystemParams, truncation: Truncation,
                     rates: np.ndarray) -> float:
    st = rwa_structure(params, truncation)
    rabi = max((b.rabi for b in st.blocks), default=0.0)
    return dt * max(rabi, float(np.max(rates, initial=0.0)), abs(params.Delta))


def _rate_vector(rates: RateTable | np.ndarray) -> np.ndarray:
    return rates.as_vector() if isinstance(rates, RateTable) else np.asarray(rates, dtype=float)


def step_trajectory(state: StateVector | np.ndarray, params: SystemParams,
                    rates: RateTable | np.ndarray, noise_sample: np.ndarray | None,
                    dt: float, propagator: Propagator | None = None) -> np.ndarray:
    """Advance one or many trajectories by ``dt``.

    ``noise_sample`` is the increment dR (already scaled, covariance D dt) or
    ``None`` for noiseless steps. Returns the new amplitudes.
    """
    if isinstance(state, StateVector):
        trunc, x = state.truncation, state.copy()
    else:
        x = np.array(state, dtype=complex)
        trunc = None
    if propagator is None:
        if trunc is None:
            raise ModelError("pass a StateVector or a propagator")
        propagator = exact_propagator(params, trunc, dt / 2, _rate_vector(rates))
    x = propagator.apply(x)
    if noise_sample is not None:
        x = x - 1j * np.asarray(noise_sample)
    x = propagator.apply(x)
    _check_norm(x)
    return x


def _check_norm(x: np.ndarray) -> None:
    nrm = np.sum(np.abs(x) ** 2, axis=-1)
    worst = float(np.max(nrm)) if np.ndim(nrm) else float(nrm)
    if not math.isfinite(worst) or worst > NORM_LIMIT:
        raise IntegratorError(f"trajectory norm^2 reached {worst:.3g} (> {NORM_LIMIT}); "
                              "reduce dt or check the noise model")


@dataclass(frozen=True)
class EnsembleStats:
    """Ensemble means ``dyadics[k, a, b] = <C_a C_b*>`` at output times with
    standard errors of the real and imaginary parts."""

    truncation: Truncation
    times: np.ndarray
    dyadics: np.ndarray
    se_re: np.ndarray
    se_im: np.ndarray
    norm: np.ndarray
    norm_se: np.ndarray
    obs: np.ndarray
    obs_se: np.ndarray
    n_trajectories: int

    def populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.dyadics, axis1=1, axis2=2))

    def max_sigma_deviation(self, reference: np.ndarray, floor: float = 1e-10) -> float:
        """max |mean - ref| / (SE + floor/5) over elements and parts; the
        criterion |diff| <= 5 SE + floor is equivalent to a value <= 5."""
        ref = np.asarray(reference)
        dr = np.abs(self.dyadics.real - ref.real) / (self.se_re + floor / 5)
        di = np.abs(self.dyadics.imag - ref.imag) / (self.se_im + floor / 5)
        return float(max(dr.max(), di.max()))


def _streams(seed: int, lo: int, hi: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i,))))
            for i in range(lo, hi)]


class _NoiseBuffer:
    """Chunked per-trajectory circular normals, shape (n_traj, dim) per step."""

    def __init__(self, gens: list[np.random.Generator], dim: int, chunk: int):
        self.gens, self.dim, self.chunk = gens, dim, chunk
        self.buf: np.ndarray | None = None
        self.pos = chunk

    def next(self) -> np.ndarray:
        if self.pos >= self.chunk:
            raw = np.stack([g.standard_normal((self.chunk, self.dim, 2)) for g in self.gens])
            self.buf = (raw[..., 0] + 1j * raw[..., 1]) * np.sqrt(0.5)
            self.pos = 0
        out = self.buf[:, self.pos, :]
        self.pos += 1
        return out


def _accumulate_stats(x: np.ndarray):
    n_traj = x.shape[0]
    outer = x[:, :, None] * x[:, None, :].conj()
    mean = outer.mean(axis=0)
    if n_traj > 1:
        se_re = outer.real.std(axis=0, ddof=1) / math.sqrt(n_traj)
        se_im = outer.imag.std(axis=0, ddof=1) / math.sqrt(n_traj)
    else:
        se_re = np.zeros(mean.shape)
        se_im = np.zeros(mean.shape)
    return mean, se_re, se_im


def _mid_correlator(model: NoiseModel, g: np.ndarray, X: np.ndarray, dt: float) -> np.ndarray:
    # Correlator on the mid-step dyadics: X plus the gain fed during dt/2.
    D0 = noise_correlator(model, g, X)
    if not np.any(D0):
        return D0
    return noise_correlator(model, g, X + 0.5 * dt * D0)


def run_ensemble(config: TrajectoryConfig, params: SystemParams, initial: StateVector,
                 profile: Callable[[float], np.ndarray] | None = None) -> EnsembleStats:
    """Monte Carlo ensemble of stochastic trajectories.

    With ``closure=mean-field`` the correlator follows the running ensemble
    mean (refreshed every step, or every output step). Other closures take the
    averaged dyadics from ``profile(t)`` (or build it), so trajectories are
    independent and may run in parallel batches.
    """
    trunc = initial.truncation
    rates = relaxation_rates(params, trunc).as_vector()
    model = NoiseModel.for_system(config.noise_model, params, trunc)
    sn = stability_number(config.dt, params, trunc, rates)
    if sn >= STABILITY_LIMIT:
        raise ModelError(f"dt too large: dt * max(rate scales) = {sn:.3g} >= {STABILITY_LIMIT}")
    prop = exact_propagator(params, trunc, config.dt / 2, rates)
    if config.closure is not Closure.MEAN_FIELD and profile is None:
        profile = _build_profile(config, params, initial, rates, model)

    n = config.n_trajectories
    if config.closure is Closure.MEAN_FIELD or config.threads == 1:
        batches = [(0, n)]
    else:
        edges = np.linspace(0, n, config.threads + 1).astype(int)
        batches = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]

    def run_batch(lo: int, hi: int):
        return _run_batch(config, initial, rates, model, prop, profile, lo, hi)

    if len(batches) == 1:
        parts = [run_batch(*batches[0])]
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            parts = list(pool.map(lambda b: run_batch(*b), batches))
    return _merge(parts, trunc, n, ensemble_times(config))


def _output_steps(config: TrajectoryConfig) -> np.ndarray:
    steps = np.arange(0, config.n_steps + 1, config.output_stride)
    if steps[-1] != config.n_steps:
        steps = np.append(steps, config.n_steps)
    return steps


def _run_batch(config, initial, rates, model, prop, profile, lo, hi):
    trunc = initial.truncation
    dim, dt = trunc.dim, config.dt
    x = np.tile(initial.amplitudes, (hi - lo, 1))
    chunk = max(1, min(256, (1 << 21) // max(1, (hi - lo) * dim)))
    noise = _NoiseBuffer(_streams(config.seed, lo, hi), dim, chunk)
    outs = set(int(s) for s in _output_steps(config))
    samples = []  # per output: raw outer products (needed for exact merging)
    sqdt = math.sqrt(dt)
    L = None
    for step in range(config.n_steps + 1):
        if step in outs:
            samples.append(x.copy())
        if step == config.n_steps:
            break
        x = prop.apply(x)
        t_mid = (step + 0.5) * dt
        if config.closure is Closure.MEAN_FIELD:
            if L is None or config.refresh_every_step or step in outs:
                X = (x.T @ x.conj()) / x.shape[0]
                L = psd_factor(_mid_correlator(model, rates, X, dt))
        else:
            L = psd_factor(noise_correlator(model, rates, profile(t_mid)))
        xi = noise.next()
        if np.any(L):
            x = x - 1j * sqdt * (xi @ L.T)
        x = prop.apply(x)
        # Additive noise spreads single-trajectory norms (only the mean is
        # conserved), so the blow-up guard watches the batch mean.
        _check_norm(np.mean(np.abs(x) ** 2, axis=0))
    return samples


def _merge(parts, trunc: Truncation, n: int, times: np.ndarray) -> EnsembleStats:
    n_out = len(parts[0])
    xs = [np.concatenate([p[k] for p in parts], axis=0) for k in range(n_out)]
    means, sre, sim, norms, nse, obs, obs_se = [], [], [], [], [], [], []
    for x in xs:
        m, a, b = _accumulate_stats(x)
        means.append(m)
        sre.append(a)
        sim.append(b)
        pop = np.abs(x) ** 2
        nr = pop.sum(axis=1)
        per_obs = observables_series(pop, trunc)
        norms.append(nr.mean())
        obs.append(per_obs.mean(axis=0))
        if n > 1:
            nse.append(nr.std(ddof=1) / math.sqrt(n))
            obs_se.append(per_obs.std(axis=0, ddof=1) / math.sqrt(n))
        else:
            nse.append(0.0)
            obs_se.append(np.zeros(per_obs.shape[1]))
    return EnsembleStats(trunc, times, np.array(means), np.array(sre),
                         np.array(sim), np.array(norms), np.array(nse), np.array(obs),
                         np.array(obs_se), n)


def ensemble_times(config: TrajectoryConfig) -> np.ndarray:
    return _output_steps(config) * config.dt


def _build_profile(config, params, initial, rates, model):
    if config.closure is Closure.DYADIC:
        X0 = np.outer(initial.amplitudes, initial.amplitudes.conj())
        return evolve_dyadics(params, rates, model, X0, [0.0, config.t_max],
                              initial.truncation, dense=True).interpolant
    return analytic_dyadics(params, initial.truncation)


@dataclass(frozen=True)
class DyadicSeries:
    truncation: Truncation
    times: np.ndarray
    dyadics: np.ndarray
    interpolant: Callable[[float], np.ndarray] | None = None

    def populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.dyadics, axis1=1, axis2=2))

    def traces(self) -> np.ndarray:
        return self.populations().sum(axis=1)

    def observables(self) -> np.ndarray:
        return observables_series(self.populations(), self.truncation)


def dyadic_rhs(H: np.ndarray, g: np.ndarray, model: NoiseModel) -> Callable:
    def f(t, X):
        comm = H @ X - X @ H
        damp = g[:, None] * X + X * g[None, :]
        return -1j * comm - damp + noise_correlator(model, g, X)
    return f


def evolve_dyadics(params: SystemParams, rates: RateTable | np.ndarray, noise_model: NoiseModel,
                   initial_dyadics: np.ndarray, times, truncation: Truncation,
                   rtol: float = 1e-12, atol: float = 1e-14, dense: bool = False
                   ) -> DyadicSeries:
    """Deterministic equation for the averaged dyadics X = <C C^dagger>:

        dX/dt = -i[H, X] - (Gamma X + X Gamma) + D(X),  Gamma = diag(rates).
    """
    t = check_times(times)
    g = _rate_vector(rates)
    H = rwa_matrix(params, truncation)
    f = dyadic_rhs(H, g, noise_model)
    d = truncation.dim
    X0 = np.array(initial_dyadics, dtype=complex)
    if X0.shape != (d, d):
        raise ModelError("initial dyadics do not match the truncation")

    def real_rhs(tt, y):
        return f(tt, y.view(complex).reshape(d, d)).reshape(-1).view(float)

    if len(t) == 0:
        return DyadicSeries(truncation, t, np.empty((0, d, d), complex))
    t0, t1 = float(t[0]), float(t[-1])
    if t1 == t0:
        out = np.repeat(X0[None], len(t), axis=0)
        return DyadicSeries(truncation, t, out, (lambda s: X0) if dense else None)
    sol = solve_ivp(real_rhs, (t0, t1), X0.reshape(-1).view(float), method="DOP853",
                    t_eval=t, rtol=rtol, atol=atol, dense_output=dense)
    if not sol.success:
        raise RuntimeError(f"dyadic integration failed: {sol.message}")
    Y = sol.y.T.copy().view(complex).reshape(len(t), d, d)
    interp = None
    if dense:
        so = sol.sol

        def interp(s, _so=so):
            return np.asarray(_so(s)).copy().view(complex).reshape(d, d)
    return DyadicSeries(truncation, t, Y, interp)


@dataclass(frozen=True)
class DampedRabi:
    Omega_R_tilde: complex
    theta: float
    gamma_sum: float
    overdamped: bool


def damped_rabi(params: SystemParams, rates: RateTable) -> DampedRabi:
    if params.resonance_branch is not Branch.PLUS:
        raise ModelError("the damped closed form covers the PLUS-branch (1,1) block")
    g110, g001 = rates[(1, 1, 0)], rates[(0, 0, 1)]
    w2 = abs(params.eta) ** 2 - (g001 - g110) ** 2 / 4.0
    om = cmath.sqrt(w2) if w2 < 0 else complex(math.sqrt(w2))
    return DampedRabi(om, params.theta, g110 + g001, overdamped=w2 < 0)


@dataclass(frozen=True)
class DampedState:
    states: StateSeries
    ground_population: np.ndarray
    e_field_sq: np.ndarray
    atom_energy: np.ndarray
    rabi: DampedRabi


def analytic_damped_state(params: SystemParams, rates: RateTable, t) -> DampedState:
    """Weak-damping solution from |0,0,1> at exact resonance.

    The ground amplitude is returned with zero phase; only its mean square is
    fixed by the theory. In the overdamped case the trigonometric functions
    continue to hyperbolic ones and ``rabi.overdamped`` is set.
    """
    t = check_times(np.atleast_1d(t))
    trunc = Truncation(1, 1)
    if params.Delta != 0:
        raise ModelError("closed form requires exact resonance (Delta = 0)")
    dr = damped_rabi(params, rates)
    om, G = dr.Omega_R_tilde, dr.gamma_sum
    w11 = params.Omega * 1.5 + params.omega * 1.5
    env = np.exp(-(1j * w11 + G / 2) * t)
    amp = np.zeros((len(t), trunc.dim), dtype=complex)
    amp[:, trunc.index(1, 1, 0)] = env * 1j * np.exp(-1j * dr.theta) * np.sin(om * t)
    amp[:, trunc.index(0, 0, 1)] = env * np.cos(om * t)
    ground = 1.0 - np.exp(-G * t)
    amp[:, trunc.index(0, 0, 0)] = np.sqrt(ground)
    decay = np.exp(-G * t)
    cos2 = np.cos(2 * om * t)
    e2 = 1.0 + decay - np.real(cos2) * decay
    ha = 0.5 * (1.0 + np.real(cos2)) * decay
    return DampedState(StateSeries(trunc, t, amp), ground, e2, ha, dr)


def analytic_dyadics(params: SystemParams, truncation: Truncation) -> Callable[[float], np.ndarray]:
    """Averaged dyadics of the weak-damping solution, embedded in ``truncation``."""
    rates = relaxation_rates(params, Truncation(1, 1))
    ia = [truncation.index(*k) for k in ((0, 0, 0), (0, 0, 1), (1, 1, 0))]

    def X(s: float) -> np.ndarray:
        ds = analytic_damped_state(params, rates, [s])
        small = ds.states.amplitudes[0]
        tr = Truncation(1, 1)
        v = np.array([small[tr.index(0, 0, 0)], small[tr.index(0, 0, 1)],
                      small[tr.index(1, 1, 0)]])
        out = np.zeros((truncation.dim, truncation.dim), dtype=complex)
        block = np.outer(v[1:], v[1:].conj())
        out[np.ix_(ia[1:], ia[1:])] = block
        out[ia[0], ia[0]] = ds.ground_population[0]
        return out
    return X
