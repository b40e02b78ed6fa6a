"""Classical acoustic pumping, pulse control and the two-resonance scan.

With a classical phonon field the phonon index is dropped and each pair
(C_n0, C_(n-1)1) forms a block driven by R e^{-i Omega t}. Writing
C_(n-1)1 = G e^{-i Omega t} (absolute time) makes the block matrix constant,
so the open/closed block solver is reused unchanged.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.signal import windows

from .closed import RwaBlock, block_eigensystem, evolve_block
from .dissipation import RateTable, classical_pump_rates
from .model import ModelError, StateSeries, StateVector, SystemParams, Truncation, check_times

AMPLITUDE_LABELS = ("C_n0", "C_(n-1)1")


# ---------------------------------------------------------------- classical pump

def pump_rabi(params: SystemParams, n: int) -> complex:
    return params.pump_R * math.sqrt(n)


def _pump_block(params: SystemParams, n: int, pump_on: bool = True) -> RwaBlock:
    r = pump_rabi(params, n) if pump_on else 0.0
    return RwaBlock(None, n, complex(r), params.omega * (n + 0.5), params.Delta)


def _bare_classical(params: SystemParams, n: int, s: int) -> float:
    return params.omega * (n + 0.5) + params.W * s


def _evolve_pump_segment(params: SystemParams, c0: np.ndarray, t0: float, times: np.ndarray,
                         trunc: Truncation, rates: RateTable | None, pump_on: bool
                         ) -> np.ndarray:
    """Amplitudes at absolute ``times`` (>= t0) from ``c0`` at t0."""
    out = np.zeros((len(times), trunc.dim), dtype=complex)
    dt = times - t0
    paired = np.zeros(trunc.dim, dtype=bool)
    for n in range(1, trunc.n_max + 1):
        i, j = trunc.index(0, n, 0), trunc.index(0, n - 1, 1)
        paired[i] = paired[j] = True
        if c0[i] == 0 and c0[j] == 0:
            continue
        blk = _pump_block(params, n, pump_on)
        pair = None if rates is None else (rates[(n, 0)], rates[(n - 1, 1)])
        g0 = c0[j] * np.exp(1j * params.Omega * t0)
        sol = evolve_block(blk, block_eigensystem(blk, pair), (c0[i], g0), dt)
        out[:, i] = sol[:, 0]
        out[:, j] = sol[:, 1] * np.exp(-1j * params.Omega * times)
    for k in np.flatnonzero(~paired):
        _, n, s = trunc.state_of(int(k))
        g = 0.0 if rates is None else rates[(n, s)]
        out[:, k] = c0[k] * np.exp(-(1j * _bare_classical(params, n, s) + g) * dt)
    return out


def _classical_state(initial: StateVector) -> Truncation:
    if initial.truncation.alpha_max != 0:
        raise ModelError("classical-pump states live on Truncation(0, n_max)")
    return initial.truncation


def evolve_classical_pump(params: SystemParams, initial: StateVector, times,
                          rates: RateTable | None = None, dissipative: bool = False
                          ) -> StateSeries:
    """Photon x fermion amplitudes under a steady classical pump.

    ``dissipative=True`` takes the rates from :func:`classical_pump_rates`.
    """
    trunc = _classical_state(initial)
    t = check_times(times)
    if params.pump_R == 0:
        warnings.warn("pump_R = 0: no Rabi dynamics, only bare phases", stacklevel=2)
    if dissipative and rates is None:
        rates = classical_pump_rates(params, trunc.n_max)
    amp = _evolve_pump_segment(params, initial.amplitudes, 0.0, t, trunc, rates, True)
    return StateSeries(trunc, t, amp)


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    pump_on: bool
    pump_R: complex = 0.0


@dataclass(frozen=True)
class PumpSchedule:
    """Contiguous pump segments. Switching is instantaneous with continuous
    amplitudes; this is valid when the ramp is slow on optical scales but
    fast on Rabi scales."""

    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        segs = tuple(self.segments)
        if not segs:
            raise ModelError("schedule needs at least one segment")
        for k, s in enumerate(segs):
            if not (math.isfinite(s.t_start) and math.isfinite(s.t_end)) or s.t_end < s.t_start:
                raise ModelError(f"segment {k} has invalid bounds")
            if k and abs(s.t_start - segs[k - 1].t_end) > 1e-12 * max(1.0, abs(s.t_start)):
                raise ModelError(f"segment {k} does not start where segment {k - 1} ends")
        if segs[0].t_start < 0:
            raise ModelError("schedule must start at t >= 0")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def from_durations(cls, durations: Sequence[tuple[float, bool, complex]],
                       t0: float = 0.0) -> "PumpSchedule":
        segs, t = [], t0
        for dur, on, r in durations:
            segs.append(Segment(t, t + dur, on, r))
            t += dur
        return cls(tuple(segs))

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end


@dataclass(frozen=True)
class PulseResult:
    final: StateVector
    history: StateSeries
    boundaries: np.ndarray


def pulse_sequence(schedule: PumpSchedule, params: SystemParams, initial: StateVector,
                   samples_per_segment: int = 64, rates: RateTable | None = None) -> PulseResult:
    """Piecewise evolution through the schedule (final state plus sampled history)."""
    trunc = _classical_state(initial)
    if samples_per_segment < 2:
        raise ModelError("samples_per_segment must be >= 2")
    c = initial.amplitudes.copy()
    ts, amps = [], []
    for seg in schedule.segments:
        p = params.with_(pump_R=seg.pump_R if seg.pump_on else 0.0)
        grid = np.linspace(seg.t_start, seg.t_end, samples_per_segment)
        seg_amp = _evolve_pump_segment(p, c, seg.t_start, grid, trunc, rates, seg.pump_on)
        ts.append(grid)
        amps.append(seg_amp)
        c = seg_amp[-1].copy()
    bounds = np.array([schedule.segments[0].t_start] + [s.t_end for s in schedule.segments])
    hist = StateSeries(trunc, np.concatenate(ts), np.concatenate(amps))
    return PulseResult(StateVector(trunc, c), hist, bounds)


def bell_pulse(params: SystemParams, n: int = 1) -> float:
    """Pump duration giving equal weights on |n-1,1> and |n,0>."""
    return math.pi / (4 * abs(pump_rabi(params, n)))


def full_cycle_pulse(params: SystemParams, n: int = 1) -> float:
    return math.pi / abs(pump_rabi(params, n))


# ---------------------------------------------------------------- two resonances

@dataclass(frozen=True)
class TwoLevelDrive:
    """Pair (C_n0, C_(n-1)1) in the frame rotating at W(n + 1/2)."""

    n: int
    detuning: float  # omega - W
    chi_n: complex  # chi sqrt(n)
    pump_n: complex  # R sqrt(n)
    Omega: float

    @classmethod
    def from_params(cls, params: SystemParams, n: int) -> "TwoLevelDrive":
        if n < 1:
            raise ModelError("n must be >= 1")
        return cls(n, params.omega - params.W, params.chi * math.sqrt(n),
                   params.pump_R * math.sqrt(n), params.Omega)

    def diagonal(self) -> np.ndarray:
        x = self.detuning
        return np.array([(self.n + 0.5) * x, (self.n - 0.5) * x])

    def hamiltonian(self, t: float) -> np.ndarray:
        g = self.chi_n + self.pump_n * np.exp(-1j * self.Omega * t)
        d = self.diagonal()
        return np.array([[d[0], -np.conj(g)], [-g, d[1]]], dtype=complex)

    def max_frequency(self) -> float:
        return float(np.max(np.abs(self.diagonal()))) + abs(self.chi_n) + abs(self.pump_n) \
            + abs(self.Omega)

    @property
    def period(self) -> float:
        if self.Omega == 0:
            raise ModelError("drive period needs Omega != 0")
        return 2 * math.pi / abs(self.Omega)


@dataclass(frozen=True)
class PairSeries:
    """Amplitudes (C_n0, C_(n-1)1) in the frame rotating at frame_frequency."""

    times: np.ndarray
    amplitudes: np.ndarray  # (nt, 2)
    frame_frequency: float

    def norms(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    def lab(self) -> np.ndarray:
        return self.amplitudes * np.exp(-1j * self.frame_frequency * self.times)[:, None]


_RTOL, _ATOL = 1e-12, 1e-14


def _unitary_rhs(sys: TwoLevelDrive):
    def f(t, y):
        U = y.view(complex).reshape(2, -1)
        return (-1j * sys.hamiltonian(t) @ U).reshape(-1).view(float)
    return f


def floquet_period_samples(sys: TwoLevelDrive, m: int) -> np.ndarray:
    """U(k T/m) for k = 0..m (last entry is the re-unitarised period map)."""
    T = sys.period
    s = np.arange(m + 1) * T / m
    y0 = np.eye(2, dtype=complex).reshape(-1).view(float)
    sol = solve_ivp(_unitary_rhs(sys), (0.0, T), y0, t_eval=s, method="DOP853",
                    rtol=_RTOL, atol=_ATOL)
    if not sol.success:
        raise RuntimeError(f"step-size failure in period integration: {sol.message}")
    Us = np.ascontiguousarray(sol.y.T).view(complex).reshape(-1, 2, 2)
    u, _, vh = np.linalg.svd(Us[-1])
    Us[-1] = u @ vh
    return Us


def samples_per_period(sys: TwoLevelDrive, minimum: int = 16) -> int:
    # Nyquist at least twice the largest frequency in the problem.
    return max(minimum, int(math.ceil(2 * sys.period * sys.max_frequency() / math.pi)))


def _commensurate(t: np.ndarray, period: float) -> int | None:
    if len(t) < 2 or t[0] != 0:
        return None
    dt = t[1] - t[0]
    if dt <= 0 or not np.allclose(np.diff(t), dt, rtol=1e-12, atol=1e-12 * max(1.0, t[-1])):
        return None
    m = period / dt
    mi = int(round(m))
    return mi if mi >= 1 and abs(m - mi) < 1e-9 * mi else None


def evolve_two_resonance(params: SystemParams, n: int, initial_pair: Sequence[complex],
                         times, method: str = "auto") -> PairSeries:
    """Exact solution of the pair with both the chi and R e^{-i Omega t} couplings.

    ``method="floquet"`` needs t_k = k T/m and uses U(t) = U(t mod T) U(T)^k;
    ``"direct"`` integrates the whole interval; ``"auto"`` picks Floquet when
    the grid allows it.
    """
    sys = TwoLevelDrive.from_params(params, n)
    t = check_times(times)
    c0 = np.asarray(initial_pair, dtype=complex).reshape(2)
    frame = params.W * (n + 0.5)
    m = _commensurate(t, sys.period) if sys.Omega != 0 else None
    if method == "floquet" and m is None:
        raise ModelError("Floquet route needs a uniform grid from 0 commensurate with 2 pi/Omega")
    if method not in ("auto", "floquet", "direct"):
        raise ModelError(f"unknown method {method!r}")
    if method != "direct" and m is not None:
        Us = floquet_period_samples(sys, m)
        out = np.empty((len(t), 2), dtype=complex)
        v = c0.copy()
        for start in range(0, len(t), m):
            stop = min(start + m, len(t))
            out[start:stop] = Us[: stop - start] @ v
            v = Us[-1] @ v
        return PairSeries(t, out, frame)
    if len(t) == 0:
        return PairSeries(t, np.empty((0, 2), complex), frame)

    def f(tt, y):
        return (-1j * sys.hamiltonian(tt) @ y.view(complex)).view(float)

    sol = solve_ivp(f, (0.0, float(t[-1]) if t[-1] > 0 else 1e-300), c0.view(float),
                    t_eval=t, method="DOP853", rtol=_RTOL, atol=_ATOL)
    if not sol.success:
        raise RuntimeError(f"step-size failure: {sol.message}")
    return PairSeries(t, np.ascontiguousarray(sol.y.T).view(complex), frame)


@dataclass(frozen=True)
class SpectralLine:
    omega_osc: float
    amp_sq: float
    merged: bool = False


def _spectrum(c: np.ndarray, dt: float, win: np.ndarray, pad: int):
    N = len(c)
    F = np.fft.fft(c * win, n=pad * N) / win.sum()
    om = -2 * np.pi * np.fft.fftfreq(pad * N, d=dt)
    order = np.argsort(om, kind="stable")
    return om[order], np.abs(F[order]) ** 2


def _maxima(P: np.ndarray, thr: float) -> np.ndarray:
    i = np.arange(1, len(P) - 1)
    return i[(P[i] > P[i - 1]) & (P[i] >= P[i + 1]) & (P[i] > thr)]


def _refine(om: np.ndarray, P: np.ndarray, i: int) -> tuple[float, float]:
    y0, y1, y2 = P[i - 1], P[i], P[i + 1]
    den = y0 - 2 * y1 + y2
    d = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    return float(om[i] + d * (om[i + 1] - om[i])), float(y1 - 0.25 * (y0 - y2) * d)


def spectral_lines(series: np.ndarray, times, pad: int = 8, threshold: float = 1e-4,
                   min_splitting: float | None = None) -> list[SpectralLine]:
    """Discrete lines of a quasi-periodic signal c(t) ~ sum_k a_k e^{-i w_k t}.

    Flat-top windowed power locates lines and gives amp^2 = |a_k|^2; frequency
    is refined on a Hann-windowed spectrum. Lines inside one flat-top lobe
    that the Hann spectrum separates are merged (amp^2 summed) and flagged.
    """
    c = np.asarray(series, dtype=complex).reshape(-1)
    t = np.asarray(times, dtype=float).reshape(-1)
    if len(c) != len(t) or len(c) < 16:
        raise ModelError("need matching series/times with at least 16 samples")
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0):
        raise ModelError("spectral analysis needs a uniform time grid")
    T = dt * len(c)
    if min_splitting is not None and T < 40 * math.pi / min_splitting:
        warnings.warn(f"series length {T:.3g} cannot resolve splittings below "
                      f"{40 * math.pi / T:.3g}", stacklevel=2)
    total = float(np.mean(np.abs(c) ** 2))
    if total == 0:
        return []
    thr = threshold * total
    om, P = _spectrum(c, dt, windows.flattop(len(c), sym=False), pad)
    omh, Ph = _spectrum(c, dt, windows.hann(len(c), sym=False), pad)
    bin_w = 2 * math.pi / T
    idx = _maxima(P, thr)
    groups: list[list[int]] = []
    for i in idx:
        if groups and om[i] - om[groups[-1][-1]] < 2.5 * bin_w:
            groups[-1].append(i)
        else:
            groups.append([i])
    lines = []
    hidx = _maxima(Ph, thr)
    for g in groups:
        lo, hi = om[g[0]] - 2.5 * bin_w, om[g[-1]] + 2.5 * bin_w
        amp_sq = float(max(P[i] for i in g))
        inside = [i for i in hidx if lo <= omh[i] <= hi]
        if len(inside) >= 2:
            ref = [_refine(omh, Ph, i) for i in inside]
            w = np.array([p for _, p in ref])
            f = float(np.sum(w * np.array([x for x, _ in ref])) / w.sum())
            lines.append(SpectralLine(f, float(w.sum()), True))
        elif inside:
            lines.append(SpectralLine(_refine(omh, Ph, inside[0])[0], amp_sq))
        else:
            lines.append(SpectralLine(float(np.mean([om[i] for i in g])), amp_sq))
    return lines


@dataclass(frozen=True)
class ScanLine:
    point: int
    omega_shifted: float
    omega_osc_shifted: float
    amp_sq: float
    which: int  # 0: C_n0, 1: C_(n-1)1
    merged: bool


@dataclass(frozen=True)
class ScanResult:
    """Spectral lines versus photon frequency (both in the shifted frames)."""

    n: int
    omega_shifted: np.ndarray
    lines: tuple[ScanLine, ...]
    rabi_2: float
    rabi_3: float
    Omega: float
    shift_prediction: np.ndarray = field(repr=False)  # (npts, 2) second-order shifts

    def at(self, point: int, which: int | None = None) -> list[ScanLine]:
        return [ln for ln in self.lines
                if ln.point == point and (which is None or ln.which == which)]

    def power_sums(self) -> np.ndarray:
        out = np.zeros(len(self.omega_shifted))
        for ln in self.lines:
            out[ln.point] += ln.amp_sq
        return out

    def dominant(self, point: int, which: int = 1, k: int = 2) -> list[ScanLine]:
        return sorted(self.at(point, which), key=lambda ln: -ln.amp_sq)[:k]


def perturbative_shift(params: SystemParams, n: int, detuning: float | None = None
                       ) -> tuple[float, float]:
    """Second-order shifts of the C_n0 and C_(n-1)1 lines away from both resonances.

    The chi coupling acts across a gap x = omega - W and the pump across
    x + Omega; levels repel, so the two shifts have opposite signs.
    """
    x = params.omega - params.W if detuning is None else detuning
    r2 = abs(params.chi) ** 2 * n
    r3 = abs(params.pump_R) ** 2 * n
    s = 0.0
    if r2:
        if x == 0:
            raise ModelError("on the two-wave resonance the shift is not perturbative")
        s += r2 / x
    if r3:
        if x + params.Omega == 0:
            raise ModelError("on the parametric resonance the shift is not perturbative")
        s += r3 / (x + params.Omega)
    return s, -s


def scan_duration(rabi_2: float, rabi_3: float, periods: float = 60.0) -> float:
    rs = [abs(r) for r in (rabi_2, rabi_3) if abs(r) > 0]
    if not rs:
        raise ModelError("scan needs at least one non-zero coupling")
    return periods * 2 * math.pi / min(rs)


def _scan_point(params: SystemParams, n: int, x: float, initial, n_periods: int,
                pad: int, threshold: float) -> list[tuple[int, SpectralLine]]:
    p = params.with_(omega=params.W + x)
    sys = TwoLevelDrive.from_params(p, n)
    m = samples_per_period(sys)
    t = np.arange(n_periods * m) * sys.period / m
    ser = evolve_two_resonance(p, n, initial, t, method="floquet")
    out = []
    for which in (0, 1):
        for ln in spectral_lines(ser.amplitudes[:, which], t, pad, threshold):
            out.append((which, ln))
    return out


def resonance_scan(params: SystemParams, n: int, detunings: Sequence[float],
                   rabi: tuple[float, float] | None = None,
                   initial: Sequence[complex] = (0.0, 1.0), periods: float = 60.0,
                   pad: int = 8, threshold: float = 1e-4, threads: int = 1) -> ScanResult:
    """Spectral lines of both amplitudes across a grid of omega - W.

    ``rabi = (|Omega_R^(2)|, |Omega_R^(3)|)`` overrides chi and pump_R, keeping
    their phases. Each point integrates ``periods`` of the slowest Rabi
    frequency.
    """
    if params.Omega <= 0:
        raise ModelError("the scan needs Omega > 0")
    if rabi is not None:
        ph2 = params.chi / abs(params.chi) if params.chi != 0 else 1.0
        ph3 = params.pump_R / abs(params.pump_R) if params.pump_R != 0 else 1.0
        params = params.with_(chi=ph2 * rabi[0] / math.sqrt(n), pump_R=ph3 * rabi[1] / math.sqrt(n))
    r2 = abs(params.chi) * math.sqrt(n)
    r3 = abs(params.pump_R) * math.sqrt(n)
    xs = np.asarray(detunings, dtype=float).reshape(-1)
    if not np.all(np.isfinite(xs)) or np.any(params.W + xs <= 0):
        raise ModelError("every grid point needs a finite, positive photon frequency")
    T_total = scan_duration(r2, r3, periods)
    n_periods = int(math.ceil(T_total * params.Omega / (2 * math.pi)))

    def work(x):
        return _scan_point(params, n, float(x), initial, n_periods, pad, threshold)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_point = list(pool.map(work, xs))
    else:
        per_point = [work(x) for x in xs]
    lines = []
    pred = np.full((len(xs), 2), np.nan)
    for k, (x, found) in enumerate(zip(xs, per_point)):
        for which, ln in found:
            lines.append(ScanLine(k, float(x), ln.omega_osc, ln.amp_sq, which, ln.merged))
        try:
            pred[k] = perturbative_shift(params, n, float(x))
        except ModelError:
            pass
    return ScanResult(n, xs, tuple(lines), r2, r3, params.Omega, pred)


@dataclass(frozen=True)
class GapFit:
    """gap^2 = a x^2 + b x + c fitted near one resonance."""

    resonance: float
    detected: bool
    gap: float
    a: float
    b: float
    c: float
    r_squared: float
    n_points: int
    vertex: float


def anticrossing_gap(scan: ScanResult, resonance: float, window: float | None = None,
                     which: int = 1, min_fraction: float = 0.01) -> GapFit:
    """Fit the splitting of the two strongest lines near ``resonance``.

    An isolated two-level anticrossing has gap^2 = (x - x_r)^2 + gap_min^2, so
    detection requires unit curvature (within 25%), R^2 > 0.99, the vertex
    inside the window and at least five usable points.
    """
    win = 0.5 * abs(scan.Omega) if window is None else window
    xs, g2 = [], []
    for k, x in enumerate(scan.omega_shifted):
        if abs(x - resonance) > win:
            continue
        top = scan.dominant(k, which, 2)
        if len(top) < 2:
            continue
        if top[1].amp_sq < min_fraction * (top[0].amp_sq + top[1].amp_sq):
            continue
        xs.append(x)
        g2.append((top[0].omega_osc_shifted - top[1].omega_osc_shifted) ** 2)
    nan = float("nan")
    if len(xs) < 5:
        return GapFit(resonance, False, nan, nan, nan, nan, nan, len(xs), nan)
    xs_a, g2_a = np.array(xs), np.array(g2)
    a, b, c = np.polyfit(xs_a - resonance, g2_a, 2)
    fit = np.polyval([a, b, c], xs_a - resonance)
    ss_tot = float(np.sum((g2_a - g2_a.mean()) ** 2))
    r2 = 1.0 - float(np.sum((g2_a - fit) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    vertex = -b / (2 * a) if a != 0 else nan
    floor = c - b * b / (4 * a) if a != 0 else nan
    gap = math.sqrt(floor) if floor == floor and floor > 0 else nan
    ok = (abs(a - 1) < 0.25 and r2 > 0.99 and abs(vertex) <= win and gap == gap)
    return GapFit(resonance, bool(ok), gap, float(a), float(b), float(c), r2, len(xs),
                  float(vertex + resonance) if vertex == vertex else nan)


def far_detuned_displacement(params: SystemParams, n: int, detuning: float,
                             which: int = 1, periods: float = 60.0) -> float:
    """Offset of the dominant line of one amplitude from its bare frequency."""
    scan = resonance_scan(params, n, [detuning], periods=periods)
    top = scan.dominant(0, which, 1)
    if not top:
        raise ModelError("no line found")
    bare = (n + 0.5 - which) * detuning
    return top[0].omega_osc_shifted - bare


def minor_component(params: SystemParams, n: int, detuning: float, periods: float = 60.0
                    ) -> float:
    """|C_n0 / C_(n-1)1| on the dominant line when starting in |n-1, 1>.

    This is the size of the admixed component of the eigenmode, i.e. the
    entanglement parameter away from the two-wave resonance.
    """
    scan = resonance_scan(params, n, [detuning], periods=periods)
    main = scan.dominant(0, 1, 1)[0]
    match = [ln for ln in scan.at(0, 0)
             if abs(ln.omega_osc_shifted - main.omega_osc_shifted) < 1e-3 * max(1.0, abs(params.Omega))]
    if not match:
        return 0.0
    return math.sqrt(max(ln.amp_sq for ln in match) / main.amp_sq)
