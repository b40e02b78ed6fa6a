"""Tolerance checks, one function per acceptance criterion.

Every check returns a :class:`CheckResult`; the CLI ``validate`` kind and the
acceptance test suite both call these.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from . import drive, presets
from .closed import anticrossing_diagram, evolve_closed
from .dissipation import NoiseKind, NoiseModel, relaxation_rates
from .lindblad import HamiltonianKind, build_generator, compare_to_dyadics, evolve_rho
from .model import StateVector, Truncation, observables_series
from .spectra import expected_peaks, spectrum_analytic, spectrum_numeric
from .stochastic import (Closure, TrajectoryConfig, analytic_damped_state, evolve_dyadics,
                         run_ensemble)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} {self.name}: value={self.value:.3e} tol={self.tolerance:.3e} "
                f"({self.runtime_s:.2f} s)")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = bool(self.passed)
        return d


def _timed(fn: Callable[[], CheckResult]) -> CheckResult:
    t0 = time.perf_counter()
    res = fn()
    res.runtime_s = time.perf_counter() - t0
    return res


def _with_runtime_limit(res: CheckResult, limit: float) -> CheckResult:
    res.detail["runtime_limit_s"] = limit
    res.detail["runtime_ok"] = res.runtime_s < limit
    res.passed = bool(res.passed and res.runtime_s < limit)
    return res


# 1 ------------------------------------------------------------------------

def _brute_force_populations(params, trunc, initial, t):
    # Full truncated matrix in the frame of its own diagonal: y = exp(iH0 t) psi.
    # The phases are kept explicitly, so nothing about the block structure is assumed.
    gen = build_generator(params, trunc, HamiltonianKind.RWA_PLUS)
    H = gen.H_static
    e = np.real(np.diag(H))
    V = H - np.diag(e)
    de = e[:, None] - e[None, :]

    def f(s, y):
        return (-1j * ((V * np.exp(1j * de * s)) @ y.view(complex))).view(float)

    sol = solve_ivp(f, (0.0, float(t[-1])), initial.amplitudes.copy().view(float), t_eval=t,
                    method="DOP853", rtol=1e-13, atol=1e-15)
    amp = np.ascontiguousarray(sol.y.T).view(complex)
    return np.abs(amp) ** 2


def check_closed_rabi() -> CheckResult:
    def run():
        params = presets.fig3_params()
        trunc = Truncation(2, 2)
        init = StateVector.basis(trunc, 0, 0, 1)
        r = abs(params.eta)
        t = np.linspace(0.0, 10 * 2 * math.pi / r, 2001)
        obs = observables_series(_brute_force_populations(params, trunc, init, t), trunc)
        e2 = 2 - np.cos(2 * r * t)
        ha = 0.5 * (1 + np.cos(2 * r * t))
        dev_bf = max(np.max(np.abs(obs[:, 0] - e2)), np.max(np.abs(obs[:, 1] - ha)))
        blk = evolve_closed(params, init, t).observables()
        dev_blk = max(np.max(np.abs(blk[:, 0] - e2)), np.max(np.abs(blk[:, 1] - ha)))
        dev = max(dev_bf, dev_blk)
        return CheckResult("1 closed resonant Rabi", dev < 1e-9, dev, 1e-9,
                           {"brute_force_dev": dev_bf, "block_dev": dev_blk})
    return _with_runtime_limit(_timed(run), 1.0)


# 2 ------------------------------------------------------------------------

def check_anticrossing() -> CheckResult:
    def run():
        params = presets.fig3_params()
        r = abs(params.eta)
        diag = anticrossing_diagram(params, (1, 1), [0.0, -20 * r, 20 * r])
        sep = abs(diag.separation[0] - 2.0)
        rec = 0.0
        for k in (1, 2):
            d = diag.detuning[k]
            up, lo = diag.branches[k]
            bare = sorted([0.0, d])[::-1]
            rec = max(rec, abs(up - bare[0]) / abs(d), abs(lo - bare[1]) / abs(d))
        ok = sep < 1e-12 and rec < 5e-3
        return CheckResult("2 anticrossing", ok, sep, 1e-12,
                           {"separation_error": sep, "asymptotic_rel_error": rec,
                            "asymptotic_tol": 5e-3})
    return _timed(run)


# 3 ------------------------------------------------------------------------

def check_damped() -> CheckResult:
    def run():
        params = presets.fig4_params()
        trunc = Truncation(1, 1)
        rates = relaxation_rates(params, trunc)
        gsum = rates[(1, 1, 0)] + rates[(0, 0, 1)]
        init = StateVector.basis(trunc, 0, 0, 1)
        gen = build_generator(params, trunc)
        dr = analytic_damped_state(params, rates, [0.0]).rabi
        om = dr.Omega_R_tilde.real
        k = np.arange(0, 41)
        t_ext = k * math.pi / (2 * om)
        t_long = 40.0 / gsum
        t = np.append(t_ext, t_long)
        rho = evolve_rho(gen, init, t)
        obs = observables_series(rho.populations(), trunc)
        ana = analytic_damped_state(params, rates, t)
        e_rel = np.abs(obs[:-1, 0] - ana.e_field_sq[:-1]) / np.abs(ana.e_field_sq[:-1])
        even = (k % 2 == 0)
        ha_rel = np.abs(obs[:-1][even, 1] - ana.atom_energy[:-1][even]) / ana.atom_energy[:-1][even]
        rel = float(max(e_rel.max(), ha_rel.max()))
        tail = abs(obs[-1, 0] - 1.0)
        tol = (0.3 / 2) ** 2
        ok = rel <= tol and tail < 1e-3 and abs(gsum - 0.3 * abs(params.eta)) < 1e-12
        return CheckResult("3 damped dynamics", ok, rel, tol,
                           {"long_time_E2_minus_1": tail, "long_time_tol": 1e-3,
                            "gamma_sum": gsum})
    return _with_runtime_limit(_timed(run), 10.0)


# 4 ------------------------------------------------------------------------

def _equivalence_case(params, n_traj: int, seed: int):
    trunc = Truncation(1, 1)
    init = StateVector.basis(trunc, 0, 0, 1)
    rates = relaxation_rates(params, trunc)
    model = NoiseModel.for_system(NoiseKind.LINDBLAD_MATCHED, params, trunc)
    t_max = 10 * 2 * math.pi / abs(params.eta)
    t = np.linspace(0.0, t_max, 401)
    X0 = np.outer(init.amplitudes, init.amplitudes.conj())
    dy = evolve_dyadics(params, rates, model, X0, t, trunc)
    gen = build_generator(params, trunc)
    rho = evolve_rho(gen, init, t)
    det_dev = compare_to_dyadics(rho, t, dy.dyadics)
    cfg = TrajectoryConfig(dt=0.02, t_max=t_max, n_trajectories=n_traj, seed=seed,
                           noise_model=NoiseKind.LINDBLAD_MATCHED, output_stride=157,
                           closure=Closure.DYADIC)
    ens = run_ensemble(cfg, params, init)
    ref = evolve_rho(gen, init, ens.times).rho
    sig = ens.max_sigma_deviation(ref)
    return det_dev, sig


def check_stochastic_lindblad(n_traj: int = 6400, seed: int = 20240601) -> CheckResult:
    def run():
        d0, s0 = _equivalence_case(presets.equivalence_params(finite_T=False), n_traj, seed)
        d1, s1 = _equivalence_case(presets.equivalence_params(finite_T=True), n_traj, seed + 1)
        det = max(d0, d1)
        sig = max(s0, s1)
        ok = det < 1e-8 and sig <= 5.0
        return CheckResult("4 stochastic-Lindblad equivalence", ok, det, 1e-8,
                           {"dyadic_dev_T0": d0, "dyadic_dev_finiteT": d1,
                            "ensemble_max_sigma_T0": s0, "ensemble_max_sigma_finiteT": s1,
                            "ensemble_sigma_tol": 5.0, "n_trajectories": n_traj})
    return _with_runtime_limit(_timed(run), 120.0)


# 5 ------------------------------------------------------------------------

def check_norm() -> CheckResult:
    def run():
        params = presets.equivalence_params(finite_T=True)
        trunc = Truncation(2, 2)
        init = StateVector.from_mapping(trunc, {(0, 0, 1): 1.0, (1, 1, 0): 1.0j,
                                                (2, 2, 0): 0.5}, normalize=True)
        rates = relaxation_rates(params, trunc)
        X0 = np.outer(init.amplitudes, init.amplitudes.conj())
        t = np.linspace(0.0, 10 * 2 * math.pi / abs(params.eta), 301)
        drift = {}
        for kind in NoiseKind:
            model = NoiseModel.for_system(kind, params, trunc)
            dy = evolve_dyadics(params, rates, model, X0, t, trunc)
            drift[kind.value] = float(np.max(np.abs(dy.traces() - 1.0)))
        closed = evolve_closed(params, init, t)
        closed_drift = float(np.max(np.abs(closed.norms() - 1.0)))
        worst = max(drift.values())
        ok = worst < 1e-8 and closed_drift < 1e-12
        return CheckResult("5 norm conservation", ok, worst, 1e-8,
                           {"dyadic_trace_drift": drift, "closed_block_drift": closed_drift,
                            "closed_tol": 1e-12})
    return _timed(run)


# 6 ------------------------------------------------------------------------

def check_spectrum() -> CheckResult:
    def run():
        detail = {}
        worst = 0.0
        maxima = {}
        for ratio in (0.5, 2.0, 5.0):
            params, rates = presets.fig5_system(ratio)
            g = spectrum_analytic(params, rates, [params.omega]).gamma_ac
            nu = params.omega + np.linspace(-8.0, 8.0, 3201) * g
            a = spectrum_analytic(params, rates, nu)
            n = spectrum_numeric(params, rates, nu)
            rel = float(np.max(np.abs(n.S - a.S) / np.abs(a.S)))
            worst = max(worst, rel)
            detail[f"ratio_{ratio}_numeric_rel"] = rel
            if ratio == 5.0:
                cell = nu[1] - nu[0]
                exp = math.sqrt(24.0) * g
                pos = np.sort(a.peaks.positions - params.omega)
                pos_err = float(np.max(np.abs(pos - np.array([-exp, exp]))))
                detail["ratio_5_peak_error_over_cell"] = pos_err / cell
                pos_ok = a.peaks.n_peaks == 2 and pos_err <= cell
                npos = np.sort(n.peaks.positions - params.omega)
                pos_ok = pos_ok and n.peaks.n_peaks == 2 and \
                    float(np.max(np.abs(npos - np.array([-exp, exp])))) <= cell
            if ratio in (2.0, 5.0):
                maxima[ratio] = float(np.max(a.peaks.values))
        boundary_ok = True
        for ratio, want in ((0.95, False), (1.0, False), (1.05, True), (0.5, False),
                            (2.0, True), (5.0, True)):
            params, rates = presets.fig5_system(ratio)
            g = spectrum_analytic(params, rates, [params.omega]).gamma_ac
            nu = params.omega + np.linspace(-8.0, 8.0, 8001) * g
            got = spectrum_analytic(params, rates, nu).peaks.split
            boundary_ok = boundary_ok and got == want and \
                (len(expected_peaks(params, rates)) == 2) == want
        max_rel = abs(maxima[2.0] - maxima[5.0]) / maxima[5.0]
        detail.update({"split_boundary_ok": boundary_ok, "maxima_rel_diff": max_rel,
                       "peak_positions_ok": bool(pos_ok)})
        ok = worst < 1e-4 and boundary_ok and pos_ok and max_rel < 1e-3
        return CheckResult("6 emission spectrum", ok, worst, 1e-4, detail)
    return _with_runtime_limit(_timed(run), 5.0)


# 7 ------------------------------------------------------------------------

def check_resonance_scan() -> CheckResult:
    def run():
        detail = {}
        grid = presets.SCAN_GRID
        p = presets.scan_params(0.1)
        scan = drive.resonance_scan(p, presets.SCAN_N, grid)
        gaps = {}
        for xr in (0.0, -p.Omega):
            fit = drive.anticrossing_gap(scan, xr)
            gaps[xr] = fit
        rel_gap = max(abs(f.gap / p.Omega - 0.2) / 0.2 if f.detected else math.inf
                      for f in gaps.values())
        detail["gap_rel_error"] = rel_gap
        detail["gaps"] = {str(k): v.gap for k, v in gaps.items()}
        parseval = float(scan.power_sums().max())
        detail["max_power_sum"] = parseval
        p5 = presets.scan_params(0.5)
        scan5 = drive.resonance_scan(p5, presets.SCAN_N, grid)
        smeared = not any(drive.anticrossing_gap(scan5, xr).detected for xr in (0.0, -p5.Omega))
        detail["large_coupling_no_isolated_gap"] = smeared
        # far-detuned displacement of the dominant C_(n-1)1 line
        x_far = 5.0 * p.Omega
        measured = drive.far_detuned_displacement(p, presets.SCAN_N, x_far)
        predicted = drive.perturbative_shift(p, presets.SCAN_N, x_far)[1]
        shift_rel = abs(measured - predicted) / abs(predicted)
        bound = abs(p.chi) ** 2 * presets.SCAN_N / p.Omega
        detail.update({"far_measured": measured, "far_predicted": predicted,
                       "far_rel_error": shift_rel, "far_within_bound": abs(measured) <= bound,
                       "literal_rabi2_sq_over_Omega": bound})
        # the two-wave shift |Omega_R^(2)|^2/Omega itself, in its regime (x = -Omega)
        p_two = p.with_(pump_R=0.0)
        measured_two = drive.far_detuned_displacement(p_two, presets.SCAN_N, -p.Omega)
        two_rel = abs(abs(measured_two) - bound) / bound
        detail.update({"two_wave_shift_measured": measured_two, "two_wave_rel_error": two_rel})
        ok = (rel_gap < 0.05 and smeared and shift_rel < 0.1 and two_rel < 0.1
              and abs(measured) <= bound and parseval <= 1.005)
        return CheckResult("7 resonance scan", ok, rel_gap, 0.05, detail)
    return _with_runtime_limit(_timed(run), 180.0)


# 8 ------------------------------------------------------------------------

def check_control() -> CheckResult:
    def run():
        params = presets.control_params()
        trunc = Truncation(0, 1)
        init = StateVector.basis(trunc, 0, 0, 1)
        t_bell = drive.bell_pulse(params)
        sched = drive.PumpSchedule.from_durations([(t_bell, True, params.pump_R)])
        fin = drive.pulse_sequence(sched, params, init).final
        a10, a01 = abs(fin[(0, 1, 0)]), abs(fin[(0, 0, 1)])
        bell_dev = max(abs(a10 - 1 / math.sqrt(2)), abs(a01 - 1 / math.sqrt(2)))
        sched2 = drive.PumpSchedule.from_durations(
            [(drive.full_cycle_pulse(params), True, params.pump_R)])
        fin2 = drive.pulse_sequence(sched2, params, init).final
        fid = abs(np.vdot(init.amplitudes, fin2.amplitudes)) ** 2
        ok = bell_dev < 1e-9 and abs(1 - fid) < 1e-9
        return CheckResult("8 entanglement control", ok, bell_dev, 1e-9,
                           {"full_cycle_infidelity": 1 - fid})
    return _timed(run)


# 9 ------------------------------------------------------------------------

def check_rate_identity() -> CheckResult:
    def run():
        trunc = Truncation(2, 2)
        worst, bitwise = 0.0, True
        for finite in (False, True):
            params = presets.equivalence_params(finite_T=finite)
            rates = relaxation_rates(params, trunc).as_vector()
            gam = np.real(np.diagonal(build_generator(params, trunc).Gamma))
            bitwise = bitwise and bool(np.array_equal(rates, gam))
            nz = rates != 0
            rel = float(np.max(np.abs(gam[nz] - rates[nz]) / rates[nz]))
            worst = max(worst, rel, float(np.max(np.abs(gam[~nz]), initial=0.0)))
        ok = bitwise or worst < 1e-15
        return CheckResult("9 rate-table identity", ok, worst, 1e-15, {"bitwise": bitwise})
    return _timed(run)


# 10 -----------------------------------------------------------------------

def check_determinism() -> CheckResult:
    from .runner import run_experiment
    from .config import load_preset

    def run():
        cfg = load_preset("determinism")
        digests = []
        with tempfile.TemporaryDirectory() as tmp:
            for k in range(2):
                out = Path(tmp) / f"run{k}"
                run_experiment(cfg, out)
                digests.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        same = digests[0] == digests[1] and bool(digests[0])
        return CheckResult("10 determinism", same, 0.0 if same else 1.0, 0.0,
                           {"files": sorted(digests[0])})
    return _timed(run)


ALL_CHECKS: dict[str, Callable[[], CheckResult]] = {
    "closed_rabi": check_closed_rabi,
    "anticrossing": check_anticrossing,
    "damped": check_damped,
    "stochastic_lindblad": check_stochastic_lindblad,
    "norm": check_norm,
    "spectrum": check_spectrum,
    "resonance_scan": check_resonance_scan,
    "control": check_control,
    "rate_identity": check_rate_identity,
    "determinism": check_determinism,
}


def run_checks(names=None) -> list[CheckResult]:
    names = list(ALL_CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in ALL_CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {unknown}")
    return [ALL_CHECKS[n]() for n in names]
