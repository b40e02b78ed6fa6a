"""Execute one experiment config and write CSV outputs plus a manifest."""

from __future__ import annotations

import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__, drive, presets
from .closed import anticrossing_diagram, evolve_closed
from .config import ExperimentConfig, Kind
from .dissipation import NoiseModel, relaxation_rates
from .lindblad import build_generator, evolve_rho
from .model import (OBSERVABLE_COLUMNS, StateVector, SystemParams, Truncation,
                    observables_series)
from .spectra import spectrum_analytic, spectrum_numeric
from .stochastic import TrajectoryConfig, analytic_damped_state, evolve_dyadics, run_ensemble
from .validation import CheckResult, run_checks


def fmt(x: float) -> str:
    return f"{float(x):.16e}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")


def _amplitude_csv(path: Path, trunc: Truncation, times, amps) -> None:
    labels = [s.label() for s in trunc.states()]
    header = ["t"] + [f"{p}_{lb}" for lb in labels for p in ("re", "im")]
    rows = ([t] + [v for c in row for v in (c.real, c.imag)] for t, row in zip(times, amps))
    write_csv(path, header, rows)


def _obs_csv(path: Path, times, obs, se=None, extra: dict | None = None) -> None:
    header = ["t", *OBSERVABLE_COLUMNS]
    cols = [np.asarray(times)[:, None], obs]
    if se is not None:
        header += [f"{c}_se" for c in OBSERVABLE_COLUMNS]
        cols.append(se)
    for name, col in (extra or {}).items():
        header.append(name)
        cols.append(np.asarray(col)[:, None])
    write_csv(path, header, np.hstack(cols))


@dataclass
class RunReport:
    out_dir: Path
    checks: list[CheckResult]
    outputs: list[str]
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _initial(cfg: ExperimentConfig, trunc: Truncation) -> StateVector:
    return StateVector.from_mapping(trunc, cfg.initial.mapping(), normalize=True)


def _times(cfg: ExperimentConfig, params: SystemParams) -> np.ndarray:
    tm = cfg.times
    t_max = tm.t_max
    if tm.rabi_units:
        t_max *= 2 * math.pi / abs(params.eta) if params.eta != 0 else 1.0
    return np.linspace(0.0, t_max, tm.n_points)


def _check(name, passed, value, tol, **detail) -> CheckResult:
    return CheckResult(name, bool(passed), float(value), float(tol), detail)


def _run_closed(cfg, params, out: Path, files: list) -> list[CheckResult]:
    trunc = cfg.truncation.build()
    checks = []
    if cfg.anticrossing is not None:
        a = cfg.anticrossing
        grid = np.linspace(a.detuning_min, a.detuning_max, a.n_points)
        diag0 = anticrossing_diagram(params, (1, 1), [0.0])
        unit = diag0.unit
        diag = anticrossing_diagram(params, (1, 1), grid * unit)
        write_csv(out / "anticrossing.csv", ["detuning", "branch_upper", "branch_lower"],
                  np.column_stack([diag.detuning, diag.branches]))
        files.append("anticrossing.csv")
        checks.append(_check("anticrossing_gap", abs(diag0.separation[0] - 2) < 1e-12,
                             abs(diag0.separation[0] - 2), 1e-12))
    if cfg.times is not None:
        init = _initial(cfg, trunc)
        t = _times(cfg, params)
        ser = evolve_closed(params, init, t)
        _obs_csv(out / "observables.csv", t, ser.observables())
        files.append("observables.csv")
        if cfg.write_amplitudes:
            _amplitude_csv(out / "amplitudes.csv", trunc, t, ser.amplitudes)
            files.append("amplitudes.csv")
        drift = float(np.max(np.abs(ser.norms() - init.norm_sq())))
        checks.append(_check("closed_norm", drift < 1e-12, drift, 1e-12))
    return checks


def _run_dyadic(cfg, params, out, files):
    trunc = cfg.truncation.build()
    init = _initial(cfg, trunc)
    t = _times(cfg, params)
    rates = relaxation_rates(params, trunc)
    model = NoiseModel.for_system(cfg.dyadic.noise_model, params, trunc)
    X0 = np.outer(init.amplitudes, init.amplitudes.conj())
    dy = evolve_dyadics(params, rates, model, X0, t, trunc, cfg.dyadic.rtol, cfg.dyadic.atol)
    extra = {"trace": dy.traces()}
    checks = []
    if cfg.dyadic.compare_analytic:
        small = relaxation_rates(params, Truncation(1, 1))
        ana = analytic_damped_state(params, small, t)
        extra["e_field_sq_analytic"] = ana.e_field_sq
        extra["atom_energy_analytic"] = ana.atom_energy
    _obs_csv(out / "observables.csv", t, dy.observables(), extra=extra)
    files.append("observables.csv")
    drift = float(np.max(np.abs(dy.traces() - np.real(np.trace(X0)))))
    checks.append(_check("dyadic_trace_drift", drift < 1e-8, drift, 1e-8))
    return checks


def _run_ensemble(cfg, params, out, files, seed, threads):
    trunc = cfg.truncation.build()
    init = _initial(cfg, trunc)
    tj = cfg.trajectory
    tc = TrajectoryConfig(dt=tj.dt, t_max=tj.t_max, n_trajectories=tj.n_trajectories,
                          seed=seed, noise_model=tj.noise_model,
                          output_stride=tj.output_stride, closure=tj.closure,
                          refresh_every_step=tj.refresh_every_step, threads=threads)
    ens = run_ensemble(tc, params, init)
    _obs_csv(out / "observables.csv", ens.times, ens.obs, ens.obs_se,
             extra={"norm": ens.norm, "norm_se": ens.norm_se})
    files.append("observables.csv")
    z = np.abs(ens.norm - 1.0)
    ok = bool(np.all(z <= 3 * ens.norm_se + 1e-12))
    with np.errstate(divide="ignore", invalid="ignore"):
        zmax = float(np.nanmax(np.where(ens.norm_se > 0, z / ens.norm_se, 0.0)))
    return [_check("ensemble_norm_within_3se", ok, zmax, 3.0)]


def _run_lindblad(cfg, params, out, files):
    trunc = cfg.truncation.build()
    init = _initial(cfg, trunc)
    t = _times(cfg, params)
    gen = build_generator(params, trunc, cfg.lindblad.hamiltonian_kind)
    rho = evolve_rho(gen, init, t, trace_tol=cfg.lindblad.trace_tol)
    _obs_csv(out / "observables.csv", t, observables_series(rho.populations(), trunc),
             extra={"trace": rho.traces()})
    files.append("observables.csv")
    drift = float(np.max(np.abs(rho.traces() - 1.0)))
    return [_check("lindblad_trace_drift", drift < cfg.lindblad.trace_tol, drift,
                   cfg.lindblad.trace_tol)]


def _spectrum_system(cfg):
    sp = cfg.spectrum
    if cfg.params is None:
        return presets.fig5_system(sp.ratio or 5.0)
    params = cfg.params.build()
    trunc = Truncation(1, 1)
    rates = relaxation_rates(params, trunc)
    if sp.ratio is not None:
        g_ac = rates[(1, 0, 0)] + 0.5 * (rates[(1, 1, 0)] + rates[(0, 0, 1)])
        eta = math.sqrt((sp.ratio * g_ac) ** 2 + (rates[(0, 0, 1)] - rates[(1, 1, 0)]) ** 2 / 4)
        phase = params.eta / abs(params.eta) if params.eta != 0 else 1.0
        params = params.with_(eta=phase * eta)
        rates = relaxation_rates(params, trunc)
    return params, rates


def _run_spectrum(cfg, out, files, info):
    sp = cfg.spectrum
    params, rates = _spectrum_system(cfg)
    g = spectrum_analytic(params, rates, [params.omega]).gamma_ac
    nu = params.omega + np.linspace(-sp.span, sp.span, sp.n_points) * g
    cols = {"nu": nu, "detuning": nu - params.omega}
    checks = []
    a = n = None
    if sp.method in ("analytic", "both"):
        a = spectrum_analytic(params, rates, nu)
        cols["S_analytic"] = a.S
    if sp.method in ("numeric", "both"):
        n = spectrum_numeric(params, rates, nu, t_max=sp.tail_decays / g)
        cols["S_numeric"] = n.S
        info["tail_bound"] = n.tail_bound
    write_csv(out / "spectrum.csv", list(cols), np.column_stack(list(cols.values())))
    files.append("spectrum.csv")
    ref = a or n
    pk = ref.peaks
    info["gamma_ac"] = g
    info["rabi_tilde_over_gamma_ac"] = abs(ref.rabi_tilde) / g
    if pk is not None:
        info["peaks"] = {"n_peaks": pk.n_peaks, "split": pk.split,
                         "positions_detuning": [float(x - params.omega) for x in pk.positions],
                         "values": [float(v) for v in pk.values]}
        want = abs(ref.rabi_tilde) > g and ref.rabi_tilde.imag == 0
        checks.append(_check("split_criterion", pk.split == want, float(pk.n_peaks), 0.0))
    if a is not None and n is not None:
        rel = float(np.max(np.abs(n.S - a.S) / np.abs(a.S)))
        checks.append(_check("numeric_vs_closed_form", rel < 1e-4, rel, 1e-4))
    return checks


def _run_classical(cfg, params, out, files):
    trunc = Truncation(0, cfg.classical.n_max)
    init = _initial(cfg, trunc)
    t = _times(cfg, params)
    ser = drive.evolve_classical_pump(params, init, t, dissipative=cfg.classical.dissipative)
    _obs_csv(out / "observables.csv", t, ser.observables())
    _amplitude_csv(out / "amplitudes.csv", trunc, t, ser.amplitudes)
    files += ["observables.csv", "amplitudes.csv"]
    if cfg.classical.dissipative:
        return []
    drift = float(np.max(np.abs(ser.norms() - 1.0)))
    return [_check("classical_norm", drift < 1e-12, drift, 1e-12)]


def _run_scan(cfg, params, out, files, threads, info):
    sc = cfg.scan
    om = params.Omega
    rabi = None
    if sc.rabi_2 is not None or sc.rabi_3 is not None:
        r2 = (sc.rabi_2 if sc.rabi_2 is not None else abs(params.chi) * math.sqrt(sc.n) / om)
        r3 = (sc.rabi_3 if sc.rabi_3 is not None else abs(params.pump_R) * math.sqrt(sc.n) / om)
        rabi = (r2 * om, r3 * om)
    grid = np.linspace(sc.x_min, sc.x_max, sc.n_points) * om
    res = drive.resonance_scan(params, sc.n, grid, rabi=rabi, initial=sc.initial,
                               periods=sc.periods, threshold=sc.threshold, threads=threads)
    rows = [(ln.omega_shifted / om, ln.omega_osc_shifted / om, ln.amp_sq,
             drive.AMPLITUDE_LABELS[ln.which]) for ln in res.lines]
    write_csv(out / "scan.csv", ["omega_shifted", "omega_osc_shifted", "amp_sq",
                                 "which_amplitude"], rows)
    files.append("scan.csv")
    gaps = {}
    for xr in (0.0, -om):
        f = drive.anticrossing_gap(res, xr)
        gaps[f"{xr / om:+.0f}"] = {"detected": f.detected,
                                   "gap_over_Omega": f.gap / om if f.detected else None,
                                   "curvature": f.a, "r_squared": f.r_squared,
                                   "n_points": f.n_points}
    info["anticrossings"] = gaps
    info["rabi_over_Omega"] = [res.rabi_2 / om, res.rabi_3 / om]
    power = float(res.power_sums().max()) if len(res.lines) else 0.0
    return [_check("parseval", power <= 1.005, power, 1.005)]


def _run_control(cfg, params, out, files, info):
    ctl = cfg.control
    trunc = Truncation(0, max(ctl.n, cfg.truncation.n_max))
    init = _initial(cfg, trunc)
    segs = []
    for s in ctl.segments:
        R = s.pump_R if s.pump_R is not None else params.pump_R
        if s.pulse is not None:
            pr = params.with_(pump_R=R)
            dur = drive.bell_pulse(pr, ctl.n) if s.pulse == "bell" else \
                drive.full_cycle_pulse(pr, ctl.n)
        else:
            dur = s.duration
        segs.append((dur, s.pump_on, R))
    sched = drive.PumpSchedule.from_durations(segs)
    rates = None
    if ctl.dissipative:
        from .dissipation import classical_pump_rates
        rates = classical_pump_rates(params, trunc.n_max)
    res = drive.pulse_sequence(sched, params, init, ctl.samples_per_segment, rates)
    _amplitude_csv(out / "amplitudes.csv", trunc, res.history.times, res.history.amplitudes)
    _obs_csv(out / "observables.csv", res.history.times, res.history.observables())
    files += ["amplitudes.csv", "observables.csv"]
    info["final_magnitudes"] = {s.label(): abs(c) for s, c in
                                zip(trunc.states(), res.final.amplitudes) if abs(c) > 1e-15}
    info["segment_boundaries"] = [float(b) for b in res.boundaries]
    checks = []
    if ctl.target is not None:
        tgt = StateVector.from_mapping(trunc, {tuple(int(c) for c in k): v
                                               for k, v in ctl.target.items()}, normalize=True)
        fid = abs(np.vdot(tgt.amplitudes, res.final.amplitudes)) ** 2
        checks.append(_check("target_fidelity", abs(1 - fid) < 1e-9, 1 - fid, 1e-9))
    elif len(ctl.segments) and ctl.segments[0].pulse == "bell" and not ctl.dissipative:
        mags = np.abs([res.final[(0, ctl.n, 0)], res.final[(0, ctl.n - 1, 1)]])
        dev = float(np.max(np.abs(mags - 1 / math.sqrt(2))))
        checks.append(_check("bell_magnitudes", dev < 1e-9, dev, 1e-9))
    return checks


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, seed: int | None = None,
                   threads: int | None = None) -> RunReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    threads = cfg.threads if threads is None else threads
    t0 = time.perf_counter()
    files: list[str] = []
    info: dict = {}
    params = cfg.params.build() if cfg.params is not None else None
    k = cfg.kind
    if k is Kind.CLOSED:
        checks = _run_closed(cfg, params, out, files)
    elif k is Kind.OPEN_DYADIC:
        checks = _run_dyadic(cfg, params, out, files)
    elif k is Kind.OPEN_ENSEMBLE:
        checks = _run_ensemble(cfg, params, out, files, seed, threads)
    elif k is Kind.LINDBLAD:
        checks = _run_lindblad(cfg, params, out, files)
    elif k is Kind.SPECTRUM:
        checks = _run_spectrum(cfg, out, files, info)
    elif k is Kind.CLASSICAL:
        checks = _run_classical(cfg, params, out, files)
    elif k is Kind.SCAN:
        checks = _run_scan(cfg, params, out, files, threads, info)
    elif k is Kind.CONTROL:
        checks = _run_control(cfg, params, out, files, info)
    else:
        checks = run_checks(cfg.validate_.checks or None)
        write_csv(out / "validation.csv", ["check", "passed", "value", "tolerance"],
                  [(c.name, "true" if c.passed else "false", c.value, c.tolerance)
                   for c in checks])
        files.append("validation.csv")
    runtime = time.perf_counter() - t0
    report = RunReport(out, checks, files, info)
    write_manifest(out / "manifest.json", cfg, seed, threads, runtime, report)
    return report


def versions() -> dict:
    import numpy
    import pydantic
    import scipy
    return {"trion_dyn": __version__, "python": platform.python_version(),
            "numpy": numpy.__version__, "scipy": scipy.__version__,
            "pydantic": pydantic.__version__}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_manifest(path: Path, cfg: ExperimentConfig, seed: int, threads: int,
                   runtime: float, report: RunReport) -> None:
    doc = {
        "config": cfg.dump(),
        "seed": seed,
        "threads": threads,
        "versions": versions(),
        "runtime_s": runtime,
        "outputs": report.outputs,
        "results": report.info,
        "checks": [c.as_dict() for c in report.checks],
        "all_checks_passed": report.passed,
    }
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def write_error(out_dir: Path | None, kind: str, message: str) -> dict:
    rec = {"error": kind, "message": message}
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(json.dumps(rec, indent=2) + "\n")
        except OSError:
            pass
    return rec


__all__ = ["run_experiment", "RunReport", "write_csv", "fmt", "versions"]
