"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single PASS/FAIL line (value, tolerance, runtime) to the
terminal whether or not output capture is on.
"""

import shutil
import subprocess
import sys
import time

import pytest

from trion_dyn import validation as V
from trion_dyn.validation import CheckResult


def _report(capsys, res: CheckResult) -> None:
    with capsys.disabled():
        print(f"\n{res.line()}")
    assert res.passed, f"{res.name}: {res.detail}"


def test_01_closed_resonant_rabi(capsys):
    res = V.check_closed_rabi()
    assert res.detail["brute_force_dev"] < 1e-9 and res.runtime_s < 1.0
    _report(capsys, res)


def test_02_anticrossing(capsys):
    res = V.check_anticrossing()
    assert res.detail["asymptotic_rel_error"] < 5e-3
    _report(capsys, res)


def test_03_damped_dynamics(capsys):
    res = V.check_damped()
    assert res.detail["long_time_E2_minus_1"] < 1e-3
    _report(capsys, res)


def test_04_stochastic_lindblad_equivalence(capsys):
    res = V.check_stochastic_lindblad()
    d = res.detail
    assert d["n_trajectories"] == 6400
    assert max(d["ensemble_max_sigma_T0"], d["ensemble_max_sigma_finiteT"]) <= 5.0
    assert res.runtime_s < 120.0
    _report(capsys, res)


def test_05_norm_conservation(capsys):
    res = V.check_norm()
    assert res.detail["closed_block_drift"] < 1e-12
    _report(capsys, res)


def test_06_emission_spectrum(capsys):
    res = V.check_spectrum()
    d = res.detail
    assert d["split_boundary_ok"] and d["peak_positions_ok"] and d["maxima_rel_diff"] < 1e-3
    _report(capsys, res)


def test_07_resonance_scan(capsys):
    res = V.check_resonance_scan()
    d = res.detail
    assert d["large_coupling_no_isolated_gap"]
    assert d["far_rel_error"] < 0.1 and d["two_wave_rel_error"] < 0.1
    assert res.runtime_s < 180.0
    _report(capsys, res)


def test_08_entanglement_control(capsys):
    res = V.check_control()
    assert abs(res.detail["full_cycle_infidelity"]) < 1e-9
    _report(capsys, res)


def test_09_rate_table_identity(capsys):
    _report(capsys, V.check_rate_identity())


def test_10_determinism(capsys, tmp_path):
    # in-process check plus two separate CLI invocations
    res = V.check_determinism()
    exe = shutil.which("trion-dyn")
    cmd = [exe] if exe else [sys.executable, "-m", "trion_dyn"]
    t0 = time.perf_counter()
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cp = subprocess.run(cmd + ["run", "--preset", "determinism", "--seed", "424242",
                                   "--out", str(out)], capture_output=True, text=True)
        assert cp.returncode == 0, cp.stderr
        blobs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = bool(blobs[0]) and blobs[0] == blobs[1]
    merged = CheckResult(res.name, res.passed and same, 0.0 if same else 1.0, 0.0,
                         {**res.detail, "cli_identical": same},
                         res.runtime_s + time.perf_counter() - t0)
    _report(capsys, merged)
