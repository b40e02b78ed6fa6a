import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trion_dyn import drive, presets
from trion_dyn.closed import evolve_closed
from trion_dyn.lindblad import HamiltonianKind, build_generator, evolve_rho
from trion_dyn.model import ModelError, StateVector, SystemParams, Truncation


def test_classical_pump_equals_quantum_block():
    # A phonon number state alpha acts like a classical pump with R = eta sqrt(alpha).
    alpha, n = 2, 1
    q = SystemParams(**presets.BASE, eta=0.3)
    tq = Truncation(alpha, n)
    t = np.linspace(0, 20, 81)
    quantum = evolve_closed(q, StateVector.basis(tq, alpha - 1, n - 1, 1), t)
    c = q.with_(eta=0.0, pump_R=0.3 * math.sqrt(alpha))
    tc = Truncation(0, n)
    classical = drive.evolve_classical_pump(c, StateVector.basis(tc, 0, n - 1, 1), t)
    pq = quantum.populations()[:, [tq.index(alpha, n, 0), tq.index(alpha - 1, n - 1, 1)]]
    pc = classical.populations()[:, [tc.index(0, n, 0), tc.index(0, n - 1, 1)]]
    assert np.allclose(pq, pc, atol=1e-12)


@pytest.mark.parametrize("dissipative", [False, True])
def test_classical_pump_against_time_dependent_master_equation(dissipative):
    p = presets.control_params().with_(gamma=0.05 if dissipative else 0.0,
                                       mu_omega=0.03 if dissipative else 0.0)
    tr = Truncation(0, 1)
    init = StateVector.basis(tr, 0, 0, 1)
    t = np.linspace(0, 6, 25)
    ser = drive.evolve_classical_pump(p, init, t, dissipative=dissipative)
    gen = build_generator(p, tr, HamiltonianKind.CLASSICAL_PUMP)
    rho = evolve_rho(gen, init, t, rtol=1e-12, atol=1e-14)
    amp = ser.amplitudes
    i, j = tr.index(0, 1, 0), tr.index(0, 0, 1)
    # the pair block and its coherence; decay out of the block lands in |0,0,0>
    for a in (i, j):
        for b in (i, j):
            assert np.allclose(rho.rho[:, a, b], amp[:, a] * np.conj(amp[:, b]), atol=1e-9)


def test_zero_pump_warns():
    tr = Truncation(0, 1)
    with pytest.warns(UserWarning):
        drive.evolve_classical_pump(presets.control_params().with_(pump_R=0.0),
                                    StateVector.basis(tr, 0, 0, 1), [0.0, 1.0])


def test_pulse_areas():
    p = presets.control_params()
    init = StateVector.basis(Truncation(0, 1), 0, 0, 1)
    half = drive.PumpSchedule.from_durations([(drive.bell_pulse(p), True, p.pump_R)])
    fin = drive.pulse_sequence(half, p, init).final
    assert math.isclose(abs(fin[(0, 1, 0)]), 1 / math.sqrt(2), abs_tol=1e-12)
    # two Bell pulses separated by a free gap still add up (the frame is absolute)
    sched = drive.PumpSchedule.from_durations([(drive.bell_pulse(p), True, p.pump_R),
                                               (1.7, False, 0.0),
                                               (drive.bell_pulse(p), True, p.pump_R)])
    res = drive.pulse_sequence(sched, p, init)
    assert np.allclose(res.boundaries, [0.0, sched.segments[0].t_end,
                                        sched.segments[1].t_end, sched.t_end])
    assert np.allclose(res.history.norms(), 1.0, atol=1e-12)


def test_schedule_validation():
    with pytest.raises(ModelError):
        drive.PumpSchedule(())
    with pytest.raises(ModelError):
        drive.PumpSchedule((drive.Segment(0.0, 1.0, True), drive.Segment(1.5, 2.0, False)))
    with pytest.raises(ModelError):
        drive.PumpSchedule((drive.Segment(0.0, -1.0, True),))


def _pair_times(p, n, periods, m=None):
    sys = drive.TwoLevelDrive.from_params(p, n)
    m = m or drive.samples_per_period(sys)
    return np.arange(periods * m) * sys.period / m


@pytest.mark.parametrize("x", [-1.0, -0.3, 0.0, 0.6])
def test_floquet_route_matches_direct_integration(x):
    p = presets.scan_params(0.3).with_(omega=10.0 + x)
    t = _pair_times(p, 1, 5)
    a = drive.evolve_two_resonance(p, 1, (0.0, 1.0), t, method="floquet")
    b = drive.evolve_two_resonance(p, 1, (0.0, 1.0), t, method="direct")
    assert np.allclose(a.amplitudes, b.amplitudes, atol=1e-9)
    assert np.allclose(a.norms(), 1.0, atol=1e-10)


def test_floquet_needs_a_commensurate_grid():
    p = presets.scan_params(0.1)
    with pytest.raises(ModelError):
        drive.evolve_two_resonance(p, 1, (0.0, 1.0), np.linspace(0, 3.3, 50), method="floquet")


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_spectral_lines_on_synthetic_signal(w1, w2, a1, a2):
    if abs(w1 - w2) < 0.3:
        return
    t = np.arange(4096) * 0.05
    c = a1 * np.exp(-1j * w1 * t) + a2 * np.exp(-1j * w2 * t)
    lines = sorted(drive.spectral_lines(c, t), key=lambda ln: -ln.amp_sq)[:2]
    want = sorted([(a1 ** 2, w1), (a2 ** 2, w2)], reverse=True)
    for ln, (amp_sq, w) in zip(sorted(lines, key=lambda ln: ln.omega_osc),
                               sorted(want, key=lambda v: v[1])):
        assert abs(ln.omega_osc - w) < 1e-3
        assert math.isclose(ln.amp_sq, amp_sq, rel_tol=2e-3)


def test_spectral_lines_needs_uniform_grid():
    t = np.sort(np.random.default_rng(0).uniform(0, 10, 64))
    with pytest.raises(ModelError):
        drive.spectral_lines(np.ones(64), t)


def test_scan_power_sums_bounded():
    p = presets.scan_params(0.1)
    scan = drive.resonance_scan(p, 1, np.linspace(-1.2, 0.2, 6))
    sums = scan.power_sums()
    assert np.all(sums <= 1.005) and np.all(sums > 0.95)


def test_perturbative_shift_sign_and_size():
    p = presets.scan_params(0.1)
    s0, s1 = drive.perturbative_shift(p, 1, 5.0)
    assert s0 > 0 > s1 and s0 == -s1
    assert math.isclose(s0, 0.01 / 5 + 0.01 / 6, rel_tol=1e-12)
    with pytest.raises(ModelError):
        drive.perturbative_shift(p, 1, 0.0)


def test_far_detuned_line_displacement():
    p = presets.scan_params(0.1)
    measured = drive.far_detuned_displacement(p, 1, 5.0)
    predicted = drive.perturbative_shift(p, 1, 5.0)[1]
    assert abs(measured - predicted) < 0.01 * abs(predicted)


@pytest.mark.parametrize("x", [10.0, 20.0, 40.0])
def test_minor_component_falls_like_coupling_over_detuning(x):
    p = presets.scan_params(0.1)
    ratio = drive.minor_component(p, 1, x) * x / 0.1
    assert abs(ratio - 1.0) < 0.01


def test_gap_detection_small_and_large_coupling():
    grid = presets.SCAN_GRID
    small = drive.resonance_scan(presets.scan_params(0.1), 1, grid)
    for xr in (0.0, -1.0):
        fit = drive.anticrossing_gap(small, xr)
        assert fit.detected and abs(fit.gap - 0.2) < 0.01
        assert abs(fit.vertex - xr) < 0.05
    large = drive.resonance_scan(presets.scan_params(0.5), 1, grid)
    assert not any(drive.anticrossing_gap(large, xr).detected for xr in (0.0, -1.0))
