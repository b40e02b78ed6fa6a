import math

import numpy as np
import pytest

from trion_dyn import presets
from trion_dyn.dissipation import relaxation_rates, thermal_factors
from trion_dyn.lindblad import (HamiltonianKind, build_generator, compare_to_dyadics,
                                evolve_rho, pure_density, steady_state, validate_density)
from trion_dyn.model import ModelError, StateVector, Truncation

WARM = presets.equivalence_params(finite_T=True)


def test_liouvillian_agrees_with_rhs():
    tr = Truncation(1, 1)
    gen = build_generator(WARM, tr)
    rng = np.random.default_rng(1)
    rho = rng.normal(size=(tr.dim, tr.dim)) + 1j * rng.normal(size=(tr.dim, tr.dim))
    via_L = (gen.liouvillian() @ rho.reshape(-1)).reshape(tr.dim, tr.dim)
    assert np.allclose(via_L, gen.rhs(0.0, rho), atol=1e-13)


def test_generator_is_trace_preserving():
    tr = Truncation(2, 1)
    gen = build_generator(WARM, tr)
    L = gen.liouvillian()
    # sum_m L[(m,m), :] = 0  <=>  d tr(rho)/dt = 0 for every rho
    diag_rows = [m * tr.dim + m for m in range(tr.dim)]
    assert np.max(np.abs(L[diag_rows].sum(axis=0))) < 1e-14


@pytest.mark.parametrize("params", [presets.equivalence_params(False), WARM])
def test_gamma_diagonal_equals_rate_table(params):
    tr = Truncation(2, 2)
    Gamma = build_generator(params, tr).Gamma
    g = np.real(np.diagonal(Gamma))
    r = relaxation_rates(params, tr).as_vector()
    # sqrt(n)^2 from the ladder products may differ from n in the last bit
    nz = r != 0
    assert np.max(np.abs(g[nz] - r[nz]) / r[nz]) < 1e-15
    assert np.all(g[~nz] == 0)
    assert np.count_nonzero(Gamma - np.diag(np.diagonal(Gamma))) == 0


def test_evolution_keeps_a_valid_density():
    tr = Truncation(1, 1)
    gen = build_generator(WARM, tr)
    init = StateVector.basis(tr, 0, 0, 1)
    ser = evolve_rho(gen, init, np.linspace(0, 20, 21))
    assert np.max(np.abs(ser.traces() - 1)) < 1e-9
    for rho in ser.rho:
        validate_density(rho, tol=1e-9)


def test_zero_temperature_relaxes_to_ground():
    tr = Truncation(1, 1)
    gen = build_generator(presets.equivalence_params(False), tr)
    rho = steady_state(gen)
    assert math.isclose(rho[0, 0].real, 1.0, abs_tol=1e-10)


def test_uncoupled_steady_state_is_thermal():
    # With eta = 0 every mode relaxes to its own Gibbs state.
    tr = Truncation(1, 1)
    p = WARM.with_(eta=0.0)
    rho = steady_state(build_generator(p, tr))
    f = thermal_factors(p)
    pop = np.real(np.diagonal(rho))
    up = pop[tr.index(0, 0, 1)] / pop[tr.index(0, 0, 0)]
    assert math.isclose(up, f.N1 / f.N0, rel_tol=1e-9)
    # hard cutoff: a two-level truncated oscillator has ratio nbar/(nbar+1)
    ph = pop[tr.index(0, 1, 0)] / pop[tr.index(0, 0, 0)]
    assert math.isclose(ph, f.nbar_omega / (f.nbar_omega + 1), rel_tol=1e-9)


def test_time_dependent_kinds_need_photon_fermion_space():
    with pytest.raises(ModelError):
        build_generator(presets.control_params(), Truncation(1, 1), HamiltonianKind.CLASSICAL_PUMP)
    gen = build_generator(presets.control_params(), Truncation(0, 1),
                          HamiltonianKind.CLASSICAL_PUMP)
    H = gen.hamiltonian(0.3)
    assert np.allclose(H, H.conj().T)
    with pytest.raises(ModelError):
        gen.liouvillian()


def test_invalid_density_rejected():
    tr = Truncation(1, 1)
    gen = build_generator(WARM, tr)
    bad = np.eye(tr.dim) * 2 / tr.dim
    bad[0, 1] = 1.0
    with pytest.raises(ModelError):
        evolve_rho(gen, bad, [0.0, 1.0])


def test_compare_to_dyadics_checks_grids():
    tr = Truncation(1, 1)
    gen = build_generator(WARM, tr)
    ser = evolve_rho(gen, StateVector.basis(tr, 0, 0, 1), [0.0, 1.0])
    assert compare_to_dyadics(ser, ser.times, ser.rho) == 0.0
    with pytest.raises(ModelError):
        compare_to_dyadics(ser, np.array([0.0, 2.0]), ser.rho)


def test_pure_density_convention():
    tr = Truncation(1, 1)
    v = StateVector.from_mapping(tr, {(0, 0, 1): 1.0, (1, 1, 0): 1j}, normalize=True)
    rho = pure_density(v)
    i, j = tr.index(0, 0, 1), tr.index(1, 1, 0)
    # rho[a, b] = C_a C_b^*
    assert np.isclose(rho[i, j], v[(0, 0, 1)] * np.conj(v[(1, 1, 0)]))
