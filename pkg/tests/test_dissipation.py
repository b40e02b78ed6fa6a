import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trion_dyn.dissipation import (NoiseKind, NoiseModel, NoiseModelError, bose,
                                   classical_pump_rates, noise_correlator, psd_factor,
                                   relaxation_rate, relaxation_rates, thermal_factors)
from trion_dyn.model import SystemParams, Truncation
from trion_dyn import presets

COLD = presets.equivalence_params(finite_T=False)
WARM = presets.equivalence_params(finite_T=True)


def test_thermal_factors_of_the_warm_preset():
    f = thermal_factors(WARM)
    assert math.isclose(f.nbar_omega, 0.2, rel_tol=1e-13)
    assert math.isclose(f.nbar_Omega, 0.2, rel_tol=1e-13)
    assert math.isclose(f.N1, 0.1, rel_tol=1e-13)
    assert math.isclose(f.N0, 0.9, rel_tol=1e-13)


def test_zero_temperature_limits():
    f = thermal_factors(COLD)
    assert (f.N0, f.N1, f.nbar_omega, f.nbar_Omega) == (1.0, 0.0, 0.0, 0.0)
    assert bose(1.0, 0.0) == 0.0
    # exp(-1e4) underflows cleanly instead of overflowing 1/expm1
    assert bose(1.0, 1e-4) == 0.0


# Hand-computed amplitude rates: gamma=0.2, mu_omega=mu_Omega=0.1.
FROZEN_COLD = {(0, 0, 1): 0.1, (1, 1, 0): 0.1, (1, 0, 0): 0.05, (0, 0, 0): 0.0,
               (2, 1, 1): 0.5 * (0.2 + 0.1 + 0.2)}
FROZEN_WARM = {(0, 0, 1): 0.5 * (0.18 + 0.02 + 0.02),
               (1, 1, 0): 0.5 * (0.02 + 0.1 * (0.4 + 1.2) * 2),
               (0, 0, 0): 0.5 * (0.02 + 0.02 + 0.02)}


@pytest.mark.parametrize("params,table", [(COLD, FROZEN_COLD), (WARM, FROZEN_WARM)])
def test_untruncated_rates_frozen(params, table):
    for key, want in table.items():
        assert math.isclose(relaxation_rate(params, *key), want, rel_tol=1e-12, abs_tol=1e-15)


def test_hard_cutoff_drops_absorption_at_the_top_rung():
    tr = Truncation(1, 1)
    r = relaxation_rates(WARM, tr)
    # |1,1,0> is the top rung of both modes: only emission terms remain
    want = 0.5 * (0.02 + 0.1 * 1.2 + 0.1 * 1.2)
    assert math.isclose(r[(1, 1, 0)], want, rel_tol=1e-12)
    # below the cutoff the table agrees with the untruncated formula
    big = relaxation_rates(WARM, Truncation(3, 3))
    assert math.isclose(big[(1, 1, 0)], relaxation_rate(WARM, 1, 1, 0), rel_tol=1e-12)


def test_rate_vector_follows_basis_order():
    tr = Truncation(2, 1)
    r = relaxation_rates(WARM, tr)
    vec = r.as_vector()
    for i, key in enumerate(tr.states()):
        assert vec[i] == r[key]


def test_classical_rates_have_no_phonon_part():
    cr = classical_pump_rates(WARM, 2)
    assert math.isclose(cr[(0, 1)], 0.5 * (0.18 + 0.02), rel_tol=1e-12)


def _random_density(dim, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    X = A @ A.conj().T
    return X / np.trace(X).real


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from(list(NoiseKind)))
def test_correlator_balances_the_norm(seed, kind):
    tr = Truncation(1, 1)
    X = _random_density(tr.dim, seed)
    g = relaxation_rates(WARM, tr).as_vector()
    D = noise_correlator(NoiseModel.for_system(kind, WARM, tr), g, X)
    loss = 2.0 * float(np.sum(g * np.real(np.diagonal(X))))
    if kind is NoiseKind.FROZEN_POPULATIONS:
        assert np.allclose(np.diagonal(D).real, 2 * g * np.diagonal(X).real)
    else:
        # trace of the gain equals the trace of the decay
        assert math.isclose(np.trace(D).real, loss, rel_tol=1e-12, abs_tol=1e-15)
    assert np.allclose(D, D.conj().T)
    assert np.linalg.eigvalsh(D).min() > -1e-12


def test_zero_t_sink_feeds_the_ground_state():
    tr = Truncation(1, 1)
    X = _random_density(tr.dim, 3)
    g = relaxation_rates(COLD, tr).as_vector()
    D = noise_correlator(NoiseModel.for_system(NoiseKind.ZERO_T_SINK, COLD, tr), g, X)
    assert np.count_nonzero(D) == 1 and D[0, 0].real > 0


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_psd_factor_reconstructs(seed):
    D = _random_density(4, seed)
    L = psd_factor(D)
    assert np.allclose(L @ L.conj().T, D, atol=1e-12)


def test_psd_factor_clips_roundoff_and_rejects_negatives():
    D = np.diag([1.0, -1e-14]).astype(complex)
    L = psd_factor(D)
    assert np.allclose(L @ L.conj().T, np.diag([1.0, 0.0]))
    with pytest.raises(NoiseModelError):
        psd_factor(np.diag([1.0, -1e-6]).astype(complex))
    with pytest.raises(NoiseModelError):
        psd_factor(np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex))
