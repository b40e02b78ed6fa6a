import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from trion_dyn.closed import (RwaBlock, anticrossing_diagram, block_eigensystem, block_matrix,
                              block_propagator, confluent_propagator, evolve_block,
                              evolve_closed, exact_propagator, make_block, rwa_matrix,
                              rwa_structure)
from trion_dyn.lindblad import HamiltonianKind, build_generator
from trion_dyn.model import Branch, ModelError, StateVector, SystemParams, Truncation

P = SystemParams(W=30.0, omega=20.0, Omega=10.0, eta=0.7 * np.exp(0.4j))

finite = dict(allow_nan=False, allow_infinity=False)


def test_block_rabi_scaling():
    assert math.isclose(make_block(P, 2, 3).rabi, 0.7 * math.sqrt(6))
    m = P.with_(resonance_branch=Branch.MINUS)
    assert math.isclose(make_block(m, 2, 3).rabi, 0.7 * math.sqrt(9))
    with pytest.raises(ModelError):
        make_block(P, 0, 1)


@pytest.mark.parametrize("kind,branch", [(HamiltonianKind.RWA_PLUS, Branch.PLUS),
                                         (HamiltonianKind.RWA_MINUS, Branch.MINUS)])
def test_block_assembly_matches_kron_hamiltonian(kind, branch):
    p = P.with_(resonance_branch=branch)
    tr = Truncation(3, 2)
    H_blocks = rwa_matrix(p, tr)
    H_kron = build_generator(p, tr, kind).H_static
    assert np.allclose(H_blocks, H_kron, atol=1e-14)


@given(st.floats(-5, 5, **finite), st.floats(0, 3, **finite), st.floats(0, 2 * math.pi),
       st.floats(0, 1, **finite), st.floats(0, 1, **finite))
def test_eigensystem_matches_numeric(delta, r, phase, g1, g2):
    blk = RwaBlock(1, 1, r * np.exp(1j * phase), 3.0, delta)
    eig = block_eigensystem(blk, (g1, g2))
    ref = np.linalg.eigvals(block_matrix(blk, (g1, g2)))
    for lam in (eig.lambda_1, eig.lambda_2):
        assert np.min(np.abs(ref - lam)) < 1e-7


@settings(max_examples=50)
@given(st.floats(-4, 4, **finite), st.floats(0, 3, **finite), st.floats(0, 2 * math.pi),
       st.floats(0, 0.5, **finite), st.floats(0, 0.5, **finite), st.floats(0, 5, **finite))
def test_block_propagator_matches_expm(delta, r, phase, g1, g2, t):
    blk = RwaBlock(1, 1, r * np.exp(1j * phase), 3.0, delta)
    eig = block_eigensystem(blk, (g1, g2))
    U = block_propagator(eig, t)
    assert np.allclose(U, expm(-block_matrix(blk, (g1, g2)) * t), atol=1e-8)


def test_exceptional_point_uses_confluent_form():
    # |R| = |g2 - g1|/2 at Delta = 0 makes the block defective
    blk = RwaBlock(1, 1, 0.25 + 0j, 2.0, 0.0)
    eig = block_eigensystem(blk, (0.0, 0.5))
    assert eig.jordan
    t = np.linspace(0, 6, 13)
    ref = np.array([expm(-eig.matrix * s) for s in t])
    assert np.allclose(block_propagator(eig, t), ref, atol=1e-12)
    assert np.allclose(confluent_propagator(eig.matrix, t), ref, atol=1e-12)


@settings(max_examples=30)
@given(st.floats(-3, 3, **finite), st.floats(0.01, 3, **finite), st.floats(0, 20, **finite))
def test_closed_block_is_unitary(delta, r, t):
    blk = RwaBlock(1, 1, r, 5.0, delta)
    c = evolve_block(blk, block_eigensystem(blk), (0.6, 0.8j), [t])[0]
    assert abs(np.vdot(c, c).real - 1.0) < 1e-12


def test_resonant_rabi_frozen():
    tr = Truncation(1, 1)
    init = StateVector.basis(tr, 0, 0, 1)
    t = np.linspace(0, 10, 1001)
    obs = evolve_closed(P, init, t).observables()
    r = 0.7
    assert np.max(np.abs(obs[:, 0] - (2 - np.cos(2 * r * t)))) < 1e-12
    assert np.max(np.abs(obs[:, 1] - 0.5 * (1 + np.cos(2 * r * t)))) < 1e-12


def test_evolve_closed_matches_expm_on_random_state():
    tr = Truncation(3, 3)
    rng = np.random.default_rng(5)
    v = rng.normal(size=tr.dim) + 1j * rng.normal(size=tr.dim)
    init = StateVector(tr, v / np.linalg.norm(v))
    p = P.with_(W=29.0)  # off resonance
    t = [0.0, 0.3, 2.7]
    got = evolve_closed(p, init, t).amplitudes
    H = build_generator(p, tr).H_static
    ref = np.array([expm(-1j * H * s) @ init.amplitudes for s in t])
    assert np.allclose(got, ref, atol=1e-11)


def test_exact_propagator_matches_expm():
    tr = Truncation(2, 2)
    rates = np.linspace(0.0, 0.3, tr.dim)
    prop = exact_propagator(P, tr, 0.37, rates)
    H = rwa_matrix(P, tr) - 1j * np.diag(rates)
    assert np.allclose(prop.matrix(tr.dim), expm(-1j * H * 0.37), atol=1e-12)


def test_structure_spectators():
    st_ = rwa_structure(P, Truncation(1, 1))
    # |1,1,0> <-> |0,0,1> is the only PLUS block in (1,1)
    assert len(st_.blocks) == 1
    assert len(st_.spectators) == 6


@given(st.floats(-30, 30, **finite))
def test_anticrossing_separation(d):
    diag = anticrossing_diagram(P, (1, 1), [d * 0.7])
    assert math.isclose(diag.separation[0], math.sqrt(d * d + 4.0), rel_tol=1e-10)


def test_unnormalised_initial_rejected():
    tr = Truncation(1, 1)
    with pytest.raises(ModelError):
        evolve_closed(P, StateVector(tr, np.ones(tr.dim)), [0.0, 1.0])
