import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qitelab.diagnostics import (
    fidelity,
    multiref_diagnostic,
    mutual_information,
    orbital_rdm,
    reorder_modes,
    spectrum,
    von_neumann_entropy,
)
from qitelab.hamiltonians import build_fermi_hubbard, build_heisenberg, build_lattice, build_tfim
from qitelab.operators import StateVector


def random_state(n, rng):
    v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return StateVector(v / np.linalg.norm(v))


def singlet_pair():
    # (c0up^dag c1dn^dag - c0dn^dag c1up^dag)|vac> on two orbitals
    v = np.zeros(16, dtype=complex)
    v[0b1001] = 1 / np.sqrt(2)
    v[0b0110] = -1 / np.sqrt(2)
    return StateVector(v)


def test_dense_and_lanczos_agree():
    H = build_heisenberg(build_lattice("ring", 8), J=1.0, B=0.1)
    a = spectrum(H, 3, method="dense")
    b = spectrum(H, 3, method="lanczos")
    assert np.allclose(a.energies[:2], b.energies[:2], atol=1e-9)
    assert fidelity(a.ground_state, b.ground_state) == pytest.approx(1.0, abs=1e-8)
    assert a.residuals[0] < 1e-8 and a.gap == pytest.approx(a.e1 - a.e0)


def test_degenerate_ground_state_flagged():
    # XX on two sites has the two-fold ground level -1
    res = spectrum(build_tfim(build_lattice("chain", 2, False), None, 0.0))
    assert res.e0 == pytest.approx(-1.0) and res.degenerate


def test_sector_spectrum_ground_state_lives_in_sector():
    H = build_fermi_hubbard(build_lattice("ring", 4), 1.0, 4.0)
    res = spectrum(H)
    idx = np.flatnonzero(np.abs(res.ground_state.amplitudes) > 1e-12)
    assert np.all(np.bitwise_count(idx) == 4)
    full = spectrum(H, sector=False, k=8)
    assert res.e0 >= full.e0 - 1e-9


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(0, 2 * math.pi))
def test_fidelity_properties(seed, phase):
    rng = np.random.default_rng(seed)
    a, b = random_state(3, rng), random_state(3, rng)
    f = fidelity(a, b)
    assert 0.0 <= f <= 1.0
    assert f == pytest.approx(fidelity(b, a))
    assert fidelity(a, StateVector(np.exp(1j * phase) * a.amplitudes)) == pytest.approx(1.0)


def test_fidelity_dimension_mismatch():
    with pytest.raises(ValueError):
        fidelity(StateVector.basis(2, 0), StateVector.basis(3, 0))


def test_single_orbital_rdm_against_partial_trace():
    psi = random_state(6, np.random.default_rng(1))
    # orbital 0 owns the two lowest bits, so no reordering signs arise
    m = psi.amplitudes.reshape(16, 4)
    ref = m.T @ m.conj()
    assert np.allclose(orbital_rdm(psi, [0]), ref)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([[0], [2], [0, 1], [2, 0]]))
def test_orbital_rdm_is_density_matrix(seed, orbs):
    rho = orbital_rdm(random_state(6, np.random.default_rng(seed)), orbs)
    assert rho.shape == (4 ** len(orbs),) * 2
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.allclose(rho, rho.conj().T)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_reorder_modes_signs():
    v = np.zeros(4)
    v[0b11] = 1.0
    assert reorder_modes(v, 2, [1, 0])[0b11] == -1.0
    v = np.zeros(4)
    v[0b01] = 1.0
    assert reorder_modes(v, 2, [1, 0])[0b10] == 1.0
    with pytest.raises(ValueError):
        reorder_modes(v, 2, [0, 0])


def test_singlet_mutual_information():
    psi = singlet_pair()
    I = mutual_information(psi)
    assert I[0, 1] == pytest.approx(2 * math.log(2))
    assert mutual_information(psi, half=True)[0, 1] == pytest.approx(math.log(2))
    assert multiref_diagnostic(psi) == pytest.approx(0.5)


def test_determinant_has_no_correlation():
    psi = StateVector.basis(6, 0b000111)
    assert np.allclose(mutual_information(psi), 0.0)
    assert multiref_diagnostic(psi) == pytest.approx(0.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_mutual_information_symmetric_nonnegative(seed):
    I = mutual_information(random_state(6, np.random.default_rng(seed)))
    assert np.allclose(I, I.T)
    assert np.all(I >= 0) and np.all(np.diag(I) == 0)
    assert np.all(I <= 4 * math.log(4) + 1e-9)


def test_entropy_of_maximally_mixed():
    assert von_neumann_entropy(np.eye(4) / 4) == pytest.approx(math.log(4))
    assert von_neumann_entropy(np.diag([1.0, 0.0])) == 0.0


def test_rdm_input_checks():
    psi = random_state(4, np.random.default_rng(2))
    with pytest.raises(ValueError):
        orbital_rdm(psi, [0, 0])
    with pytest.raises(ValueError):
        orbital_rdm(psi, [])
    with pytest.raises(ValueError):
        mutual_information(psi, n_orbitals=3)
