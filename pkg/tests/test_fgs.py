import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qitelab.diagnostics import spectrum
from qitelab.fgs import (
    CovarianceMatrix,
    GhfConfig,
    MajoranaPolynomialEnergy,
    covariance_from_density,
    covariance_from_state,
    density_from_covariance,
    ghf_energy,
    ghf_minimize,
    mean_field_matrix,
    occupation_covariance,
    pfaffian,
    pfaffian_batch,
    pfaffian_gradient_batch,
    pure_projection,
    random_pure_covariance,
    slater_determinant,
    synthesize_fgs_state,
    vacuum_covariance,
    wick_expectation,
)
from qitelab.hamiltonians import build_fermi_hubbard, build_lattice, build_tfim
from qitelab.operators import MajoranaMonomial, StateVector, expectation, majorana_to_spin


def random_antisymmetric(n, rng):
    a = rng.standard_normal((n, n))
    return a - a.T


def test_pfaffian_four_by_four_formula():
    a = random_antisymmetric(4, np.random.default_rng(0))
    ref = a[0, 1] * a[2, 3] - a[0, 2] * a[1, 3] + a[0, 3] * a[1, 2]
    assert pfaffian(a) == pytest.approx(ref)


def test_pfaffian_of_vacuum_blocks():
    assert pfaffian(-vacuum_covariance(3).gamma) == pytest.approx(1.0)


@settings(max_examples=40)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_pfaffian_squares_to_determinant(half, seed):
    a = random_antisymmetric(2 * half, np.random.default_rng(seed))
    assert pfaffian(a) ** 2 == pytest.approx(np.linalg.det(a), rel=1e-9, abs=1e-9)


def test_pfaffian_batch_and_gradient():
    rng = np.random.default_rng(1)
    mats = np.array([random_antisymmetric(6, rng) for _ in range(5)])
    assert np.allclose(pfaffian_batch(mats), [pfaffian(m) for m in mats])
    grad = pfaffian_gradient_batch(mats)
    eps = 1e-6
    m = mats[0]
    d = np.zeros_like(m)
    d[1, 4], d[4, 1] = 1.0, -1.0
    fd = (pfaffian(m + eps * d) - pfaffian(m - eps * d)) / (2 * eps)
    assert (grad[0] * d).sum() / 2 == pytest.approx(fd, rel=1e-6)


def test_vacuum_and_occupation_covariances_match_states():
    L = 3
    assert np.allclose(covariance_from_state(StateVector.basis(L, 0)).gamma, vacuum_covariance(L).gamma)
    occ = covariance_from_state(StateVector.basis(L, 0b101)).gamma
    assert np.allclose(occ, occupation_covariance(L, [0, 2]).gamma)
    assert occupation_covariance(L, [0, 2]).parity() == 1
    assert occupation_covariance(L, [1]).parity() == -1


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10_000), st.sampled_from([1, -1]))
def test_synthesized_state_reproduces_covariance(L, seed, parity):
    cov = random_pure_covariance(L, np.random.default_rng(seed), parity)
    psi = synthesize_fgs_state(cov)
    assert np.isclose(np.linalg.norm(psi.amplitudes), 1.0)
    assert np.abs(covariance_from_state(psi).gamma - cov.gamma).max() < 1e-8
    assert cov.parity() == parity


def test_wick_against_statevector():
    rng = np.random.default_rng(2)
    cov = random_pure_covariance(3, rng)
    psi = synthesize_fgs_state(cov)
    for idx in [(0, 1), (1, 4), (0, 2, 3, 5), (1, 2, 3, 4)]:
        mono = MajoranaMonomial((-1j) ** (len(idx) // 2), idx)
        direct = expectation(majorana_to_spin(mono), psi)
        assert abs(wick_expectation(cov, mono) - direct) < 1e-10


def test_ghf_energy_matches_state_expectation():
    H = build_fermi_hubbard(build_lattice("ring", 2), 1.0, 2.0)
    E = MajoranaPolynomialEnergy.from_hamiltonian(H)
    cov = random_pure_covariance(4, np.random.default_rng(3))
    psi = synthesize_fgs_state(cov)
    ref = np.vdot(psi.amplitudes, H.sparse() @ psi.amplitudes).real
    assert ghf_energy(cov, E) == pytest.approx(ref, abs=1e-10)


def test_mean_field_matrix_is_energy_gradient():
    H = build_fermi_hubbard(build_lattice("ring", 2), 1.0, 2.0)
    E = MajoranaPolynomialEnergy.from_hamiltonian(H)
    rng = np.random.default_rng(4)
    g = random_pure_covariance(4, rng).gamma
    F = mean_field_matrix(g, E)
    D = random_antisymmetric(8, rng)
    eps = 1e-6
    fd = (ghf_energy(g + eps * D, E) - ghf_energy(g - eps * D, E)) / (2 * eps)
    assert np.trace(F.T @ D) / 4 == pytest.approx(fd, rel=1e-6)


def test_pure_projection_fixes_pure_states():
    g = random_pure_covariance(3, np.random.default_rng(5)).gamma
    out, deg = pure_projection(g)
    assert not deg and np.allclose(out, g)
    out, _ = pure_projection(0.7 * g + 0.01 * random_antisymmetric(6, np.random.default_rng(6)))
    assert CovarianceMatrix(out).is_pure()


def test_density_covariance_round_trip():
    rng = np.random.default_rng(7)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
    C = q[:, :2]
    rho = (C @ C.conj().T).T
    cov = covariance_from_density(rho)
    assert cov.is_pure()
    assert np.allclose(density_from_covariance(cov), rho)
    psi = slater_determinant(C)
    assert np.allclose(covariance_from_state(psi).gamma, cov.gamma, atol=1e-10)


def test_slater_determinant_of_unit_orbitals_is_basis_state():
    C = np.eye(4)[:, [1, 3]]
    psi = slater_determinant(C)
    assert abs(psi.amplitudes[0b1010]) == pytest.approx(1.0)


def test_save_load_round_trip(tmp_path):
    cov = random_pure_covariance(3, np.random.default_rng(8)).to_pq()
    cov.save(tmp_path / "g.txt")
    back = CovarianceMatrix.load(tmp_path / "g.txt")
    assert back.ordering == "pq" and np.array_equal(back.gamma, cov.gamma)


def test_rejects_non_antisymmetric():
    with pytest.raises(ValueError):
        CovarianceMatrix(np.eye(2))


def test_ghf_exact_for_quadratic_hamiltonian():
    # open-chain TFIM maps to free Majoranas, so the Gaussian optimum is exact
    H = build_tfim(build_lattice("chain", 6, False), None, 0.7)
    res = ghf_minimize(MajoranaPolynomialEnergy.from_hamiltonian(H), config=GhfConfig(restarts=4))
    assert res.energy == pytest.approx(spectrum(H).e0, abs=1e-7)
    assert res.gamma.is_pure(1e-8)


def test_hf_exact_for_free_fermions():
    g = build_lattice("ring", 6)
    H = build_fermi_hubbard(g, 1.0, 0.0)
    hop = np.zeros((6, 6))
    for i, j in g.edges:
        hop[i, j] = hop[j, i] = -1.0
    eps = np.linalg.eigvalsh(hop)
    # two electrons per spin fill the two lowest orbitals
    ref = 2 * eps[:2].sum()
    res = ghf_minimize(MajoranaPolynomialEnergy.from_hamiltonian(H), config=GhfConfig(restarts=2, n_electrons=4))
    assert res.energy == pytest.approx(ref, abs=1e-8)


def test_ghf_is_variational_and_deterministic():
    H = build_fermi_hubbard(build_lattice("ring", 3), 1.0, 4.0)
    E = MajoranaPolynomialEnergy.from_hamiltonian(H)
    a = ghf_minimize(E, config=GhfConfig(seed=3, restarts=2))
    b = ghf_minimize(E, config=GhfConfig(seed=3, restarts=2))
    assert a.energy == b.energy and np.array_equal(a.gamma.gamma, b.gamma.gamma)
    assert a.energy >= spectrum(H, sector=False).e0 - 1e-9
    assert len(a.summary_rows()) == 2
