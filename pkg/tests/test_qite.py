import math
from functools import reduce
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qitelab.diagnostics import spectrum
from qitelab.evolution import trotterized_ite
from qitelab.hamiltonians import (
    build_fermi_hubbard,
    build_heisenberg,
    build_lattice,
    build_tfim,
    make_trotter_schedule,
)
from qitelab.operators import SpinOperator, StateVector
from qitelab.qite import (
    QiteConfig,
    SolverConfig,
    _FermionGroup,
    _fermion_system,
    build_domain_system,
    build_linear_system,
    estimate_running_time,
    fermionic_basis,
    fermionic_domain,
    molecular_domain,
    pauli_expectations,
    pauli_matrix,
    plan_domains,
    qite_evolve,
    reduced_density_matrix,
    required_manhattan_distance,
    solve_for_a,
    spin_basis,
)

PAULI = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0, -1.0]),
}


def random_state(n, rng):
    v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return StateVector(v / np.linalg.norm(v))


def random_density(k, rng):
    m = rng.standard_normal((2**k, 2**k)) + 1j * rng.standard_normal((2**k, 2**k))
    rho = m @ m.conj().T
    return rho / np.trace(rho)


def lexicographic_paulis(k):
    # word[0] acts on the low bit and is also the slowest-varying letter
    return [reduce(np.kron, [PAULI[c] for c in reversed(w)]) for w in product("IXYZ", repeat=k)]


@settings(max_examples=20)
@given(st.integers(1, 3), st.integers(0, 10_000))
def test_pauli_expectations_match_traces(k, seed):
    rho = random_density(k, np.random.default_rng(seed))
    ref = [np.trace(rho @ P) for P in lexicographic_paulis(k)]
    assert np.allclose(pauli_expectations(rho), ref, atol=1e-12)


def test_pauli_matrix_inverts_expectations():
    rho = random_density(3, np.random.default_rng(0))
    assert np.allclose(pauli_matrix(pauli_expectations(rho)) / 8, rho)


def test_spin_basis_size_and_cap():
    b = spin_basis((3, 5))
    assert len(b) == 16 and b[0].factors == ()
    with pytest.raises(ValueError):
        spin_basis(range(8))


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("doubles", ["inclusive", "strict"])
def test_fermionic_basis_counts(d, doubles):
    pairs = math.comb(d, 2) if doubles == "strict" else math.comb(d + 1, 2)
    expected = d * (d - 1) + pairs**2 - pairs
    basis = fermionic_basis(tuple(range(d)), d, doubles)
    assert len(basis) == expected
    g = build_lattice("ring", d)
    H = build_fermi_hubbard(g, 1.0, 1.0)
    plan = plan_domains(H, d, geometry=g, doubles=doubles)
    assert plan.groups[0].basis_size == expected


def test_fermionic_generators_hermitian_and_nonzero():
    for op in fermionic_basis((0, 1, 2), 3):
        m = op.to_dense(6)
        assert np.allclose(m, m.conj().T)
        assert np.abs(m).max() > 0


def test_single_qubit_step_is_y_rotation():
    # h = Z on |+>: exp(-dtau Z)|+> is reached by exp(-i dtau Y), so a_Y = 1
    plus = StateVector(np.array([1, 1]) / np.sqrt(2))
    sys = build_domain_system(plus, (0,), SpinOperator.from_pauli("Z0"))
    a = solve_for_a(sys)
    assert np.allclose(a, [0, 0, 1, 0], atol=1e-10)


def test_domain_system_uses_four_to_the_d_expectations():
    psi = random_state(5, np.random.default_rng(1))
    counter = {}
    build_domain_system(psi, (0, 2, 3), SpinOperator.from_pauli("X0 X2"), counter)
    assert counter["expectations"] == 64


def test_domain_system_matches_explicit_basis():
    rng = np.random.default_rng(2)
    psi = random_state(4, rng)
    h = SpinOperator.from_pauli("X1 X2", 0.7) + SpinOperator.from_pauli("Z1", 0.3)
    fast = build_domain_system(psi, (1, 2), h)
    slow = build_linear_system(spin_basis((1, 2)), h, psi)
    assert np.allclose(fast.dense(), slow.S, atol=1e-12)
    assert np.allclose(fast.b, slow.b, atol=1e-12)


def test_solvers_agree_on_minimal_norm_solution():
    rng = np.random.default_rng(3)
    psi = random_state(4, rng)
    h = SpinOperator.from_pauli("X0 X1", 1.0) + SpinOperator.from_pauli("Z1", 0.5)
    sols = []
    for method in ("cg", "svd", "spectral"):
        sys = build_domain_system(psi, (0, 1, 2), h)
        sols.append(solve_for_a(sys, SolverConfig(method=method)))
        assert sys.residual < 1e-7 * np.linalg.norm(sys.b)
    assert np.allclose(sols[0], sols[1], atol=1e-7)
    assert np.allclose(sols[0], sols[2], atol=1e-7)


def test_reduced_density_matrix_of_product_state():
    # qubit 1 in |1>, others |0>
    psi = StateVector.basis(3, 0b010)
    rho = reduced_density_matrix(psi.amplitudes, 3, (1, 2))
    assert rho[1, 1] == pytest.approx(1.0)


def test_fermionic_system_matches_explicit_basis():
    g = build_lattice("ring", 3)
    H = build_fermi_hubbard(g, 1.0, 2.0)
    plan = plan_domains(H, 1, geometry=g)
    grp = plan.groups[0]
    fg = _FermionGroup(H, grp, None, {})
    psi = random_state(6, np.random.default_rng(4))
    fast = _fermion_system(fg, psi.amplitudes)
    h = reduce(lambda a, b: a + b, [H.term_spin(l) for l in grp.members])
    slow = build_linear_system(fermionic_basis(grp.domain, 3), h, psi)
    assert np.allclose(fast.S, slow.S, atol=1e-12)
    assert np.allclose(fast.b, slow.b, atol=1e-12)


def test_spin_domains_on_ring():
    g = build_lattice("ring", 10)
    plan = plan_domains(build_heisenberg(g, J=1.0), 1, geometry=g)
    assert plan.groups[0].domain == (0, 1, 2, 9)
    assert plan.max_domain() == 4
    # every bond gets its own domain on a ring
    assert plan.n_groups == 10 and all(len(gr.members) == 1 for gr in plan.groups)
    assert "basis_size" in plan.dump()


def test_large_nu_clamps_to_system():
    g = build_lattice("ring", 4)
    plan = plan_domains(build_tfim(g, None, 1.0), 9, geometry=g)
    assert plan.n_groups == 1 and plan.groups[0].domain == (0, 1, 2, 3)


def test_fermionic_domain_tie_breaking():
    g = build_lattice("ring", 10)
    assert fermionic_domain(g, (0, 1), 2, np.random.default_rng(0)) == (0, 1, 2, 9)
    picks = {fermionic_domain(g, (0,), 1, np.random.default_rng(s)) for s in range(20)}
    assert picks == {(0, 1), (0, 9)}
    a = plan_domains(build_fermi_hubbard(g, 1.0, 1.0), 1, geometry=g, seed=5)
    b = plan_domains(build_fermi_hubbard(g, 1.0, 1.0), 1, geometry=g, seed=5)
    assert a == b


def test_molecular_domain_picks_largest_mutual_information():
    mi = np.zeros((5, 5))
    mi[0, 3] = mi[3, 0] = 0.9
    mi[1, 4] = mi[4, 1] = 0.5
    mi[0, 2] = mi[2, 0] = 0.1
    assert molecular_domain(mi, (0, 1), 1) == (0, 1, 3)
    assert molecular_domain(mi, (0, 1), 2) == (0, 1, 3, 4)
    # ties go to the lower index
    assert molecular_domain(np.zeros((4, 4)), (2,), 1) == (0, 2)


def test_full_domain_qite_converges_to_ite_at_first_order():
    g = build_lattice("ring", 4)
    H = build_heisenberg(g, J=1.0, B=0.2)
    psi = random_state(4, np.random.default_rng(5))
    gaps = []
    for dt in (0.02, 0.01):
        n = round(1 / dt)
        ite, _ = trotterized_ite(H, make_trotter_schedule(H, dt, n), psi)
        tr, _ = qite_evolve(H, plan_domains(H, 4, geometry=g), QiteConfig(dtau=dt, n_steps=n, nu=4), psi)
        gaps.append(np.abs(tr.energies[:: n // 4] - ite.energies[:: n // 4]).max())
    assert 0.4 < gaps[1] / gaps[0] < 0.6


def test_larger_domains_track_ite_more_closely():
    g = build_lattice("ring", 6)
    H = build_heisenberg(g, J=1.0)
    psi = StateVector.basis(6, 0b010101)
    ite, _ = trotterized_ite(H, make_trotter_schedule(H, 0.05, 40), psi)
    gaps = []
    for nu in (0, 1, 2):
        tr, _ = qite_evolve(H, plan_domains(H, nu, geometry=g), QiteConfig(dtau=0.05, n_steps=40, nu=nu), psi)
        gaps.append(np.abs(tr.energies - ite.energies).max())
    assert gaps[0] > gaps[1] > gaps[2]


def test_fermionic_qite_closed_shell_hubbard():
    g = build_lattice("ring", 4)
    H = build_fermi_hubbard(g, 1.0, 2.0)
    gs = spectrum(H)
    psi = StateVector.basis(8, 0b00001111)
    ite, _ = trotterized_ite(H, make_trotter_schedule(H, 0.05, 60), psi, gs.ground_state)
    tr, _ = qite_evolve(H, plan_domains(H, 2, geometry=g), QiteConfig(dtau=0.05, n_steps=60, nu=2), psi, gs.ground_state)
    assert np.abs(tr.energies - ite.energies).max() < 1e-2
    assert tr.final.fidelity > 0.99


def test_fermionic_qite_keeps_spin_multiplet_weights():
    # the neel determinant is half singlet, half triplet; spin-adapted generators cannot change that
    g = build_lattice("ring", 2)
    H = build_fermi_hubbard(g, 1.0, 2.0)
    gs = spectrum(H)
    tr, _ = qite_evolve(H, plan_domains(H, 1, geometry=g), QiteConfig(dtau=0.05, n_steps=60, nu=1), StateVector.basis(4, 0b1001), gs.ground_state)
    assert tr.final.fidelity == pytest.approx(0.5, abs=1e-6)


def test_spin_cap_enforced():
    g = build_lattice("ring", 8)
    H = build_tfim(g, None, 1.0)
    plan = plan_domains(H, 3, geometry=g)
    with pytest.raises(ValueError):
        qite_evolve(H, plan, QiteConfig(nu=3, spin_cap=7), StateVector.basis(8, 0))


def test_zero_steps_return_initial_state():
    g = build_lattice("ring", 4)
    H = build_tfim(g, None, 1.0)
    psi = random_state(4, np.random.default_rng(6))
    tr, out = qite_evolve(H, plan_domains(H, 1, geometry=g), QiteConfig(n_steps=0), psi)
    assert len(tr.rows) == 1 and np.allclose(out.amplitudes, psi.amplitudes)


def test_planning_formulas():
    assert required_manhattan_distance(1.0, 10, 10, 2 * math.sqrt(2)) == pytest.approx(2 * math.log(100))
    assert estimate_running_time(3, 4, 0.5, 2, 1) == pytest.approx(12 * math.exp(1.0))
    with pytest.raises(ValueError):
        required_manhattan_distance(1.0, 0, 1, 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        QiteConfig(dtau=0.0)
    with pytest.raises(ValueError):
        plan_domains(build_tfim(build_lattice("ring", 3), None, 1.0), 1, geometry=None)
