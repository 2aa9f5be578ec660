import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from qitelab.operators import (
    FermionOperator,
    MajoranaMonomial,
    PauliString,
    SpinOperator,
    StateVector,
    apply_exp_hermitian,
    apply_local_matrix,
    apply_pauli_string,
    expectation,
    fermion_sparse,
    jordan_wigner,
    local_matrix,
    majorana_to_spin,
    pauli_product,
    pauli_to_majorana,
)

I2 = np.eye(2)
PX = np.array([[0, 1], [1, 0]], dtype=complex)
PY = np.array([[0, -1j], [1j, 0]])
PZ = np.diag([1.0 + 0j, -1.0])
LETTER = {"X": PX, "Y": PY, "Z": PZ}


def kron_matrix(s: PauliString, n: int) -> np.ndarray:
    # qubit 0 is the least significant bit, so it is the rightmost factor
    facs = s.as_dict()
    m = np.eye(1)
    for q in reversed(range(n)):
        m = np.kron(m, LETTER[facs[q]] if q in facs else I2)
    return s.phase * m


def random_state(n, rng):
    v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return StateVector(v / np.linalg.norm(v))


pauli_strings = st.builds(
    lambda letters: PauliString(tuple((q, c) for q, c in enumerate(letters) if c != "I")),
    st.lists(st.sampled_from("IXYZ"), min_size=4, max_size=4),
)


def test_x_flips_bit():
    out = apply_pauli_string(PauliString.parse("X0"), StateVector.basis(1, 0))
    assert np.allclose(out.amplitudes, [0, 1])


def test_identity_string_leaves_state():
    psi = random_state(3, np.random.default_rng(0))
    out = apply_pauli_string(PauliString(), psi)
    assert np.allclose(out.amplitudes, psi.amplitudes)


def test_z_phase_flip():
    plus = StateVector(np.array([1, 1]) / np.sqrt(2))
    out = apply_pauli_string(PauliString.parse("Z0"), plus)
    assert np.allclose(out.amplitudes, np.array([1, -1]) / np.sqrt(2))


def test_single_qubit_products():
    p = pauli_product(PauliString.parse("X0"), PauliString.parse("Y0"))
    assert p.factors == ((0, "Z"),) and p.phase == 1j
    p = pauli_product(PauliString.parse("X0"), PauliString.parse("X0"))
    assert p.factors == () and p.phase == 1


def test_two_qubit_product_against_matrices():
    a, b = PauliString.parse("X0 Z1"), PauliString.parse("Y0")
    p = pauli_product(a, b)
    assert p.factors == ((0, "Z"), (1, "Z")) and p.phase == 1j
    assert np.allclose(kron_matrix(p, 2), kron_matrix(a, 2) @ kron_matrix(b, 2))


@given(pauli_strings, pauli_strings)
def test_product_matches_matrix_product(a, b):
    p = pauli_product(a, b)
    assert np.array_equal(kron_matrix(p, 4), kron_matrix(a, 4) @ kron_matrix(b, 4))


def test_expectation_basic():
    assert expectation(SpinOperator.from_pauli("Z0"), StateVector.basis(1, 0)) == pytest.approx(1.0)
    plus = StateVector(np.array([1, 1]) / np.sqrt(2))
    assert expectation(SpinOperator.from_pauli("X0"), plus) == pytest.approx(1.0)


def test_expectation_random_hermitian_matches_dense():
    rng = np.random.default_rng(1)
    terms = []
    for _ in range(12):
        letters = rng.choice(list("IXYZ"), size=3)
        s = PauliString(tuple((q, c) for q, c in enumerate(letters) if c != "I"))
        terms.append((rng.standard_normal(), s))
    op = SpinOperator(tuple(terms))
    psi = random_state(3, rng)
    dense = sum(c * kron_matrix(s, 3) for c, s in terms)
    ref = np.vdot(psi.amplitudes, dense @ psi.amplitudes)
    assert abs(expectation(op, psi) - ref) < 1e-12


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.integers(0, 1000))
def test_expectation_linear_and_merge_invariant(coeffs, seed):
    rng = np.random.default_rng(seed)
    psi = random_state(2, rng)
    strings = [PauliString.parse("X0 Y1"), PauliString.parse("Z1"), PauliString.parse("X0 Y1")]
    op = SpinOperator(tuple(zip(coeffs, strings)))
    parts = sum(c * expectation(SpinOperator.from_pauli(s), psi) for c, s in zip(coeffs, strings))
    assert abs(expectation(op, psi) - parts) < 1e-12
    assert abs(expectation(op.canonical(), psi) - expectation(op, psi)) < 1e-12


def test_jordan_wigner_number_operator():
    op = jordan_wigner(FermionOperator.number(0), 1)
    assert np.allclose(op.to_dense(1), (np.eye(2) - PZ) / 2)


def test_jordan_wigner_hopping():
    hop = FermionOperator.hopping(0, 1) + FermionOperator.hopping(1, 0)
    op = jordan_wigner(hop, 2)
    ref = (kron_matrix(PauliString.parse("X0 X1"), 2) + kron_matrix(PauliString.parse("Y0 Y1"), 2)) / 2
    assert np.allclose(op.to_dense(2), ref)


def test_orbital_excitation_diagonal():
    op = jordan_wigner(FermionOperator.excitation(0, 0), 2)
    Z0 = kron_matrix(PauliString.parse("Z0"), 2)
    Z1 = kron_matrix(PauliString.parse("Z1"), 2)
    assert np.allclose(op.to_dense(2), (np.eye(4) - Z0) / 2 + (np.eye(4) - Z1) / 2)


def test_jordan_wigner_anticommutation():
    n = 4
    c = [jordan_wigner(FermionOperator.ladder(p, False), n).to_dense(n) for p in range(n)]
    cd = [jordan_wigner(FermionOperator.ladder(p, True), n).to_dense(n) for p in range(n)]
    for p in range(n):
        for q in range(n):
            assert np.allclose(c[p] @ cd[q] + cd[q] @ c[p], np.eye(2**n) * (p == q))
            assert np.allclose(c[p] @ c[q] + c[q] @ c[p], 0)


def test_fermion_sparse_matches_jordan_wigner():
    rng = np.random.default_rng(3)
    op = FermionOperator(
        tuple(
            (rng.standard_normal(), ((int(a), True), (int(b), True), (int(c), False), (int(d), False)))
            for a, b, c, d in rng.integers(0, 4, size=(6, 4))
        )
    )
    assert np.allclose(fermion_sparse(op, 4).toarray(), jordan_wigner(op, 4).to_dense(4))


def test_pauli_to_majorana_cases():
    m = pauli_to_majorana(PauliString.parse("Z0"), 1)
    assert m.indices == (0, 1) and m.coefficient == -1j
    m = pauli_to_majorana(PauliString(), 3)
    assert m.indices == () and m.coefficient == 1
    m = pauli_to_majorana(PauliString.parse("X0"), 1)
    assert m.indices == (0,) and m.coefficient == 1


@given(pauli_strings)
def test_majorana_round_trip(s):
    mono = pauli_to_majorana(s, 4)
    assert np.allclose(majorana_to_spin(mono).to_dense(4), kron_matrix(s, 4))


def test_hermitian_majorana_coefficient():
    # -i a0 a1 = Z0 is Hermitian with unit coefficient
    assert MajoranaMonomial(-1j, (0, 1)).hermitian_coefficient() == pytest.approx(1.0)


def test_exp_zero_scale():
    psi = random_state(2, np.random.default_rng(4))
    out, nrm = apply_exp_hermitian(SpinOperator.from_pauli("X0 Z1"), 0.0, psi)
    assert nrm == pytest.approx(1.0)
    assert np.allclose(out.amplitudes, psi.amplitudes)


def test_exp_diagonal_imaginary_time():
    dt = 0.3
    plus = StateVector(np.array([1, 1]) / np.sqrt(2))
    out, _ = apply_exp_hermitian(SpinOperator.from_pauli("Z0"), -dt, plus)
    ref = np.array([np.exp(-dt), np.exp(dt)])
    assert np.allclose(out.amplitudes, ref / np.linalg.norm(ref), atol=1e-12)


def test_exp_rotation_matches_expm():
    dt = 0.7
    plus = StateVector(np.array([1, 1]) / np.sqrt(2))
    out, nrm = apply_exp_hermitian(SpinOperator.from_pauli("Y0"), -1j * dt, plus)
    ref = sla.expm(-1j * dt * PY) @ plus.amplitudes
    assert np.allclose(out.amplitudes, ref, atol=1e-12)
    assert nrm == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30)
@given(st.floats(-3, 3), st.integers(0, 10_000))
def test_unitary_exp_preserves_norm(dt, seed):
    rng = np.random.default_rng(seed)
    op = SpinOperator(((rng.standard_normal(), PauliString.parse("X0 Y2")), (rng.standard_normal(), PauliString.parse("Z1"))))
    _, nrm = apply_exp_hermitian(op, -1j * dt, random_state(3, rng))
    assert abs(nrm - 1.0) < 1e-12


def test_non_hermitian_generator_rejected():
    with pytest.raises(ValueError):
        apply_exp_hermitian(SpinOperator.from_pauli("X0", 1j), -0.1, StateVector.basis(1, 0))


def test_local_matrix_application_matches_full():
    rng = np.random.default_rng(5)
    n = 4
    sites = (3, 1)
    op = SpinOperator(((0.7, PauliString.parse("X1 Y3")), (0.2, PauliString.parse("Z3"))))
    psi = random_state(n, rng)
    out = apply_local_matrix(psi.amplitudes, n, sites, local_matrix(op, sites))
    assert np.allclose(out, op.to_dense(n) @ psi.amplitudes)
