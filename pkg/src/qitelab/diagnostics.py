"""Exact-diagonalization oracle, fidelities and orbital entanglement measures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .hamiltonians import ProblemHamiltonian, sector_basis
from .operators import StateVector

DENSE_MAX_QUBITS = 12
LANCZOS_MAX_QUBITS = 22
ENTROPY_CUTOFF = 1e-14


@dataclass(frozen=True)
class SpectrumResult:
    """Lowest eigenpairs of a Hamiltonian.

    Attributes
    ----------
    energies : ndarray
        Sorted lowest eigenvalues.
    ground_state : StateVector
        Eigenvector of ``energies[0]`` on the full register.
    method : str
        ``"dense"`` or ``"lanczos"``.
    residuals : ndarray
        ``||H v - E v||`` for each returned pair.
    degenerate : bool
        True when ``E1 - E0 < 1e-10``.
    sector : tuple or None
        ``(n_electrons, 2 S_z)`` for fermionic problems solved in a sector.
    """

    energies: np.ndarray
    ground_state: StateVector
    method: str
    residuals: np.ndarray
    degenerate: bool
    sector: tuple[int, int | None] | None = None

    @property
    def e0(self) -> float:
        return float(self.energies[0])

    @property
    def e1(self) -> float:
        return float(self.energies[1])

    @property
    def gap(self) -> float:
        return float(self.energies[1] - self.energies[0])


def _real_if_possible(mat):
    if mat.dtype.kind == "c" and (mat.nnz == 0 or abs(mat.imag).max() == 0.0):
        return mat.real
    return mat


def spectrum(
    H: ProblemHamiltonian,
    k: int = 2,
    *,
    method: str | None = None,
    sector: bool = True,
    seed: int = 7,
    tol: float = 1e-12,
) -> SpectrumResult:
    """Lowest ``k`` eigenpairs of ``H``.

    Parameters
    ----------
    method : {"dense", "lanczos"}, optional
        Defaults to dense up to 12 qubits (or sector dimension 4096) and
        Lanczos above.
    sector : bool
        For fermionic Hamiltonians with a recorded electron count, restrict
        to that particle-number and spin sector.
    seed : int
        Seeds the Lanczos start vector.
    """
    n = H.n_qubits
    basis = None
    sec = None
    if H.kind == "fermionic" and sector and H.n_electrons is not None:
        basis = sector_basis(H.n_sites, H.n_electrons, H.sz2)
        sec = (H.n_electrons, H.sz2)
    dim = 2**n if basis is None else len(basis)
    if dim > 2**LANCZOS_MAX_QUBITS:
        raise ValueError(f"dimension {dim} too large for exact diagonalization")
    mat = _real_if_possible(H.sparse(basis))
    if method is None:
        method = "dense" if dim <= 2**DENSE_MAX_QUBITS else "lanczos"
    k = min(max(k, 2), dim)
    if method == "dense":
        w, v = sla.eigh(mat.toarray(), subset_by_index=[0, k - 1])
    elif method == "lanczos":
        v0 = np.random.default_rng(seed).standard_normal(dim)
        kk = min(k, dim - 1)
        w, v = spla.eigsh(mat, k=kk, which="SA", v0=v0, tol=tol, maxiter=20 * dim)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(w)
    w, v = w[order], v[:, order]
    res = np.linalg.norm(mat @ v - v * w, axis=0)
    scale = max(1.0, float(np.abs(w).max()))
    if res[0] > 1e-8 * scale:
        raise RuntimeError(f"eigensolver residual {res[0]:.2e} exceeds tolerance")
    g = v[:, 0].astype(complex)
    # fix the global phase so the largest amplitude is real positive
    j = int(np.argmax(np.abs(g)))
    g = g * (abs(g[j]) / g[j])
    if basis is not None:
        full = np.zeros(2**n, dtype=complex)
        full[basis] = g
        g = full
    g /= np.linalg.norm(g)
    return SpectrumResult(
        energies=np.asarray(w, dtype=float),
        ground_state=StateVector(g),
        method=method,
        residuals=res,
        degenerate=bool(w[1] - w[0] < 1e-10),
        sector=sec,
    )


def fidelity(psi: StateVector, phi: StateVector) -> float:
    """Squared overlap ``|<psi|phi>|^2``."""
    a = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi)
    b = phi.amplitudes if isinstance(phi, StateVector) else np.asarray(phi)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(min(1.0, abs(np.vdot(a, b)) ** 2))


# ---------------------------------------------------------------------------
# Orbital reduced density matrices


def _reorder_indices(idx: np.ndarray, n_modes: int, order: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    # new basis index and fermionic sign for each old basis index in idx
    occ = [(idx >> m) & 1 for m in order]
    new_idx = np.zeros_like(idx)
    for k, o in enumerate(occ):
        new_idx |= o << k
    inversions = np.zeros_like(idx)
    for a in range(n_modes):
        for b in range(a + 1, n_modes):
            if order[a] > order[b]:
                inversions += occ[a] & occ[b]
    return new_idx, 1 - 2 * (inversions & 1)


def reorder_modes(vec: np.ndarray, n_modes: int, order: Sequence[int]) -> np.ndarray:
    """Relabel fermionic modes so that new mode ``k`` is old mode ``order[k]``.

    Amplitudes pick up the sign of the permutation restricted to occupied
    modes, which is what reordering creation operators in a Fock state costs.
    """
    order = list(order)
    if sorted(order) != list(range(n_modes)):
        raise ValueError("order must be a permutation of all modes")
    idx = np.flatnonzero(vec)
    new_idx, sign = _reorder_indices(idx, n_modes, order)
    out = np.zeros_like(vec)
    out[new_idx] = vec[idx] * sign
    return out


def orbital_rdm(psi: StateVector, orbitals: Sequence[int]) -> np.ndarray:
    """Reduced density matrix of one or two spatial orbitals.

    Orbital ``p`` owns modes ``(2p, 2p + 1)``. The result lives on the
    occupation basis of the listed orbitals' modes, in the listed order, with
    bit ``2k`` / ``2k + 1`` the up / down occupation of ``orbitals[k]``.
    """
    orbitals = list(orbitals)
    if not 1 <= len(orbitals) <= 2 or len(set(orbitals)) != len(orbitals):
        raise ValueError("orbital subset must contain one or two distinct orbitals")
    n_modes = psi.n_qubits
    if n_modes % 2:
        raise ValueError("state must have an even number of modes")
    keep = [m for p in orbitals for m in (2 * p, 2 * p + 1)]
    rest = [m for m in range(n_modes) if m not in keep]
    vec = psi.amplitudes
    idx = np.flatnonzero(vec)
    new_idx, sign = _reorder_indices(idx, n_modes, keep + rest)
    k = len(keep)
    # first k modes are the low bits of the new index
    m = np.zeros((2 ** (n_modes - k), 2**k), dtype=complex)
    m[new_idx >> k, new_idx & (2**k - 1)] = vec[idx] * sign
    rho = m.T @ m.conj()
    return 0.5 * (rho + rho.conj().T)


def von_neumann_entropy(rho: np.ndarray) -> float:
    """``-sum w ln w`` over eigenvalues above 1e-14."""
    w = np.linalg.eigvalsh(rho)
    w = w[w > ENTROPY_CUTOFF]
    return float(-(w * np.log(w)).sum())


def orbital_entropies(psi: StateVector) -> tuple[np.ndarray, np.ndarray]:
    """Single-orbital entropies ``s_i`` and two-orbital entropies ``s_ij``."""
    L = psi.n_qubits // 2
    s1 = np.array([von_neumann_entropy(orbital_rdm(psi, [i])) for i in range(L)])
    s2 = np.zeros((L, L))
    for i in range(L):
        for j in range(i + 1, L):
            s2[i, j] = s2[j, i] = von_neumann_entropy(orbital_rdm(psi, [i, j]))
    return s1, s2


def mutual_information(psi: StateVector, n_orbitals: int | None = None, *, half: bool = False) -> np.ndarray:
    """Orbital mutual information ``I(i, j) = s_i + s_j - s_ij`` (zero diagonal).

    Parameters
    ----------
    half : bool
        Multiply by 1/2, the normalization common in orbital-entanglement
        analyses of DMRG wavefunctions. Domain selection is unaffected.
    """
    L = psi.n_qubits // 2
    if n_orbitals is not None and n_orbitals != L:
        raise ValueError(f"state has {L} orbitals, not {n_orbitals}")
    s1, s2 = orbital_entropies(psi)
    I = s1[:, None] + s1[None, :] - s2
    np.fill_diagonal(I, 0.0)
    if half:
        I *= 0.5
    return np.clip(I, 0.0, None)


def multiref_diagnostic(psi: StateVector, n_orbitals: int | None = None) -> float:
    """``Z_s(1) = sum_i s_i / (L ln 4)``, 0 for a determinant."""
    L = psi.n_qubits // 2
    if n_orbitals is not None and n_orbitals != L:
        raise ValueError(f"state has {L} orbitals, not {n_orbitals}")
    s1 = [von_neumann_entropy(orbital_rdm(psi, [i])) for i in range(L)]
    return float(sum(s1) / (L * math.log(4.0)))
