"""Quantum imaginary time evolution (QITE).

Each factor ``exp(-dtau h[l])`` of a trotterized imaginary-time step is
replaced by a unitary ``exp(-i dtau A[l])`` acting on a domain ``D_l`` that
contains the support of ``h[l]``. ``A[l]`` is expanded in a basis of
Hermitian operators on the domain and its coefficients solve
``S a = -b`` with ``S_IJ = <{s_I, s_J}>`` and ``b_I = i <[s_I, h[l]]>``.

Spin systems use all ``4^|D|`` Pauli strings on the domain. Fermionic
systems use the singles and doubles generators ``i(E_pq - E_qp)`` and
``i(E_pq E_rs - E_sr E_qp)`` restricted to the domain orbitals. Doubles run
over ``p <= r, q <= s`` by default, which keeps the pair excitations
``E_pq E_pq``; ``doubles="strict"`` uses ``p < r, q < s`` only. These
generators commute with the total spin, so the weights of the spin multiplets
in the initial state never change: start from a spin eigenstate such as a
closed-shell determinant.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .evolution import EvolutionTrace
from .hamiltonians import LatticeGraph, ProblemHamiltonian, sector_basis
from .operators import (
    FermionOperator,
    PauliString,
    SpinOperator,
    StateVector,
    apply_local_matrix,
    apply_spin_operator,
    fermion_sparse,
    jordan_wigner,
    local_matrix,
    taylor_expm_apply,
)

log = logging.getLogger(__name__)

SPIN_DOMAIN_CAP = 7

_DOUBLES = ("inclusive", "strict")


def _basis_name(doubles: str) -> str:
    return "singles-doubles" if doubles == "inclusive" else "singles-doubles-strict"


# ---------------------------------------------------------------------------
# Domains


@dataclass(frozen=True)
class GroupedTerm:
    """Hamiltonian terms that share one domain.

    Attributes
    ----------
    members : tuple of int
        Indices of the original terms, in order of appearance.
    support : tuple of int
        Union of the member supports.
    domain : tuple of int
        Sites (spins) or spatial orbitals (fermions), sorted.
    majoranas : tuple of int
        Majorana indices ``4p .. 4p + 3`` of the domain orbitals (fermions only).
    basis : {"pauli", "singles-doubles", "singles-doubles-strict"}
    """

    members: tuple[int, ...]
    support: tuple[int, ...]
    domain: tuple[int, ...]
    majoranas: tuple[int, ...] = ()
    basis: str = "pauli"

    @property
    def basis_size(self) -> int:
        d = len(self.domain)
        if self.basis == "pauli":
            return 4**d
        pairs = math.comb(d, 2) if self.basis.endswith("strict") else math.comb(d + 1, 2)
        return d * (d - 1) + pairs**2 - pairs


@dataclass(frozen=True)
class DomainPlan:
    """Grouped terms with their domains for one Hamiltonian."""

    groups: tuple[GroupedTerm, ...]
    nu: int
    kind: str
    seed: int | None = None

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def max_domain(self) -> int:
        return max(len(g.domain) for g in self.groups)

    def group_of_term(self) -> dict[int, int]:
        return {t: i for i, g in enumerate(self.groups) for t in g.members}

    def dump(self) -> str:
        """Human-readable table: term, support, domain, basis size."""
        lines = [f"# domain plan: kind={self.kind} nu={self.nu} seed={self.seed} groups={self.n_groups}"]
        lines.append("group\tterms\tsupport\tdomain\tbasis\tbasis_size")
        for i, g in enumerate(self.groups):
            lines.append(
                f"{i}\t{','.join(map(str, g.members))}\t{','.join(map(str, g.support))}\t"
                f"{','.join(map(str, g.domain))}\t{g.basis}\t{g.basis_size}"
            )
        return "\n".join(lines) + "\n"


def spin_domain(g: LatticeGraph, support: Sequence[int], nu: int) -> tuple[int, ...]:
    """All sites within Manhattan distance ``nu`` of the support."""
    D = g.distances[list(support)]
    return tuple(int(i) for i in np.flatnonzero((D <= nu).any(axis=0)))


def fermionic_domain(g: LatticeGraph, support: Sequence[int], nu: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Support plus the ``nu`` sites nearest to it, ties broken at random."""
    support = sorted(set(int(s) for s in support))
    rest = [i for i in range(g.n_sites) if i not in support]
    if not rest or nu <= 0:
        return tuple(support)
    dist = g.distances[support][:, rest].min(axis=0)
    keys = rng.random(len(rest))
    order = np.lexsort((keys, dist))
    chosen = [rest[i] for i in order[:nu]]
    return tuple(sorted(support + chosen))


def molecular_domain(mi: np.ndarray, support: Sequence[int], nu: int) -> tuple[int, ...]:
    """Support plus the ``nu`` orbitals ``q`` with the largest ``max_{p in S} I(p, q)``.

    Ties go to the lower orbital index.
    """
    support = sorted(set(int(s) for s in support))
    rest = [q for q in range(mi.shape[0]) if q not in support]
    if not rest or nu <= 0:
        return tuple(support)
    score = mi[np.ix_(support, rest)].max(axis=0)
    order = sorted(range(len(rest)), key=lambda i: (-score[i], rest[i]))
    return tuple(sorted(support + [rest[i] for i in order[:nu]]))


def _term_orbitals(H: ProblemHamiltonian, l: int) -> tuple[int, ...]:
    return tuple(sorted(set(H.terms[l].support)))


def plan_domains(
    H: ProblemHamiltonian,
    nu: int,
    *,
    geometry: LatticeGraph | None = None,
    mutual_information: np.ndarray | None = None,
    seed: int = 0,
    doubles: str = "inclusive",
) -> DomainPlan:
    """Domains for every term, grouped by identical domain.

    Spin Hamiltonians need ``geometry``. Fermionic lattice Hamiltonians take
    ``geometry`` and ``seed`` (tie-breaking), molecular ones a
    ``mutual_information`` matrix. Groups keep the order in which their first
    member appears. A ``nu`` exceeding the system clamps to the full system.
    ``doubles`` (``"inclusive"`` or ``"strict"``) selects the fermionic
    doubles set, see :func:`fermionic_basis`.
    """
    if nu < 0:
        raise ValueError("nu must be non-negative")
    if doubles not in _DOUBLES:
        raise ValueError(f"doubles must be one of {_DOUBLES}")
    rng = np.random.default_rng(seed)
    domains = []
    for l in range(H.n_terms):
        S = _term_orbitals(H, l)
        if H.kind == "spin":
            if geometry is None:
                raise ValueError("spin Hamiltonians need a lattice geometry")
            D = spin_domain(geometry, S, nu)
        elif mutual_information is not None:
            D = molecular_domain(np.asarray(mutual_information), S, nu)
        elif geometry is not None:
            D = fermionic_domain(geometry, S, nu, rng)
        else:
            raise ValueError("fermionic Hamiltonians need a geometry or a mutual-information matrix")
        domains.append(D)
    index: dict[tuple[int, ...], int] = {}
    members: list[list[int]] = []
    for l, D in enumerate(domains):
        if D not in index:
            index[D] = len(members)
            members.append([])
        members[index[D]].append(l)
    basis = "pauli" if H.kind == "spin" else _basis_name(doubles)
    groups = []
    for D, i in index.items():
        supp = tuple(sorted(set().union(*(H.terms[l].support for l in members[i]))))
        maj = tuple(4 * p + k for p in D for k in range(4)) if H.kind == "fermionic" else ()
        groups.append(GroupedTerm(tuple(members[i]), supp, D, maj, basis))
    return DomainPlan(tuple(groups), nu, H.kind, seed if H.kind == "fermionic" else None)


# ---------------------------------------------------------------------------
# Bases

_LETTERS = "IXYZ"
_XZ = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


@lru_cache(maxsize=16)
def _pauli_index_tables(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Local ``(x, z)`` masks of the lexicographic Pauli basis on ``k`` sites."""
    xs = np.zeros(4**k, dtype=np.int64)
    zs = np.zeros(4**k, dtype=np.int64)
    for i, word in enumerate(product(_LETTERS, repeat=k)):
        for b, letter in enumerate(word):
            x, z = _XZ[letter]
            xs[i] |= x << b
            zs[i] |= z << b
    return xs, zs


def spin_basis(domain: Sequence[int], cap: int = SPIN_DOMAIN_CAP) -> list[PauliString]:
    """All ``4^|D|`` Pauli strings on the domain, identity first.

    Lexicographic in the letters ``I < X < Y < Z`` with the first domain
    site as the most significant position.
    """
    domain = tuple(domain)
    k = len(domain)
    if k > cap:
        raise ValueError(
            f"domain of {k} sites needs {4**k} Pauli strings and a {4**k}x{4**k} Gram matrix; cap is {cap}"
        )
    out = []
    for word in product(_LETTERS, repeat=k):
        out.append(PauliString.from_dict({s: c for s, c in zip(domain, word) if c != "I"}))
    return out


def _singles_doubles(domain: Sequence[int], doubles: str = "inclusive") -> list[tuple[tuple[int, ...], FermionOperator]]:
    E = FermionOperator.excitation
    strict = doubles == "strict"
    gens = []
    for p in domain:
        for q in domain:
            if p != q:
                gens.append(((p, q), (E(p, q) - E(q, p)) * 1j))
    for p in domain:
        for r in domain:
            if p > r or (strict and p == r):
                continue
            for q in domain:
                for s in domain:
                    if q > s or (strict and q == s) or (p == q and r == s):
                        continue
                    op = (E(p, q) * E(r, s) - E(s, r) * E(q, p)) * 1j
                    gens.append(((p, q, r, s), op))
    return gens


@lru_cache(maxsize=256)
def _fermionic_basis_cached(domain: tuple[int, ...], n_orbitals: int, doubles: str) -> tuple[SpinOperator, ...]:
    return tuple(jordan_wigner(op, 2 * n_orbitals) for _, op in _singles_doubles(domain, doubles))


def fermionic_basis(domain: Sequence[int], n_orbitals: int, doubles: str = "inclusive") -> list[SpinOperator]:
    """Jordan-Wigner images of the singles and doubles generators on the domain.

    Singles ``i(E_pq - E_qp)`` for ordered ``p != q``. Doubles
    ``i(E_pq E_rs - E_sr E_qp)`` for ``p <= r``, ``q <= s`` (``"inclusive"``)
    or ``p < r``, ``q < s`` (``"strict"``), skipping ``p = q, r = s`` where
    the generator vanishes.
    """
    if doubles not in _DOUBLES:
        raise ValueError(f"doubles must be one of {_DOUBLES}")
    return list(_fermionic_basis_cached(tuple(domain), n_orbitals, doubles))


# ---------------------------------------------------------------------------
# Linear systems


def pauli_expectations(rho: np.ndarray) -> np.ndarray:
    """``Tr(rho s_I)`` for every Pauli string of the lexicographic basis.

    Uses ``Tr(M X^x Z^z i^{|x&z|}) = i^{|x&z|} sum_j M[j, j^x] (-1)^{j.z}``,
    a Walsh-Hadamard transform per ``x``.
    """
    dim = rho.shape[0]
    k = dim.bit_length() - 1
    had, xor, cols, phase = _transform_tables(k)
    d = rho[cols, xor]  # d[x, j] = rho[j, j^x]
    t = d @ had  # t[x, z]
    xs, zs = _pauli_index_tables(k)
    return phase * t[xs, zs]


@lru_cache(maxsize=16)
def _transform_tables(k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # Hadamard matrix, xor table, column indices and i^{|x&z|} phases for k sites
    dim = 2**k
    j = np.arange(dim)
    xs, zs = _pauli_index_tables(k)
    return sla.hadamard(dim), j[None, :] ^ j[:, None], np.broadcast_to(j[None, :], (dim, dim)), 1j ** np.bitwise_count(xs & zs)


def pauli_matrix(coeffs: np.ndarray) -> np.ndarray:
    """``sum_I a_I s_I`` as a dense matrix, inverse of :func:`pauli_expectations`."""
    n = len(coeffs)
    k = (n.bit_length() - 1) // 2
    dim = 2**k
    xs, zs = _pauli_index_tables(k)
    had, xor, cols, phase = _transform_tables(k)
    c = np.zeros((dim, dim), dtype=complex)
    c[xs, zs] = coeffs * phase
    col = c @ had  # col[x, j] = A[j^x, j]
    A = np.zeros((dim, dim), dtype=complex)
    A[xor, cols] = col
    return A


@dataclass
class LinearSystem:
    """``S a = -b`` for one grouped term.

    For Pauli bases ``S`` is applied matrix-free through the reduced density
    matrix ``rho`` of the domain (``S a <-> Tr(s_I {A, rho})``); ``dense()``
    builds it explicitly for small domains.
    """

    b: np.ndarray
    dim: int
    matvec: object
    S: np.ndarray | None = None
    rho: np.ndarray | None = None
    h_local: np.ndarray | None = None
    n_expectations: int = 0
    solution: np.ndarray | None = None
    residual: float = float("nan")
    method: str = ""
    fallback: bool = False

    def dense(self) -> np.ndarray:
        if self.S is None:
            if self.dim > 4096:
                raise ValueError(f"refusing to build a {self.dim}x{self.dim} Gram matrix")
            self.S = np.column_stack([self.matvec(e) for e in np.eye(self.dim)])
            self.S = 0.5 * (self.S + self.S.T)
        return self.S


def reduced_density_matrix(vec: np.ndarray, n_qubits: int, sites: Sequence[int]) -> np.ndarray:
    """Qubit reduced density matrix on ``sites`` (``sites[0]`` is the low bit)."""
    k = len(sites)
    axes = [n_qubits - 1 - q for q in reversed(sites)]
    t = np.moveaxis(vec.reshape((2,) * n_qubits), axes, range(k)).reshape(2**k, -1)
    return t @ t.conj().T


def build_spin_system(rho_expect: np.ndarray, h_local: np.ndarray) -> LinearSystem:
    """System for a Pauli basis from the ``4^k`` domain expectations.

    ``rho_expect[I] = <s_I>``; ``h_local`` is the term on the domain.
    """
    n = len(rho_expect)
    dim = int(round(math.sqrt(n)))
    rho = pauli_matrix(rho_expect) / dim
    rho = 0.5 * (rho + rho.conj().T)
    b = pauli_expectations(1j * (h_local @ rho - rho @ h_local)).real

    def matvec(a):
        A = pauli_matrix(np.asarray(a, dtype=float))
        return pauli_expectations(A @ rho + rho @ A).real

    return LinearSystem(b=b, dim=n, matvec=matvec, rho=rho, h_local=h_local, n_expectations=n)


def build_linear_system(basis, h, psi: StateVector) -> LinearSystem:
    """Gram matrix and right-hand side for an explicit operator basis.

    Parameters
    ----------
    basis : sequence of PauliString or SpinOperator
        Hermitian basis operators.
    h : SpinOperator
    psi : StateVector

    Pauli bases that cover all strings on a domain go through the
    ``4^|D|``-expectation route; other bases through the products
    ``s_I s_J`` directly.
    """
    ops = [SpinOperator.from_pauli(s) if isinstance(s, PauliString) else s for s in basis]
    n = psi.n_qubits
    v = psi.amplitudes
    phi = np.array([apply_spin_operator(op, v, n) for op in ops])
    hv = apply_spin_operator(h, v, n)
    gram = phi.conj() @ phi.T
    S = 2.0 * gram.real
    b = -2.0 * (phi.conj() @ hv).imag
    return LinearSystem(b=b, dim=len(ops), matvec=lambda a: S @ a, S=S, n_expectations=len(ops) ** 2)


def build_domain_system(psi: StateVector, domain: Sequence[int], h: SpinOperator, counter: dict | None = None) -> LinearSystem:
    """Pauli-basis system on ``domain`` using exactly ``4^|D|`` expectations."""
    domain = tuple(domain)
    rho = reduced_density_matrix(psi.amplitudes, psi.n_qubits, domain)
    expect = pauli_expectations(rho)
    if counter is not None:
        counter["expectations"] = counter.get("expectations", 0) + len(expect)
    return build_spin_system(expect.real, local_matrix(h, domain))


@dataclass(frozen=True)
class SolverConfig:
    """``method`` is ``"cg"``, ``"svd"`` or ``"spectral"``."""

    method: str = "cg"
    tol: float = 1e-10
    maxiter: int | None = None
    svd_cutoff: float = 1e-8


def _spectral_solution(sys: LinearSystem, cutoff: float) -> np.ndarray:
    # exact pseudo-inverse of A -> {A, rho} in the eigenbasis of rho
    p, U = np.linalg.eigh(sys.rho)
    p = np.clip(p, 0.0, None)
    ht = U.conj().T @ sys.h_local @ U
    den = p[:, None] + p[None, :]
    keep = den > cutoff * max(p.max(), 1e-300)
    ratio = np.where(keep, (p[:, None] - p[None, :]) / np.where(keep, den, 1.0), 0.0)
    At = 1j * ratio * ht
    A = U @ At @ U.conj().T
    return pauli_expectations(A).real / sys.rho.shape[0]


def solve_for_a(sys: LinearSystem, config: SolverConfig | None = None) -> np.ndarray:
    """Minimal-norm solution of ``S a = -b``.

    ``"cg"`` runs conjugate gradients from zero, which stays in the range of
    ``S`` and therefore converges to the minimal-norm solution; on failure
    it falls back to a truncated SVD (or, for matrix-free Pauli systems too
    large to build, the spectral pseudo-inverse) and sets ``sys.fallback``.
    ``"spectral"`` is available for Pauli systems only.
    """
    cfg = config or SolverConfig()
    rhs = -np.asarray(sys.b, dtype=float)
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        a = np.zeros(sys.dim)
        sys.solution, sys.residual, sys.method = a, 0.0, cfg.method
        return a
    method = cfg.method
    a = None
    if method == "cg":
        op = spla.LinearOperator((sys.dim, sys.dim), matvec=sys.matvec, dtype=float)
        maxiter = cfg.maxiter or 10 * sys.dim
        a, info = spla.cg(op, rhs, rtol=cfg.tol, atol=0.0, maxiter=maxiter)
        res = np.linalg.norm(sys.matvec(a) - rhs)
        if info != 0 or not np.isfinite(res) or res > 1e3 * cfg.tol * bnorm:
            log.info("CG did not converge (info=%s, residual %.2e); falling back", info, res)
            sys.fallback = True
            method = "spectral" if (sys.rho is not None and sys.dim > 4096) else "svd"
            a = None
    if a is None and method == "svd":
        S = sys.dense()
        U, s, Vt = np.linalg.svd(S)
        keep = s > cfg.svd_cutoff * s.max()
        a = Vt[keep].T @ ((U[:, keep].T @ rhs) / s[keep])
    elif a is None and method == "spectral":
        if sys.rho is None:
            raise ValueError("spectral solver needs a Pauli-basis system")
        a = _spectral_solution(sys, cfg.svd_cutoff)
    elif a is None:
        raise ValueError(f"unknown solver {cfg.method!r}")
    sys.solution = a
    sys.residual = float(np.linalg.norm(sys.matvec(a) - rhs))
    sys.method = method
    return a


# ---------------------------------------------------------------------------
# Evolution


@dataclass(frozen=True)
class QiteConfig:
    """Settings of a QITE run.

    Attributes
    ----------
    dtau : float
    n_steps : int
    nu : int
        Manhattan distance defining the domains.
    solver : SolverConfig
    seed : int
        Tie-breaking seed for fermionic lattice domains.
    spin_cap : int
        Largest spin domain accepted.
    record_every : int
    """

    dtau: float = 0.1
    n_steps: int = 100
    nu: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    spin_cap: int = SPIN_DOMAIN_CAP
    record_every: int = 1

    def __post_init__(self):
        if not self.dtau > 0:
            raise ValueError("dtau must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")


class _SpinGroup:
    def __init__(self, H: ProblemHamiltonian, group: GroupedTerm):
        self.domain = group.domain
        op = SpinOperator(())
        for l in group.members:
            op = op + H.term_spin(l)
        self.h = op.canonical()
        self.h_local = local_matrix(self.h, self.domain)


class _FermionGroup:
    def __init__(self, H: ProblemHamiltonian, group: GroupedTerm, basis_idx, cache: dict):
        self.domain = group.domain
        n = H.n_modes
        h = None
        for l in group.members:
            m = H.term_sparse(l, basis_idx)
            h = m if h is None else h + m
        self.h = h.tocsr()
        doubles = "strict" if group.basis.endswith("strict") else "inclusive"
        gens = []
        for key, op in _singles_doubles(self.domain, doubles):
            if key not in cache:
                m = fermion_sparse(op * -1j, n, basis_idx).tocsr()  # real antisymmetric R with G = i R
                if m.nnz and abs(m.data.imag).max() > 1e-12:
                    raise RuntimeError("generator is not purely imaginary")
                cache[key] = sp.csr_matrix(m.real)
            gens.append(cache[key])
        self.n_gens = len(gens)
        self.dim = self.h.shape[0]
        if not gens:
            # a one-orbital domain has no generators, so the factor is skipped
            self.stacked = sp.csr_matrix((0, self.dim))
            self.pattern = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
            self.coef_map = sp.csr_matrix((0, 0))
            return
        # phi = R_mu v for every mu in one product
        self.stacked = sp.vstack(gens, format="csr")
        # sum_mu a_mu R_mu shares the union sparsity pattern; its data is a linear map of a
        coo = [g.tocoo() for g in gens]
        rows = np.concatenate([c.row for c in coo]).astype(np.int64)
        cols = np.concatenate([c.col for c in coo]).astype(np.int64)
        vals = np.concatenate([c.data for c in coo])
        owner = np.repeat(np.arange(len(gens)), [c.nnz for c in coo])
        keys = rows * self.dim + cols
        ukeys, pos = np.unique(keys, return_inverse=True)
        self.pattern = (ukeys // self.dim, ukeys % self.dim)
        self.coef_map = sp.csr_matrix((vals, (pos, owner)), shape=(len(ukeys), len(gens)))

    def combination(self, a: np.ndarray) -> sp.csr_matrix:
        r, c = self.pattern
        return sp.csr_matrix((self.coef_map @ a, (r, c)), shape=(self.dim, self.dim))


def _fermion_system(group: _FermionGroup, v: np.ndarray) -> LinearSystem:
    # G_mu = i R_mu: S = 2 Re(phi^dag phi) with phi_mu = R_mu v (the i cancels)
    phi = (group.stacked @ v).reshape(group.n_gens, group.dim)
    hv = group.h @ v
    S = 2.0 * (phi.conj() @ phi.T).real
    # b_mu = -2 Im <G_mu v, h v> = 2 Re <phi_mu, h v>
    b = 2.0 * (phi.conj() @ hv).real
    return LinearSystem(b=b, dim=len(phi), matvec=lambda a: S @ a, S=S, n_expectations=len(phi) * (len(phi) + 1))


def _fermion_step(group: _FermionGroup, a: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    # exp(-i s A) with A = sum a_mu i R_mu = exp(s sum a_mu R_mu)
    if not np.any(a):
        return v
    M = group.combination(a)
    bound = float(abs(M).sum(axis=0).max())
    return taylor_expm_apply(lambda x: M @ x, scale, v, bound)


def qite_evolve(
    H: ProblemHamiltonian,
    plan: DomainPlan,
    config: QiteConfig,
    psi: StateVector,
    reference: StateVector | None = None,
) -> tuple[EvolutionTrace, StateVector]:
    """Run QITE with a second-order palindromic schedule over the grouped terms.

    Every factor solves the linear system of its group on the current state
    and applies ``exp(-i dtau fraction A)``. Energy, fidelity and the largest
    solver residual are recorded every ``config.record_every`` steps.
    """
    if psi.n_qubits != H.n_qubits:
        raise ValueError("state and Hamiltonian sizes differ")
    n = H.n_qubits
    fermionic = H.kind == "fermionic"
    basis_idx = None
    if fermionic:
        if H.n_electrons is not None:
            b = sector_basis(H.n_sites, H.n_electrons, H.sz2)
            if abs(np.linalg.norm(psi.amplitudes[b]) - 1.0) < 1e-10:
                basis_idx = b
        cache: dict = {}
        groups = [_FermionGroup(H, g, basis_idx, cache) for g in plan.groups]
        del cache
    else:
        for g in plan.groups:
            if len(g.domain) > config.spin_cap:
                raise ValueError(
                    f"domain of {len(g.domain)} sites exceeds the cap of {config.spin_cap} "
                    f"({4 ** len(g.domain)} Pauli strings)"
                )
        groups = [_SpinGroup(H, g) for g in plan.groups]
    Hmat = H.sparse(basis_idx) if fermionic else H.sparse()
    v = psi.amplitudes.copy() if basis_idx is None else psi.amplitudes[basis_idx].copy()
    ref = None
    if reference is not None:
        ref = reference.amplitudes if basis_idx is None else reference.amplitudes[basis_idx]

    def energy(x):
        return float(np.vdot(x, Hmat @ x).real)

    def fid(x):
        return None if ref is None else float(min(1.0, abs(np.vdot(ref, x)) ** 2))

    m = len(groups)
    sequence = [(i, 0.5) for i in range(m)] + [(i, 0.5) for i in reversed(range(m))]
    trace = EvolutionTrace(label=f"qite-nu{plan.nu}")
    trace.append(0.0, energy(v), fid(v))
    dt = config.dtau
    worst = 0.0
    for step in range(1, config.n_steps + 1):
        for gi, frac in sequence:
            grp = groups[gi]
            if fermionic:
                sys = _fermion_system(grp, v)
                a = solve_for_a(sys, config.solver)
                v = _fermion_step(grp, a, v, dt * frac)
            else:
                rho = reduced_density_matrix(v, n, grp.domain)
                sys = build_spin_system(pauli_expectations(rho).real, grp.h_local)
                a = solve_for_a(sys, config.solver)
                A = pauli_matrix(a)
                U = sla.expm(-1j * dt * frac * 0.5 * (A + A.conj().T))
                v = apply_local_matrix(v, n, grp.domain, U)
            v /= np.linalg.norm(v)
            worst = max(worst, sys.residual / max(np.linalg.norm(sys.b), 1e-300))
        if step % config.record_every == 0 or step == config.n_steps:
            trace.append(step * dt, energy(v), fid(v), residual=worst)
            worst = 0.0
    if basis_idx is None:
        out = StateVector(v)
    else:
        full = np.zeros(2**n, dtype=complex)
        full[basis_idx] = v
        out = StateVector(full)
    return trace, out


# ---------------------------------------------------------------------------
# Planning formulas


def required_manhattan_distance(C: float, n: int, m: int, eps: float) -> float:
    """``2 C ln(2 sqrt(2) n m / eps)``, the domain radius needed for accuracy ``eps``."""
    if C < 0 or n <= 0 or m <= 0 or eps <= 0:
        raise ValueError("need C >= 0 and positive n, m, eps")
    return 2.0 * C * math.log(2.0 * math.sqrt(2.0) * n * m / eps)


def estimate_running_time(m: int, n: int, k: float, nu: float, d: int) -> float:
    """``m n exp(k nu^d)``, the scaling of a QITE run."""
    if m < 0 or n < 0 or nu < 0 or d < 1:
        raise ValueError("invalid running-time inputs")
    return float(m * n * math.exp(k * nu**d))
