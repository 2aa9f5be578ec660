"""Lattices, model Hamiltonians, FCIDUMP integrals and Trotter schedules.

Spin Hamiltonians are sums of pair terms ``J_ij (XX + YY + ZZ)`` (Heisenberg)
or ``J_ij XX`` (transverse-field Ising) plus field terms ``B Z_i``. Each
unordered pair ``i < j`` appears once. Fermionic Hamiltonians use spatial
orbitals ``p`` with spin-orbital modes ``(2p, 2p + 1) = (alpha, beta)``.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .operators import (
    FermionOperator,
    PauliString,
    SpinOperator,
    fermion_sparse,
    jordan_wigner,
    spin_operator_sparse,
)

# ---------------------------------------------------------------------------
# Lattices


@dataclass(frozen=True)
class LatticeGraph:
    """Undirected lattice graph with hop-count distances.

    Parameters
    ----------
    n_sites : int
    edges : tuple of (int, int)
        Unordered pairs stored as ``(i, j)`` with ``i < j``.
    kind : str
        ``"ring"``, ``"chain"``, ``"triangular_ladder"`` or ``"honeycomb"``.
    periodic : tuple of bool
        Periodicity along the horizontal and vertical axes.
    coords : array, optional
        Drawing coordinates, informational only.
    """

    n_sites: int
    edges: tuple[tuple[int, int], ...]
    kind: str
    periodic: tuple[bool, ...] = (False,)
    coords: tuple[tuple[float, float], ...] | None = None
    name: str = ""

    def __post_init__(self):
        es = sorted({tuple(sorted((int(i), int(j)))) for i, j in self.edges})
        for i, j in es:
            if i == j or not (0 <= i < self.n_sites and 0 <= j < self.n_sites):
                raise ValueError(f"invalid edge ({i}, {j})")
        object.__setattr__(self, "edges", tuple(es))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.n_sites)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def distances(self) -> np.ndarray:
        """All-pairs hop counts by breadth-first search (-1 if unreachable)."""
        n = self.n_sites
        out = np.full((n, n), -1, dtype=np.int64)
        for s in range(n):
            out[s, s] = 0
            queue = deque([s])
            while queue:
                u = queue.popleft()
                for v in self.neighbors[u]:
                    if out[s, v] < 0:
                        out[s, v] = out[s, u] + 1
                        queue.append(v)
        out.flags.writeable = False
        return out

    def is_connected(self) -> bool:
        return bool((self.distances >= 0).all())

    def degree(self) -> np.ndarray:
        return np.array([len(a) for a in self.neighbors])


def _load_fixture(name: str) -> dict:
    text = resources.files("qitelab.data").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def lattice_from_fixture(name: str) -> LatticeGraph:
    """Load one of the shipped lattice tables (see ``qitelab/data``)."""
    d = _load_fixture(name)
    return LatticeGraph(
        n_sites=d["n_sites"],
        edges=tuple(tuple(e) for e in d["edges"]),
        kind=d["kind"],
        periodic=tuple(d["periodic"]),
        coords=tuple(tuple(c) for c in d["coords"]),
        name=d["name"],
    )


def build_lattice(kind: str, dimensions=None, periodic: bool | Sequence[bool] = True) -> LatticeGraph:
    """Construct a lattice graph.

    Parameters
    ----------
    kind : {"ring", "chain", "triangular_ladder", "honeycomb"}
    dimensions : int or tuple
        ``L`` for rings and chains, ``(2, 6)`` for the ladder, ``12`` (or
        ``18`` for the open demonstration patch) for the honeycomb.
    periodic : bool or tuple of bool
        Only the combinations shipped as fixtures are supported for the
        two-dimensional lattices.
    """
    per = (periodic,) if isinstance(periodic, bool) else tuple(periodic)
    if kind in ("ring", "chain"):
        L = int(dimensions if np.isscalar(dimensions) else dimensions[0])
        if L < 1:
            raise ValueError("need at least one site")
        edges = [(i, i + 1) for i in range(L - 1)]
        closed = kind == "ring" and per[0]
        if closed and L > 2:
            edges.append((0, L - 1))
        return LatticeGraph(L, tuple(edges), "ring" if closed else "chain", (closed,), name=f"{kind}_{L}")
    if kind == "triangular_ladder":
        dims = tuple(dimensions) if dimensions is not None else (2, 6)
        if dims != (2, 6) or per[0] is not True:
            raise ValueError(f"triangular ladder supports only (2, 6) with horizontal PBC, got {dims}")
        return lattice_from_fixture("triangular_ladder_2x6")
    if kind == "honeycomb":
        if dimensions is None:
            n = 12
        else:
            n = int(dimensions if np.isscalar(dimensions) else np.prod(dimensions))
        if n == 12 and per[0] is True:
            return lattice_from_fixture("honeycomb_12")
        if n == 18 and not any(per):
            return lattice_from_fixture("honeycomb_18_open")
        raise ValueError(f"honeycomb supports 12 sites (horizontal PBC) or 18 sites (open), got {n}")
    raise ValueError(f"unsupported lattice kind {kind!r}")


def manhattan_distance(g: LatticeGraph, i: int, j: int) -> int:
    """Minimal number of nearest-neighbour hops between sites ``i`` and ``j``."""
    return int(g.distances[i, j])


# ---------------------------------------------------------------------------
# Hamiltonian containers


@dataclass(frozen=True)
class HamiltonianTerm:
    """One local Hermitian term and the sites/orbitals it acts on."""

    operator: SpinOperator | FermionOperator
    support: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(sorted(int(s) for s in self.support)))


@dataclass(frozen=True, eq=False)
class ProblemHamiltonian:
    """``H = sum_j h[j] + constant``.

    Parameters
    ----------
    terms : tuple of HamiltonianTerm
    constant : float
    kind : {"spin", "fermionic"}
    n_sites : int
        Spins, or spatial orbitals / lattice sites for fermions.
    n_electrons : int, optional
        Electron count of the physical sector (fermionic only).
    sz2 : int, optional
        ``2 S_z`` of the physical sector (fermionic only).
    """

    terms: tuple[HamiltonianTerm, ...]
    constant: float
    kind: str
    n_sites: int
    n_electrons: int | None = None
    sz2: int | None = None
    name: str = ""
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_modes(self) -> int:
        return 2 * self.n_sites if self.kind == "fermionic" else self.n_sites

    @property
    def n_qubits(self) -> int:
        return self.n_modes

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def term_spin(self, l: int) -> SpinOperator:
        """Qubit form of term ``l`` (Jordan-Wigner mapped for fermions)."""
        key = ("term_spin", l)
        if key not in self._cache:
            op = self.terms[l].operator
            if isinstance(op, FermionOperator):
                op = jordan_wigner(op, self.n_modes)
            self._cache[key] = op
        return self._cache[key]

    def spin_operator(self) -> SpinOperator:
        """Full qubit Hamiltonian including the constant."""
        if "spin" not in self._cache:
            total: dict[tuple[int, int], complex] = {(0, 0): complex(self.constant)}
            for l in range(self.n_terms):
                for k, c in self.term_spin(l).key_dict().items():
                    total[k] = total.get(k, 0.0) + c
            self._cache["spin"] = SpinOperator.from_key_dict(total)
        return self._cache["spin"]

    def sparse(self, basis: np.ndarray | None = None) -> sp.csr_matrix:
        """Sparse matrix on the full register or on a fermionic sector basis."""
        key = ("sparse", None if basis is None else hash(np.asarray(basis).tobytes()))
        if key not in self._cache:
            if basis is None and self.kind == "spin":
                mat = spin_operator_sparse(self.spin_operator(), self.n_qubits)
            elif self.kind == "fermionic":
                mat = sum(
                    (fermion_sparse(t.operator, self.n_modes, basis) for t in self.terms),
                    start=sp.csr_matrix(
                        (2**self.n_modes if basis is None else len(basis),) * 2, dtype=complex
                    ),
                )
                mat = mat + self.constant * sp.identity(mat.shape[0], dtype=complex, format="csr")
            else:
                raise ValueError("sector bases apply to fermionic Hamiltonians only")
            self._cache[key] = mat.tocsr()
        return self._cache[key]

    def term_sparse(self, l: int, basis: np.ndarray | None = None) -> sp.csr_matrix:
        op = self.terms[l].operator
        if isinstance(op, FermionOperator):
            return fermion_sparse(op, self.n_modes, basis)
        return spin_operator_sparse(op, self.n_qubits)


def sector_basis(n_sites: int, n_electrons: int, sz2: int | None = None) -> np.ndarray:
    """Sorted occupation bitstrings with fixed electron number (and ``2 S_z``).

    Mode ``2p`` is spin up and ``2p + 1`` spin down of orbital ``p``.
    """
    n_modes = 2 * n_sites
    idx = np.arange(2**n_modes, dtype=np.int64)
    keep = np.bitwise_count(idx) == n_electrons
    if sz2 is not None:
        up_mask = sum(1 << (2 * p) for p in range(n_sites))
        n_up = np.bitwise_count(idx & up_mask).astype(np.int64)
        keep &= (2 * n_up - n_electrons) == sz2
    return idx[keep]


# ---------------------------------------------------------------------------
# Spin models


def pair_couplings(
    g: LatticeGraph,
    J: float = 1.0,
    J2: float | None = None,
    alpha: float | None = None,
    prune: float | None = None,
) -> list[tuple[int, int, float]]:
    """Couplings ``J_ij`` for ``i < j``.

    Nearest neighbours by default; ``J2`` adds next-nearest neighbours
    (distance two); ``alpha`` gives long-range ``J * d_ij^{-alpha}``.
    """
    if alpha is not None and J2 is not None:
        raise ValueError("choose either long-range alpha or J1/J2 couplings")
    D = g.distances
    if not g.is_connected():
        raise ValueError("lattice graph is not connected")
    out = []
    if alpha is not None:
        if alpha < 0:
            raise ValueError("long-range exponent must be non-negative")
        for i in range(g.n_sites):
            for j in range(i + 1, g.n_sites):
                Jij = J * float(D[i, j]) ** (-alpha)
                if prune is None or abs(Jij) >= prune:
                    out.append((i, j, Jij))
        return out
    for i, j in g.edges:
        out.append((i, j, J))
    if J2 is not None:
        for i in range(g.n_sites):
            for j in range(i + 1, g.n_sites):
                if D[i, j] == 2:
                    out.append((i, j, J2))
    return out


def _field_terms(n: int, B: float) -> list[HamiltonianTerm]:
    if B == 0:
        return []
    return [HamiltonianTerm(SpinOperator.from_pauli(PauliString(((i, "Z"),)), B), (i,)) for i in range(n)]


def build_heisenberg(
    g: LatticeGraph,
    J: float = 1.0,
    B: float = 0.0,
    *,
    J2: float | None = None,
    alpha: float | None = None,
    prune: float | None = None,
    name: str = "",
) -> ProblemHamiltonian:
    """Heisenberg model ``sum_{i<j} J_ij (XX + YY + ZZ) + B sum_i Z_i``.

    ``J`` is the nearest-neighbour coupling (``J1``); pass ``J2`` for
    next-nearest neighbours or ``alpha`` for long-range decay.
    """
    terms = []
    for i, j, Jij in pair_couplings(g, J, J2, alpha, prune):
        op = SpinOperator(
            tuple((Jij, PauliString(((i, p), (j, p)))) for p in "XYZ")
        )
        terms.append(HamiltonianTerm(op, (i, j)))
    terms += _field_terms(g.n_sites, B)
    return ProblemHamiltonian(tuple(terms), 0.0, "spin", g.n_sites, name=name)


def build_tfim(
    g: LatticeGraph,
    alpha: float | None = None,
    B: float = 0.0,
    *,
    J: float = 1.0,
    prune: float | None = None,
    name: str = "",
) -> ProblemHamiltonian:
    """Transverse-field Ising model ``sum_{i<j} J_ij XX + B sum_i Z_i``."""
    terms = []
    for i, j, Jij in pair_couplings(g, J, None, alpha, prune):
        terms.append(HamiltonianTerm(SpinOperator.from_pauli(PauliString(((i, "X"), (j, "X"))), Jij), (i, j)))
    terms += _field_terms(g.n_sites, B)
    return ProblemHamiltonian(tuple(terms), 0.0, "spin", g.n_sites, name=name)


def split_pauli_terms(H: ProblemHamiltonian) -> ProblemHamiltonian:
    """One term per Pauli string, grouped by letter pattern.

    Patterns (``"XX"``, ``"YY"``, ``"ZZ"``, ``"Z"``, ...) appear in the order
    they are first met; within a pattern the original term order is kept.
    Used as the factor ordering of trotterized evolutions of spin models.
    Fermionic Hamiltonians are returned unchanged.
    """
    if H.kind != "spin":
        return H
    groups: dict[str, list[HamiltonianTerm]] = {}
    for term in H.terms:
        for c, s in term.operator.terms:
            pattern = "".join(f for _, f in s.factors)
            groups.setdefault(pattern, []).append(HamiltonianTerm(SpinOperator(((c, s),)), s.sites))
    terms = tuple(t for ts in groups.values() for t in ts)
    return ProblemHamiltonian(terms, H.constant, H.kind, H.n_sites, H.n_electrons, H.sz2, H.name)


# ---------------------------------------------------------------------------
# Fermionic models


def build_fermi_hubbard(g: LatticeGraph, t: float = 1.0, U: float = 1.0, name: str = "") -> ProblemHamiltonian:
    """Fermi-Hubbard model at half filling.

    The recorded sector has ``2 S_z = L mod 2`` (one extra up electron on odd rings).
    ``H = -t sum_<pq> (E_pq + E_qp) + U/2 sum_p (E_pp^2 - E_pp)``, where the
    on-site term equals ``U n_{p,up} n_{p,down}``.
    """
    terms = []
    for p, q in g.edges:
        op = (FermionOperator.excitation(p, q) + FermionOperator.excitation(q, p)) * (-t)
        terms.append(HamiltonianTerm(op, (p, q)))
    if U != 0:
        for p in range(g.n_sites):
            E = FermionOperator.excitation(p, p)
            op = (E * E - E) * (0.5 * U)
            terms.append(HamiltonianTerm(op.normal_ordered(), (p,)))
    return ProblemHamiltonian(tuple(terms), 0.0, "fermionic", g.n_sites, n_electrons=g.n_sites, sz2=g.n_sites % 2, name=name)


# ---------------------------------------------------------------------------
# FCIDUMP


@dataclass(frozen=True)
class FcidumpData:
    """Active-space integrals in chemists' notation.

    Attributes
    ----------
    h : (n, n) array
        One-electron integrals, symmetric.
    g : (n, n, n, n) array
        Two-electron integrals ``(pq|rs)`` with eightfold symmetry.
    core : float
        Constant energy shift.
    """

    n_orb: int
    n_elec: int
    ms2: int
    h: np.ndarray
    g: np.ndarray
    core: float


def _eight(p, q, r, s):
    return {
        (p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
        (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p),
    }


def parse_fcidump(text: str) -> FcidumpData:
    """Parse a Molpro-style FCIDUMP text.

    Raises
    ------
    ValueError
        Malformed header, index out of range or conflicting duplicate entries.
    """
    m = re.search(r"&FCI(.*?)(&END|/)", text, flags=re.S | re.I)
    if m is None:
        raise ValueError("FCIDUMP header not terminated by &END or /")
    header = m.group(1)

    def _key(name):
        km = re.search(rf"\b{name}\s*=\s*(-?\d+)", header, flags=re.I)
        if km is None:
            raise ValueError(f"FCIDUMP header lacks {name}")
        return int(km.group(1))

    n = _key("NORB")
    nelec = _key("NELEC")
    try:
        ms2 = _key("MS2")
    except ValueError:
        ms2 = 0
    h = np.zeros((n, n))
    g = np.zeros((n, n, n, n))
    seen_h: dict = {}
    seen_g: dict = {}
    core = 0.0
    for line in text[m.end():].splitlines():
        toks = line.split()
        if not toks:
            continue
        if len(toks) != 5:
            raise ValueError(f"malformed integral line: {line!r}")
        val = float(toks[0].replace("D", "E").replace("d", "e"))
        i, j, k, l = (int(x) for x in toks[1:])
        if any(x < 0 or x > n for x in (i, j, k, l)):
            raise ValueError(f"index out of range in line: {line!r}")
        if i == j == k == l == 0:
            core += val
        elif k == 0 and l == 0:
            key = tuple(sorted((i - 1, j - 1)))
            if key in seen_h and seen_h[key] != val:
                raise ValueError(f"conflicting one-electron entries for {key}")
            seen_h[key] = val
            h[i - 1, j - 1] = h[j - 1, i - 1] = val
        else:
            if 0 in (i, j, k, l):
                raise ValueError(f"zero index in two-electron line: {line!r}")
            idx = (i - 1, j - 1, k - 1, l - 1)
            key = min(_eight(*idx))
            if key in seen_g and seen_g[key] != val:
                raise ValueError(f"conflicting two-electron entries for {idx}")
            seen_g[key] = val
            for perm in _eight(*idx):
                g[perm] = val
    return FcidumpData(n, nelec, ms2, h, g, core)


def serialize_fcidump(f: FcidumpData, tol: float = 0.0) -> str:
    """Write integrals in FCIDUMP format with full ``repr`` precision."""
    n = f.n_orb
    lines = [f" &FCI NORB={n},NELEC={f.n_elec},MS2={f.ms2},", "  ORBSYM=" + "1," * n, "  ISYM=1,", " &END"]
    done = set()
    for p in range(n):
        for q in range(n):
            for r in range(n):
                for s in range(n):
                    key = min(_eight(p, q, r, s))
                    if key in done:
                        continue
                    done.add(key)
                    v = f.g[key]
                    if abs(v) > tol:
                        a, b, c, d = key
                        lines.append(f"{float(v)!r} {a + 1} {b + 1} {c + 1} {d + 1}")
    for p in range(n):
        for q in range(p + 1):
            if abs(f.h[p, q]) > tol:
                lines.append(f"{float(f.h[p, q])!r} {p + 1} {q + 1} 0 0")
    lines.append(f"{float(f.core)!r} 0 0 0 0")
    return "\n".join(lines) + "\n"


def build_active_space_hamiltonian(f: FcidumpData, name: str = "") -> ProblemHamiltonian:
    """``sum h_pq E_pq + 1/2 sum g_pqrs (E_pq E_rs - delta_qr E_ps) + core``.

    Contributions are grouped by the set of spatial orbitals they touch, so
    each term is Hermitian and its support is that orbital set.
    """
    n = f.n_orb
    groups: dict[tuple[int, ...], dict] = {}

    def _add(orbs, coeff, word):
        key = tuple(sorted(set(orbs)))
        d = groups.setdefault(key, {})
        d[word] = d.get(word, 0.0) + coeff

    # spin-orbital words: c+_{p s} c_{q s} and c+_{p s} c+_{r t} c_{s t} c_{q s}
    for p in range(n):
        for q in range(n):
            hpq = f.h[p, q]
            if hpq != 0:
                for s in (0, 1):
                    _add((p, q), hpq, ((2 * p + s, True), (2 * q + s, False)))
    for p in range(n):
        for q in range(n):
            for r in range(n):
                for s_ in range(n):
                    v = 0.5 * f.g[p, q, r, s_]
                    if v == 0:
                        continue
                    # E_pq E_rs - delta_qr E_ps = sum_{st} c+_p,s c+_r,t c_s_,t c_q,s
                    for a in (0, 1):
                        for b in (0, 1):
                            if 2 * p + a == 2 * r + b or 2 * s_ + b == 2 * q + a:
                                continue
                            word = ((2 * p + a, True), (2 * r + b, True), (2 * s_ + b, False), (2 * q + a, False))
                            _add((p, q, r, s_), v, word)
    terms = []
    for orbs in sorted(groups, key=lambda k: (len(k), k)):
        op = FermionOperator(tuple((c, w) for w, c in groups[orbs].items())).normal_ordered()
        if op.terms:
            terms.append(HamiltonianTerm(op, orbs))
    return ProblemHamiltonian(
        tuple(terms), float(f.core), "fermionic", n, n_electrons=f.n_elec, sz2=f.ms2, name=name
    )


# ---------------------------------------------------------------------------
# Trotter schedules


@dataclass(frozen=True)
class TrotterSchedule:
    """Second-order splitting of one imaginary-time step.

    ``sequence`` lists ``(term index, fraction)`` for one step; the full
    evolution repeats it ``n_steps`` times with step ``dtau``.
    """

    sequence: tuple[tuple[int, float], ...]
    n_steps: int
    dtau: float

    @property
    def m(self) -> int:
        return len(self.sequence)


def make_trotter_schedule(H: ProblemHamiltonian | int, dtau: float, n: int) -> TrotterSchedule:
    """Palindromic sequence ``0..m-1`` then ``m-1..0``, each with fraction 1/2."""
    if n < 0 or dtau <= 0:
        raise ValueError("need n >= 0 and dtau > 0")
    m_tilde = H if isinstance(H, int) else H.n_terms
    fwd = [(l, 0.5) for l in range(m_tilde)]
    return TrotterSchedule(tuple(fwd + fwd[::-1]), int(n), float(dtau))
