"""Operator algebra and statevector kernels.

Conventions used throughout the package:

* qubit ``j`` is mode ``j``; bit ``j`` of a basis index is the occupation of
  mode ``j`` (least-significant bit is mode 0),
* ``|1>`` on a qubit means the mode is occupied, so ``Z_j = 1 - 2 n_j``,
* Jordan-Wigner: ``c_j = Z_0 ... Z_{j-1} (X_j + i Y_j) / 2``,
* Majoranas (0-based): ``a_{2j} = c_j^dag + c_j`` and
  ``a_{2j+1} = i (c_j^dag - c_j)``, so that ``Z_j = -i a_{2j} a_{2j+1}``.

Pauli strings are stored as a phase times ``i^{n_Y} X^x Z^z`` where ``x`` and
``z`` are integer bitmasks, which turns products into xor operations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

PRUNE_TOL = 1e-14

_PHASES = (1.0 + 0j, 1j, -1.0 + 0j, -1j)


def _ipow(k: int) -> complex:
    return _PHASES[k % 4]


def _popcount(x: int) -> int:
    return bin(x).count("1")


# ---------------------------------------------------------------------------
# Pauli strings


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-qubit Pauli matrices with a unit phase.

    Parameters
    ----------
    factors : tuple of (int, str)
        Site/letter pairs with letters in ``"XYZ"``. Stored sorted by site.
    phase : complex
        Unit-modulus prefactor.
    """

    factors: tuple[tuple[int, str], ...] = ()
    phase: complex = 1.0 + 0j

    def __post_init__(self):
        facs = tuple(sorted((int(s), str(p).upper()) for s, p in self.factors))
        sites = [s for s, _ in facs]
        if len(set(sites)) != len(sites):
            raise ValueError(f"repeated site in Pauli string: {facs}")
        for s, p in facs:
            if s < 0:
                raise ValueError(f"negative site index {s}")
            if p not in "XYZ" or len(p) != 1:
                raise ValueError(f"invalid Pauli letter {p!r}")
        if abs(abs(self.phase) - 1.0) > 1e-12:
            raise ValueError(f"phase {self.phase} is not of unit modulus")
        object.__setattr__(self, "factors", facs)
        object.__setattr__(self, "phase", complex(self.phase))

    @classmethod
    def from_dict(cls, factors: Mapping[int, str], phase: complex = 1.0) -> PauliString:
        return cls(tuple(factors.items()), phase)

    @classmethod
    def parse(cls, text: str, phase: complex = 1.0) -> PauliString:
        """Parse strings like ``"X0 Z3"``; an empty string is the identity."""
        facs = []
        for tok in text.split():
            facs.append((int(tok[1:]), tok[0]))
        return cls(tuple(facs), phase)

    @classmethod
    def from_masks(cls, x: int, z: int, phase: complex = 1.0) -> PauliString:
        """Build ``phase * i^{n_Y} X^x Z^z`` from bitmasks (the Y's absorb the i's)."""
        facs = []
        bits = x | z
        s = 0
        while bits:
            if bits & 1:
                xb, zb = (x >> s) & 1, (z >> s) & 1
                facs.append((s, "Y" if xb and zb else ("X" if xb else "Z")))
            bits >>= 1
            s += 1
        return cls(tuple(facs), phase)

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.factors)

    @property
    def xmask(self) -> int:
        return sum(1 << s for s, p in self.factors if p in "XY")

    @property
    def zmask(self) -> int:
        return sum(1 << s for s, p in self.factors if p in "ZY")

    @property
    def n_y(self) -> int:
        return sum(1 for _, p in self.factors if p == "Y")

    @property
    def key(self) -> tuple[int, int]:
        return self.xmask, self.zmask

    def as_dict(self) -> dict[int, str]:
        return dict(self.factors)

    def max_site(self) -> int:
        return self.factors[-1][0] if self.factors else -1

    def __mul__(self, other):
        if isinstance(other, PauliString):
            return pauli_product(self, other)
        return NotImplemented

    def __str__(self) -> str:
        body = " ".join(f"{p}{s}" for s, p in self.factors) or "I"
        if self.phase == 1:
            return body
        return f"({self.phase:g}) {body}"


def pauli_product(a: PauliString, b: PauliString) -> PauliString:
    """Product ``a * b`` as a single Pauli string.

    Writing ``sigma = i^{n_Y} X^x Z^z``, moving ``Z^{z_a}`` past ``X^{x_b}``
    costs ``(-1)^{|z_a & x_b|}``, which fixes the phase ``alpha(I, J)``.
    """
    xa, za = a.key
    xb, zb = b.key
    x, z = xa ^ xb, za ^ zb
    n_y = _popcount(x & z)
    k = a.n_y + b.n_y - n_y + 2 * _popcount(za & xb)
    return PauliString.from_masks(x, z, a.phase * b.phase * _ipow(k))


def pauli_product_masks(xa: int, za: int, xb: int, zb: int) -> tuple[int, int, int]:
    """Mask-level product of two phase-free Pauli strings.

    Returns ``(x, z, k)`` with ``sigma_a sigma_b = i^k sigma_{(x, z)}``.
    """
    x, z = xa ^ xb, za ^ zb
    k = _popcount(xa & za) + _popcount(xb & zb) - _popcount(x & z) + 2 * _popcount(za & xb)
    return x, z, k % 4


# ---------------------------------------------------------------------------
# Spin operators


def _as_key_dict(terms: Iterable[tuple[complex, PauliString]]) -> dict[tuple[int, int], complex]:
    out: dict[tuple[int, int], complex] = {}
    for c, s in terms:
        k = s.key
        out[k] = out.get(k, 0.0) + complex(c) * s.phase
    return out


@dataclass(frozen=True)
class SpinOperator:
    """Linear combination of Pauli strings.

    Parameters
    ----------
    terms : tuple of (complex, PauliString)
    """

    terms: tuple[tuple[complex, PauliString], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "terms", tuple((complex(c), s) for c, s in self.terms)
        )

    @classmethod
    def from_pauli(cls, s: PauliString | str, coeff: complex = 1.0) -> SpinOperator:
        if isinstance(s, str):
            s = PauliString.parse(s)
        return cls(((coeff, s),))

    @classmethod
    def identity(cls, coeff: complex = 1.0) -> SpinOperator:
        return cls(((coeff, PauliString()),))

    @classmethod
    def from_key_dict(cls, d: Mapping[tuple[int, int], complex]) -> SpinOperator:
        terms = []
        for (x, z), c in sorted(d.items()):
            if abs(c) >= PRUNE_TOL:
                terms.append((c, PauliString.from_masks(x, z)))
        return cls(tuple(terms))

    def canonical(self) -> SpinOperator:
        """Merge identical strings, fold phases, drop |c| < 1e-14."""
        return SpinOperator.from_key_dict(_as_key_dict(self.terms))

    def key_dict(self) -> dict[tuple[int, int], complex]:
        return {k: c for k, c in _as_key_dict(self.terms).items() if abs(c) >= PRUNE_TOL}

    def adjoint(self) -> SpinOperator:
        return SpinOperator(tuple((np.conj(c * s.phase), PauliString(s.factors)) for c, s in self.terms))

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        d = self.key_dict()
        return all(abs(c.imag) <= tol for c in d.values())

    @property
    def support(self) -> tuple[int, ...]:
        sites: set[int] = set()
        for c, s in self.canonical().terms:
            sites.update(s.sites)
        return tuple(sorted(sites))

    def max_site(self) -> int:
        return max((s.max_site() for _, s in self.terms), default=-1)

    def norm_bound(self) -> float:
        """Sum of absolute coefficients, an upper bound on the operator norm."""
        return float(sum(abs(c) for c in self.key_dict().values()))

    def __len__(self) -> int:
        return len(self.terms)

    def __add__(self, other):
        if isinstance(other, SpinOperator):
            return SpinOperator(self.terms + other.terms).canonical()
        if isinstance(other, (int, float, complex)):
            return self + SpinOperator.identity(other)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return SpinOperator(tuple((c * other, s) for c, s in self.terms))
        if isinstance(other, SpinOperator):
            a = self.key_dict()
            b = other.key_dict()
            out: dict[tuple[int, int], complex] = {}
            for (xa, za), ca in a.items():
                for (xb, zb), cb in b.items():
                    x, z, k = pauli_product_masks(xa, za, xb, zb)
                    out[(x, z)] = out.get((x, z), 0.0) + ca * cb * _ipow(k)
            return SpinOperator.from_key_dict(out)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self * other
        return NotImplemented

    def to_sparse(self, n_qubits: int) -> sp.csr_matrix:
        return spin_operator_sparse(self, n_qubits)

    def to_dense(self, n_qubits: int) -> np.ndarray:
        return spin_operator_sparse(self, n_qubits).toarray()

    def __str__(self) -> str:
        return " + ".join(f"({c:g}) {s}" for c, s in self.terms) or "0"


# ---------------------------------------------------------------------------
# Majorana monomials


@dataclass(frozen=True)
class MajoranaMonomial:
    """``coefficient * a_{i_1} a_{i_2} ... a_{i_k}`` with increasing indices.

    The Hermitian product is ``gamma = (-i)^{C(k,2)} a_{i_1} ... a_{i_k}``;
    :meth:`hermitian_coefficient` returns the coefficient in front of it.
    """

    coefficient: complex
    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"Majorana indices must be strictly increasing: {idx}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coefficient", complex(self.coefficient))

    def __len__(self) -> int:
        return len(self.indices)

    def hermitian_coefficient(self) -> complex:
        k = len(self.indices)
        return self.coefficient * _ipow(k * (k - 1) // 2)


def reduce_majorana_word(word: Sequence[int]) -> tuple[int, tuple[int, ...]]:
    """Sort a Majorana word using anticommutation and cancel ``a_k^2 = 1``.

    Returns
    -------
    sign : int
        +1 or -1.
    indices : tuple of int
        Strictly increasing surviving indices.
    """
    w = list(word)
    inv = 0
    for i in range(len(w)):
        for j in range(i + 1, len(w)):
            if w[i] > w[j]:
                inv += 1
    w.sort()
    out: list[int] = []
    for k in w:
        if out and out[-1] == k:
            out.pop()
        else:
            out.append(k)
    return (-1) ** inv, tuple(out)


def pauli_to_majorana(s: PauliString, n_modes: int) -> MajoranaMonomial:
    """Jordan-Wigner image of a Pauli string as one Majorana monomial."""
    if s.max_site() >= n_modes:
        raise ValueError(f"site {s.max_site()} out of range for {n_modes} modes")
    coeff = s.phase
    word: list[int] = []
    for j, p in s.factors:
        if p == "Z":
            coeff *= -1j
            word += [2 * j, 2 * j + 1]
            continue
        # X_j = Z_{<j} a_{2j}, Y_j = Z_{<j} a_{2j+1}
        for k in range(j):
            coeff *= -1j
            word += [2 * k, 2 * k + 1]
        word.append(2 * j if p == "X" else 2 * j + 1)
    sign, idx = reduce_majorana_word(word)
    return MajoranaMonomial(coeff * sign, idx)


def majorana_to_spin(mono: MajoranaMonomial) -> SpinOperator:
    """Spin operator of a Majorana monomial (inverse Jordan-Wigner)."""
    op = SpinOperator.identity(mono.coefficient)
    for mu in mono.indices:
        j, odd = divmod(mu, 2)
        facs = {k: "Z" for k in range(j)}
        facs[j] = "Y" if odd else "X"
        op = op * SpinOperator.from_pauli(PauliString.from_dict(facs))
    return op


# ---------------------------------------------------------------------------
# Fermion operators

Ladder = tuple[int, bool]  # (mode, is_creation)


@dataclass(frozen=True)
class FermionOperator:
    """Linear combination of products of ladder operators.

    Each term is ``(coefficient, ((mode, dagger), ...))`` acting right to
    left like an ordinary operator product written left to right.
    """

    terms: tuple[tuple[complex, tuple[Ladder, ...]], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self,
            "terms",
            tuple((complex(c), tuple((int(m), bool(d)) for m, d in w)) for c, w in self.terms),
        )

    @classmethod
    def ladder(cls, mode: int, dagger: bool) -> FermionOperator:
        return cls(((1.0, ((mode, dagger),)),))

    @classmethod
    def identity(cls, coeff: complex = 1.0) -> FermionOperator:
        return cls(((coeff, ()),))

    @classmethod
    def number(cls, mode: int) -> FermionOperator:
        return cls(((1.0, ((mode, True), (mode, False))),))

    @classmethod
    def hopping(cls, p: int, q: int, coeff: complex = 1.0) -> FermionOperator:
        """``coeff * c_p^dag c_q``."""
        return cls(((coeff, ((p, True), (q, False))),))

    @classmethod
    def excitation(cls, p: int, q: int) -> FermionOperator:
        """Spin-summed orbital excitation ``E_pq`` with modes ``(2p, 2p+1)``."""
        return cls(
            (
                (1.0, ((2 * p, True), (2 * q, False))),
                (1.0, ((2 * p + 1, True), (2 * q + 1, False))),
            )
        )

    def adjoint(self) -> FermionOperator:
        return FermionOperator(
            tuple((np.conj(c), tuple((m, not d) for m, d in reversed(w))) for c, w in self.terms)
        )

    def modes(self) -> tuple[int, ...]:
        return tuple(sorted({m for _, w in self.terms for m, _ in w}))

    def simplify(self) -> FermionOperator:
        """Merge identical words and drop small coefficients (no reordering)."""
        d: dict[tuple[Ladder, ...], complex] = {}
        for c, w in self.terms:
            d[w] = d.get(w, 0.0) + c
        return FermionOperator(tuple((c, w) for w, c in d.items() if abs(c) >= PRUNE_TOL))

    def normal_ordered(self) -> FermionOperator:
        """Normal order: creators left (descending mode), annihilators right (descending mode)."""
        out: dict[tuple[Ladder, ...], complex] = {}
        stack = [(c, list(w)) for c, w in self.terms]
        while stack:
            c, w = stack.pop()
            for i in range(len(w) - 1):
                (m1, d1), (m2, d2) = w[i], w[i + 1]
                if m1 == m2 and d1 == d2:
                    break  # c_p c_p = 0, drop the word
                if (not d1 and d2) or (d1 == d2 and m1 < m2):
                    stack.append((-c, w[:i] + [w[i + 1], w[i]] + w[i + 2 :]))
                    if m1 == m2:  # c_p c_p^dag = 1 - c_p^dag c_p
                        stack.append((c, w[:i] + w[i + 2 :]))
                    break
            else:
                key = tuple(w)
                out[key] = out.get(key, 0.0) + c
        terms = tuple((c, w) for w, c in sorted(out.items()) if abs(c) >= PRUNE_TOL)
        return FermionOperator(terms)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        diff = (self - self.adjoint()).normal_ordered()
        return all(abs(c) <= tol for c, _ in diff.terms)

    def __add__(self, other):
        if isinstance(other, FermionOperator):
            return FermionOperator(self.terms + other.terms).simplify()
        if isinstance(other, (int, float, complex)):
            return self + FermionOperator.identity(other)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return FermionOperator(tuple((c * other, w) for c, w in self.terms))
        if isinstance(other, FermionOperator):
            return FermionOperator(
                tuple((ca * cb, wa + wb) for ca, wa in self.terms for cb, wb in other.terms)
            ).simplify()
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self * other
        return NotImplemented


def _ladder_spin(mode: int, dagger: bool) -> SpinOperator:
    z = {k: "Z" for k in range(mode)}
    sx = PauliString.from_dict({**z, mode: "X"})
    sy = PauliString.from_dict({**z, mode: "Y"})
    cy = -0.5j if dagger else 0.5j
    return SpinOperator(((0.5, sx), (cy, sy)))


def jordan_wigner(op: FermionOperator, n_modes: int) -> SpinOperator:
    """Map a fermion operator onto qubits."""
    total: dict[tuple[int, int], complex] = {}
    for c, word in op.terms:
        term = SpinOperator.identity(c)
        for m, d in word:
            if not 0 <= m < n_modes:
                raise ValueError(f"mode {m} out of range for {n_modes} modes")
            term = term * _ladder_spin(m, d)
        for k, v in term.key_dict().items():
            total[k] = total.get(k, 0.0) + v
    return SpinOperator.from_key_dict(total)


def fermion_sparse(
    op: FermionOperator, n_modes: int, basis: np.ndarray | None = None
) -> sp.csr_matrix:
    """Matrix of ``op`` in the occupation basis by direct ladder action.

    Parameters
    ----------
    basis : array of int, optional
        Sorted occupation bitstrings spanning an invariant subspace (e.g. a
        particle-number sector). Defaults to the full Fock space.
    """
    if basis is None:
        basis = np.arange(2**n_modes, dtype=np.int64)
    basis = np.asarray(basis, dtype=np.int64)
    dim = len(basis)
    rows, cols, vals = [], [], []
    col_all = np.arange(dim)
    for c, word in op.terms:
        state = basis.copy()
        amp = np.full(dim, c, dtype=complex)
        alive = np.ones(dim, dtype=bool)
        for m, d in reversed(word):
            if not 0 <= m < n_modes:
                raise ValueError(f"mode {m} out of range for {n_modes} modes")
            bit = (state >> m) & 1
            alive &= bit == (0 if d else 1)
            below = np.bitwise_count(state & ((1 << m) - 1)).astype(np.int64)
            amp = amp * (1 - 2 * (below & 1))
            state = state ^ (1 << m)
        pos = np.searchsorted(basis, state)
        pos = np.clip(pos, 0, dim - 1)
        alive &= basis[pos] == state
        rows.append(pos[alive])
        cols.append(col_all[alive])
        vals.append(amp[alive])
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    return mat.tocsr()


# ---------------------------------------------------------------------------
# State vectors


@dataclass(frozen=True)
class StateVector:
    """Complex amplitudes over ``2**n_qubits`` basis states (read-only)."""

    amplitudes: np.ndarray
    n_qubits: int = field(init=False)

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=complex).ravel()
        n = int(round(math.log2(len(amp)))) if len(amp) else -1
        if n < 0 or 2**n != len(amp):
            raise ValueError(f"length {len(amp)} is not a power of two")
        amp.flags.writeable = False
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "n_qubits", n)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> StateVector:
        amp = np.zeros(2**n_qubits, dtype=complex)
        amp[index] = 1.0
        return cls(amp)

    @classmethod
    def from_occupations(cls, n_qubits: int, occupied: Iterable[int]) -> StateVector:
        return cls.basis(n_qubits, sum(1 << int(k) for k in occupied))

    @classmethod
    def normalized_from(cls, amplitudes) -> StateVector:
        amp = np.asarray(amplitudes, dtype=complex)
        return cls(amp / np.linalg.norm(amp))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def __len__(self) -> int:
        return len(self.amplitudes)


def _vec(psi) -> np.ndarray:
    return psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)


@lru_cache(maxsize=32)
def basis_indices(n_qubits: int) -> np.ndarray:
    idx = np.arange(2**n_qubits, dtype=np.int64)
    idx.flags.writeable = False
    return idx


def _parity_sign(idx: np.ndarray, zmask: int) -> np.ndarray:
    return 1 - 2 * (np.bitwise_count(idx & zmask) & 1).astype(np.int8)


def _apply_masks(x: int, z: int, coeff: complex, vec: np.ndarray, n: int) -> np.ndarray:
    idx = basis_indices(n)
    out = np.empty_like(vec)
    out[idx ^ x] = coeff * _parity_sign(idx, z) * vec
    return out


def _check_sites(max_site: int, n: int):
    if max_site >= n:
        raise ValueError(f"site {max_site} out of range for {n} qubits")


def apply_pauli_string(s: PauliString, psi: StateVector) -> StateVector:
    """Return ``s |psi>``."""
    n = psi.n_qubits
    _check_sites(s.max_site(), n)
    coeff = s.phase * _ipow(s.n_y)
    return StateVector(_apply_masks(s.xmask, s.zmask, coeff, psi.amplitudes, n))


def apply_spin_operator(op: SpinOperator, vec: np.ndarray, n: int) -> np.ndarray:
    """Unnormalized ``op @ vec`` on a raw amplitude array."""
    _check_sites(op.max_site(), n)
    out = np.zeros_like(vec)
    for (x, z), c in op.key_dict().items():
        out += _apply_masks(x, z, c * _ipow(_popcount(x & z)), vec, n)
    return out


def spin_operator_sparse(op: SpinOperator, n_qubits: int) -> sp.csr_matrix:
    """Sparse matrix of a spin operator on ``n_qubits`` qubits."""
    _check_sites(op.max_site(), n_qubits)
    dim = 2**n_qubits
    idx = basis_indices(n_qubits)
    d = op.key_dict()
    if not d:
        return sp.csr_matrix((dim, dim), dtype=complex)
    rows, cols, vals = [], [], []
    for (x, z), c in d.items():
        rows.append(idx ^ x)
        cols.append(idx)
        vals.append(c * _ipow(_popcount(x & z)) * _parity_sign(idx, z))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    return mat.tocsr()


def expectation(op: SpinOperator, psi: StateVector) -> complex:
    """``<psi|op|psi>``."""
    n = psi.n_qubits
    if op.max_site() >= n:
        raise ValueError(f"operator acts on site {op.max_site()} but state has {n} qubits")
    v = psi.amplitudes
    return complex(np.vdot(v, apply_spin_operator(op, v, n)))


def taylor_expm_apply(
    matvec: Callable[[np.ndarray], np.ndarray],
    scale: complex,
    vec: np.ndarray,
    norm_bound: float,
    tol: float = 1e-14,
    max_terms: int = 128,
) -> np.ndarray:
    """Unnormalized ``exp(scale * A) vec`` by a truncated Taylor series.

    The interval is split into ``s`` pieces with ``|scale| * norm_bound / s <= 1``
    and each piece is summed until the added term falls below ``tol`` relative
    to the partial sum.
    """
    if scale == 0 or norm_bound == 0:
        return vec.copy()
    s = max(1, int(math.ceil(abs(scale) * norm_bound)))
    h = scale / s
    out = vec.copy()
    for _ in range(s):
        term = out
        acc = out.copy()
        for k in range(1, max_terms + 1):
            term = matvec(term) * (h / k)
            acc += term
            tn = np.linalg.norm(term)
            if tn <= tol * max(np.linalg.norm(acc), 1e-300):
                break
        else:
            raise RuntimeError(
                f"Taylor series did not converge in {max_terms} terms (last term norm {tn:.3e})"
            )
        out = acc
    return out


def apply_exp_hermitian(
    A: SpinOperator,
    scale: complex,
    psi: StateVector,
    tol: float = 1e-14,
    max_terms: int = 128,
) -> tuple[StateVector, float]:
    """Normalized ``exp(scale * A) |psi>`` and the norm before normalization.

    Parameters
    ----------
    A : SpinOperator
        Hermitian generator.
    scale : complex
        ``-i dtau`` for unitary updates, ``-dtau`` for imaginary-time steps.

    Returns
    -------
    state : StateVector
    norm : float
        ``||exp(scale * A) psi||``.
    """
    if not A.is_hermitian():
        raise ValueError("generator is not Hermitian")
    n = psi.n_qubits
    _check_sites(A.max_site(), n)
    v = taylor_expm_apply(
        lambda w: apply_spin_operator(A, w, n), scale, psi.amplitudes, A.norm_bound(), tol, max_terms
    )
    nrm = float(np.linalg.norm(v))
    return StateVector(v / nrm), nrm


def local_matrix(op: SpinOperator, sites: Sequence[int]) -> np.ndarray:
    """Dense ``2^k x 2^k`` matrix of ``op`` on ``sites`` (``sites[0]`` is the low bit)."""
    pos = {s: i for i, s in enumerate(sites)}
    terms = []
    for c, s in op.terms:
        if any(q not in pos for q in s.sites):
            raise ValueError(f"operator acts outside {tuple(sites)}")
        facs = {pos[q]: f for q, f in s.factors}
        terms.append((c, PauliString.from_dict(facs, s.phase)))
    return SpinOperator(tuple(terms)).to_dense(len(sites))


def apply_local_matrix(vec: np.ndarray, n_qubits: int, sites: Sequence[int], mat: np.ndarray) -> np.ndarray:
    """Apply a ``2^k x 2^k`` matrix acting on ``sites`` to a raw amplitude array."""
    k = len(sites)
    # qubit q is tensor axis n - 1 - q; ordering sites[k-1]..sites[0] keeps sites[0] as the low bit
    axes = [n_qubits - 1 - q for q in reversed(sites)]
    t = np.moveaxis(vec.reshape((2,) * n_qubits), axes, range(k))
    shape = t.shape
    out = (mat @ t.reshape(2**k, -1)).reshape(shape)
    return np.moveaxis(out, range(k), axes).reshape(-1)
