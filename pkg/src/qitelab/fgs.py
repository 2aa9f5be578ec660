"""Fermionic Gaussian states and generalized Hartree-Fock.

A pure fermionic Gaussian state (FGS) on ``L`` modes is described by its
covariance matrix ``Gamma_kl = (i/2) <[a_k, a_l]>``, a real antisymmetric
``2L x 2L`` matrix with ``Gamma^2 = -1``. Majoranas follow the conventions of
:mod:`qitelab.operators` (interleaved ordering ``a_0, a_1, ...``). Wick's
theorem gives ``<a_{i_1} ... a_{i_2m}> = (-i)^m Pf(Gamma|_{i_1 ... i_2m})``.

With these conventions the vacuum has ``Gamma_{2p, 2p+1} = -1`` and the
fermion parity is ``<(-1)^N> = (-1)^L Pf(Gamma)``.

The "pq" ordering lists the even Majoranas first, ``(a_0, a_2, ..., a_1, a_3, ...)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .operators import (
    FermionOperator,
    MajoranaMonomial,
    PauliString,
    SpinOperator,
    StateVector,
    apply_pauli_string,
    fermion_sparse,
    pauli_to_majorana,
)

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Pfaffians


def pfaffian(A: np.ndarray) -> float:
    """Pfaffian of a real or complex antisymmetric matrix.

    Parlett-Reid tridiagonalization with partial pivoting, ``O(n^3)``.
    The input is antisymmetrized as ``(A - A^T) / 2``.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if A.shape[0] % 2:
        raise ValueError("Pfaffian of an odd-dimensional matrix")
    return pfaffian_batch(A[None])[0]


def pfaffian_batch(A: np.ndarray) -> np.ndarray:
    """Pfaffians of a stack of antisymmetric matrices with shape ``(B, n, n)``."""
    A = np.asarray(A)
    A = 0.5 * (A - np.swapaxes(A, -1, -2))
    B, n, _ = A.shape
    if n % 2:
        raise ValueError("Pfaffian of an odd-dimensional matrix")
    dtype = np.result_type(A.dtype, float)
    A = A.astype(dtype, copy=True)
    pf = np.ones(B, dtype=dtype)
    if n == 0:
        return pf
    rows = np.arange(B)
    for k in range(0, n - 1, 2):
        kp = k + 1 + np.argmax(np.abs(A[:, k + 1 :, k]), axis=1)
        swap = kp != k + 1
        if swap.any():
            b, p = rows[swap], kp[swap]
            tmp = A[b, k + 1, :].copy()
            A[b, k + 1, :] = A[b, p, :]
            A[b, p, :] = tmp
            tmp = A[b, :, k + 1].copy()
            A[b, :, k + 1] = A[b, :, p]
            A[b, :, p] = tmp
            pf[swap] *= -1
        piv = A[:, k, k + 1]
        pf *= piv
        if k + 2 < n:
            safe = np.where(piv == 0, 1.0, piv)
            tau = A[:, k, k + 2 :] / safe[:, None]
            u = A[:, k + 2 :, k + 1]
            A[:, k + 2 :, k + 2 :] += tau[:, :, None] * u[:, None, :] - u[:, :, None] * tau[:, None, :]
    return pf


def pfaffian_cofactor(A: np.ndarray) -> float:
    """Pfaffian by recursive expansion along the first row (``O(n!!)``)."""
    A = np.asarray(A)
    n = A.shape[0]
    if n % 2:
        raise ValueError("Pfaffian of an odd-dimensional matrix")
    if n == 0:
        return 1.0
    total = 0.0
    for j in range(1, n):
        if A[0, j] == 0:
            continue
        keep = [k for k in range(1, n) if k != j]
        total += (-1) ** (j + 1) * A[0, j] * pfaffian_cofactor(A[np.ix_(keep, keep)])
    return total


@lru_cache(maxsize=64)
def _minor_tables(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pairs = list(combinations(range(n), 2))
    a = np.array([p[0] for p in pairs], dtype=np.int64)
    b = np.array([p[1] for p in pairs], dtype=np.int64)
    keep = np.array([[k for k in range(n) if k not in p] for p in pairs], dtype=np.int64).reshape(len(pairs), n - 2)
    return a, b, keep


def pfaffian_gradient_batch(A: np.ndarray) -> np.ndarray:
    """``dPf/dA_ab`` for ``a < b`` with ``A_ba = -A_ab`` tied, as an antisymmetric stack.

    Uses the cofactor identity ``dPf/dA_ab = (-1)^{a+b+1} Pf(A without rows/cols a, b)``
    so that singular submatrices need no inversion.
    """
    B, n, _ = A.shape
    a, b, keep = _minor_tables(n)
    if n == 2:
        minors = np.ones((B, 1), dtype=A.dtype)
    else:
        sub = A[:, keep[:, :, None], keep[:, None, :]]
        minors = pfaffian_batch(sub.reshape(-1, n - 2, n - 2)).reshape(B, len(a))
    sign = np.where((a + b) % 2 == 1, 1.0, -1.0)
    G = np.zeros((B, n, n), dtype=minors.dtype)
    G[:, a, b] = sign * minors
    G[:, b, a] = -sign * minors
    return G


# ---------------------------------------------------------------------------
# Covariance matrices


def interleaved_to_pq(L: int) -> np.ndarray:
    """Permutation ``perm`` with ``Gamma_pq = Gamma[perm][:, perm]``."""
    return np.concatenate([np.arange(0, 2 * L, 2), np.arange(1, 2 * L, 2)])


@dataclass(frozen=True)
class CovarianceMatrix:
    """Majorana covariance matrix with an ordering tag.

    Parameters
    ----------
    gamma : (2L, 2L) ndarray
        Real antisymmetric matrix.
    ordering : {"interleaved", "pq"}
    """

    gamma: np.ndarray
    ordering: str = "interleaved"

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] % 2:
            raise ValueError("covariance matrix must be 2L x 2L")
        if np.abs(g + g.T).max(initial=0.0) > 1e-10:
            raise ValueError("covariance matrix is not antisymmetric")
        if self.ordering not in ("interleaved", "pq"):
            raise ValueError(f"unknown ordering {self.ordering!r}")
        g = 0.5 * (g - g.T)
        g.flags.writeable = False
        object.__setattr__(self, "gamma", g)

    @property
    def n_modes(self) -> int:
        return self.gamma.shape[0] // 2

    def to_pq(self) -> CovarianceMatrix:
        if self.ordering == "pq":
            return self
        p = interleaved_to_pq(self.n_modes)
        return CovarianceMatrix(self.gamma[np.ix_(p, p)], "pq")

    def to_interleaved(self) -> CovarianceMatrix:
        if self.ordering == "interleaved":
            return self
        p = np.argsort(interleaved_to_pq(self.n_modes))
        return CovarianceMatrix(self.gamma[np.ix_(p, p)], "interleaved")

    def purity_residual(self) -> float:
        g = self.gamma
        return float(np.abs(g @ g + np.eye(len(g))).max())

    def is_pure(self, tol: float = 1e-8) -> bool:
        return self.purity_residual() < tol

    def parity(self) -> int:
        """+1 for even, -1 for odd fermion parity (pure states)."""
        pf = pfaffian(self.to_interleaved().gamma)
        return int(np.sign(pf)) * (-1) ** self.n_modes

    def save(self, path) -> None:
        np.savetxt(path, self.gamma, header=f"ordering={self.ordering}", fmt="%.17g")

    @classmethod
    def load(cls, path) -> CovarianceMatrix:
        with open(path) as fh:
            head = fh.readline()
        ordering = head.split("ordering=")[1].strip() if "ordering=" in head else "interleaved"
        return cls(np.loadtxt(path, ndmin=2), ordering)


def _gamma(g) -> np.ndarray:
    if isinstance(g, CovarianceMatrix):
        return g.to_interleaved().gamma
    return np.asarray(g, dtype=float)


def vacuum_covariance(L: int) -> CovarianceMatrix:
    g = np.zeros((2 * L, 2 * L))
    for p in range(L):
        g[2 * p, 2 * p + 1] = -1.0
        g[2 * p + 1, 2 * p] = 1.0
    return CovarianceMatrix(g)


def occupation_covariance(L: int, occupied) -> CovarianceMatrix:
    """Covariance of a computational basis state with the given modes filled."""
    g = vacuum_covariance(L).gamma.copy()
    for p in occupied:
        g[2 * p, 2 * p + 1] = 1.0
        g[2 * p + 1, 2 * p] = -1.0
    return CovarianceMatrix(g)


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random orthogonal matrix."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_pure_covariance(L: int, rng: np.random.Generator, parity: int | None = None) -> CovarianceMatrix:
    """Haar-random pure covariance matrix, optionally of fixed parity."""
    O = random_orthogonal(2 * L, rng)
    if parity is not None and round(np.linalg.det(O)) != parity:
        O[:, 0] *= -1
    g = O @ vacuum_covariance(L).gamma @ O.T
    return CovarianceMatrix(g)


def majorana_string(mu: int) -> PauliString:
    """Pauli form of the single Majorana ``a_mu``."""
    j, odd = divmod(mu, 2)
    facs = {k: "Z" for k in range(j)}
    facs[j] = "Y" if odd else "X"
    return PauliString.from_dict(facs)


def covariance_from_state(psi: StateVector) -> CovarianceMatrix:
    """``Gamma_kl = (i/2) <[a_k, a_l]> = -Im <a_k psi | a_l psi>``."""
    L = psi.n_qubits
    vecs = np.array([apply_pauli_string(majorana_string(mu), psi).amplitudes for mu in range(2 * L)])
    gram = vecs.conj() @ vecs.T
    g = -gram.imag
    np.fill_diagonal(g, 0.0)
    return CovarianceMatrix(g)


def _w_matrix(L: int) -> np.ndarray:
    # interleaved Majoranas in terms of (c_0..c_{L-1}, c_0^dag..c_{L-1}^dag)
    W = np.zeros((2 * L, 2 * L), dtype=complex)
    for j in range(L):
        W[2 * j, j] = 1.0
        W[2 * j, L + j] = 1.0
        W[2 * j + 1, j] = -1j
        W[2 * j + 1, L + j] = 1j
    return W


def covariance_from_density(rho: np.ndarray) -> CovarianceMatrix:
    """Covariance of a number-conserving state with ``rho_ij = <c_i^dag c_j>``."""
    L = rho.shape[0]
    M = np.zeros((2 * L, 2 * L), dtype=complex)
    M[:L, L:] = np.eye(L) - rho.T  # <c_i c_j^dag>
    M[L:, :L] = rho  # <c_i^dag c_j>
    W = _w_matrix(L)
    aa = W @ M @ W.T
    g = (0.5j * (aa - aa.T)).real
    return CovarianceMatrix(g)


def density_from_covariance(g) -> np.ndarray:
    """``rho_ij = <c_i^dag c_j>`` from a covariance matrix (pairing ignored)."""
    g = _gamma(g)
    L = g.shape[0] // 2
    aa = 1j * (-g) + np.eye(2 * L)  # <a_k a_l> = delta_kl - i Gamma_kl
    Winv = np.linalg.inv(_w_matrix(L))
    M = Winv @ aa @ Winv.T
    return M[L:, :L]


# ---------------------------------------------------------------------------
# Energy functionals


@dataclass(frozen=True, eq=False)
class MajoranaPolynomialEnergy:
    """``E(Gamma) = constant + sum_mu w_mu Pf(Gamma|_mu)``.

    Monomials are grouped by length; ``groups[n] = (weights, indices)`` with
    ``indices`` of shape ``(M, n)``. Weights are real for Hermitian input.
    """

    n_modes: int
    constant: float
    groups: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def from_monomials(cls, n_modes: int, monomials, constant: float = 0.0) -> MajoranaPolynomialEnergy:
        """Build from ``MajoranaMonomial`` objects (operator coefficients)."""
        acc: dict[tuple[int, ...], complex] = {}
        const = complex(constant)
        for m in monomials:
            k = len(m.indices)
            if k % 2:
                raise ValueError("odd Majorana monomials break parity")
            if k == 0:
                const += m.coefficient
                continue
            w = m.coefficient * (-1j) ** (k // 2)
            acc[m.indices] = acc.get(m.indices, 0.0) + w
        if abs(const.imag) > 1e-10 or any(abs(w.imag) > 1e-10 for w in acc.values()):
            raise ValueError("energy functional is not real; operator not Hermitian")
        groups: dict[int, tuple[list, list]] = {}
        for idx, w in sorted(acc.items()):
            if abs(w) < 1e-14:
                continue
            ws, ids = groups.setdefault(len(idx), ([], []))
            ws.append(w.real)
            ids.append(idx)
        packed = {
            n: (np.array(ws, dtype=float), np.array(ids, dtype=np.int64).reshape(len(ids), n))
            for n, (ws, ids) in sorted(groups.items())
        }
        return cls(n_modes, float(const.real), packed)

    @classmethod
    def from_spin_operator(cls, op: SpinOperator, n_modes: int) -> MajoranaPolynomialEnergy:
        monos = []
        for c, s in op.terms:
            m = pauli_to_majorana(s, n_modes)
            monos.append(MajoranaMonomial(c * m.coefficient, m.indices))
        return cls.from_monomials(n_modes, monos)

    @classmethod
    def from_hamiltonian(cls, H) -> MajoranaPolynomialEnergy:
        return cls.from_spin_operator(H.spin_operator(), H.n_qubits)

    def n_monomials(self) -> int:
        return sum(len(w) for w, _ in self.groups.values())


def wick_expectation(gamma, mono: MajoranaMonomial) -> complex:
    """``<coefficient * a_{i_1} ... a_{i_k}>`` for the Gaussian state ``gamma``."""
    g = _gamma(gamma)
    idx = list(mono.indices)
    if len(set(idx)) != len(idx):
        raise ValueError("repeated Majorana index; reduce with a_k^2 = 1 first")
    k = len(idx)
    if k % 2:
        return 0.0
    if k == 0:
        return mono.coefficient
    return complex(mono.coefficient * (-1j) ** (k // 2) * pfaffian(g[np.ix_(idx, idx)]))


def ghf_energy(gamma, E: MajoranaPolynomialEnergy) -> float:
    """Mean-field energy of a Gaussian state."""
    g = _gamma(gamma)
    total = E.constant
    for n, (w, idx) in E.groups.items():
        if n == 2:
            total += float(w @ g[idx[:, 0], idx[:, 1]])
        else:
            sub = g[idx[:, :, None], idx[:, None, :]]
            total += float(w @ pfaffian_batch(sub))
    return float(total)


def mean_field_matrix(gamma, E: MajoranaPolynomialEnergy, cond_max: float = 1e8) -> np.ndarray:
    """``F = 4 dE/dGamma`` (antisymmetrized gradient).

    Each monomial contributes ``2 w Pf(A) (A^{-1})^T`` embedded at its
    indices; ill-conditioned submatrices switch to the cofactor form.
    """
    g = _gamma(gamma)
    F = np.zeros_like(g)
    for n, (w, idx) in E.groups.items():
        if n == 2:
            np.add.at(F, (idx[:, 0], idx[:, 1]), 2.0 * w)
            np.add.at(F, (idx[:, 1], idx[:, 0]), -2.0 * w)
            continue
        sub = g[idx[:, :, None], idx[:, None, :]]
        pf = pfaffian_batch(sub)
        cond = np.linalg.cond(sub)
        good = np.isfinite(cond) & (cond < cond_max)
        grad = np.empty_like(sub)
        if good.any():
            inv = np.linalg.inv(sub[good])
            grad[good] = pf[good, None, None] * np.swapaxes(inv, -1, -2)
        if (~good).any():
            grad[~good] = pfaffian_gradient_batch(sub[~good])
        contrib = 2.0 * w[:, None, None] * grad
        np.add.at(F, (idx[:, :, None], idx[:, None, :]), contrib)
    return 0.5 * (F - F.T)


# ---------------------------------------------------------------------------
# Pure-state projections


def pure_projection(X: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, bool]:
    """Closest pure covariance ``X (-X^2)^{-1/2}`` to an antisymmetric ``X``.

    Null directions of ``X`` receive the deterministic choice
    ``[[0, -1], [1, 0]]`` on consecutive null vectors (sign +1 convention).

    Returns
    -------
    gamma : ndarray
    degenerate : bool
        True when a null space had to be filled.
    """
    X = 0.5 * (X - X.T)
    lam, V = np.linalg.eigh(X.T @ X)
    scale = max(1.0, float(lam.max(initial=0.0)))
    nz = lam > tol * scale
    Vp = V[:, nz]
    out = X @ (Vp / np.sqrt(lam[nz])) @ Vp.T
    degenerate = bool((~nz).any())
    if degenerate:
        N = V[:, ~nz]
        J = np.zeros((N.shape[1], N.shape[1]))
        for k in range(0, N.shape[1] - 1, 2):
            J[k, k + 1] = -1.0
            J[k + 1, k] = 1.0
        out = out + N @ J @ N.T
    return 0.5 * (out - out.T), degenerate


def self_consistent_step(F: np.ndarray) -> tuple[np.ndarray, bool]:
    """Pure covariance minimizing ``tr(F^T Gamma) / 4``: ``Gamma = -sgn(F)``."""
    g, deg = pure_projection(F)
    return -g, deg


def aufbau_density(f: np.ndarray, n_electrons: int) -> tuple[np.ndarray, float]:
    """Fill the lowest ``n_electrons`` orbitals of a Hermitian one-body matrix.

    Returns the density ``rho_ij = <c_i^dag c_j>`` and the HOMO-LUMO gap.
    """
    eps, U = np.linalg.eigh(0.5 * (f + f.conj().T))
    occ = U[:, :n_electrons]
    rho = occ.conj() @ occ.T
    gap = float(eps[n_electrons] - eps[n_electrons - 1]) if 0 < n_electrons < len(eps) else math.inf
    return rho, gap


def fock_from_mean_field(F: np.ndarray) -> np.ndarray:
    """Number-conserving one-body matrix ``f_ij = dE/drho_ij`` from ``F``."""
    L = F.shape[0] // 2
    W = _w_matrix(L)
    K = W.T @ F @ W
    return -0.25j * (K[:L, L:].T - K[L:, :L])


# ---------------------------------------------------------------------------
# Minimization


@dataclass(frozen=True)
class GhfConfig:
    """Settings for :func:`ghf_minimize`.

    Attributes
    ----------
    seed : int
        Restart ``r`` uses ``numpy.random.default_rng(seed + r)``.
    restarts : int
    warmup_iterations : int
        Maximum self-consistent iterations before the flow.
    warmup_tol : float
    flow_step : float
        Initial explicit-Euler step of the covariance flow.
    flow_iterations : int
    tol : float
        Stop when ``max |[Gamma, F]|`` falls below this value.
    n_electrons : int, optional
        Enables the number-conserving (HF) mode with this electron count.
    """

    seed: int = 0
    restarts: int = 10
    warmup_iterations: int = 500
    warmup_tol: float = 1e-10
    flow_step: float = 0.05
    flow_iterations: int = 5000
    tol: float = 1e-8
    n_electrons: int | None = None


@dataclass(frozen=True)
class GhfRun:
    restart: int
    seed: int
    iterations: int
    energy: float
    purity_residual: float
    converged: bool
    degenerate: bool
    flow_energies: tuple[float, ...] = ()


@dataclass(frozen=True)
class GhfResult:
    """Best covariance matrix over all restarts plus a per-restart log."""

    gamma: CovarianceMatrix
    energy: float
    parity: int
    converged: bool
    degenerate: bool
    runs: tuple[GhfRun, ...]

    def summary_rows(self) -> list[dict]:
        return [
            {
                "restart": r.restart,
                "iterations": r.iterations,
                "energy": r.energy,
                "purity_residual": r.purity_residual,
            }
            for r in self.runs
        ]


def _flow(g: np.ndarray, E: MajoranaPolynomialEnergy, cfg: GhfConfig, history: list) -> tuple[np.ndarray, float, int, bool, bool]:
    e = ghf_energy(g, E)
    history.append(e)
    h = cfg.flow_step
    degenerate = False
    for it in range(1, cfg.flow_iterations + 1):
        F = mean_field_matrix(g, E)
        C = g @ F - F @ g
        if np.abs(C).max() < cfg.tol:
            return g, e, it, True, degenerate
        D = 0.5 * (g @ C - C @ g)
        while True:
            trial, deg = pure_projection(g + h * D)
            e_trial = ghf_energy(trial, E)
            if e_trial <= e + 1e-12:
                break
            h *= 0.5
            if h < 1e-14:
                return g, e, it, False, degenerate
        degenerate |= deg
        g, e = trial, e_trial
        history.append(e)
        h = min(2.0 * h, cfg.flow_step)
    return g, e, cfg.flow_iterations, False, degenerate


def _warmup(g: np.ndarray, E: MajoranaPolynomialEnergy, cfg: GhfConfig) -> tuple[np.ndarray, int, bool]:
    degenerate = False
    best, e_best = g, ghf_energy(g, E)
    for it in range(1, cfg.warmup_iterations + 1):
        new, deg = self_consistent_step(mean_field_matrix(g, E))
        degenerate |= deg
        change = np.abs(new - g).max()
        g = new
        e = ghf_energy(g, E)
        if e < e_best:
            best, e_best = g, e
        if change < cfg.warmup_tol:
            break
    return best, it, degenerate


def _hf_minimize(E: MajoranaPolynomialEnergy, L: int, cfg: GhfConfig, rng) -> tuple[np.ndarray, float, int, bool]:
    n_el = cfg.n_electrons
    q, _ = np.linalg.qr(rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L)))
    occ = q[:, :n_el]
    rho = occ.conj() @ occ.T
    g = covariance_from_density(rho).gamma
    e = ghf_energy(g, E)
    best = (g, e)
    for it in range(1, cfg.warmup_iterations + 1):
        f = fock_from_mean_field(mean_field_matrix(g, E))
        rho_new, _ = aufbau_density(f, n_el)
        change = np.abs(rho_new - rho).max()
        rho = rho_new
        g = covariance_from_density(rho).gamma
        e = ghf_energy(g, E)
        if e < best[1]:
            best = (g, e)
        if change < cfg.warmup_tol:
            return g, e, it, True
    return best[0], best[1], cfg.warmup_iterations, False


def ghf_minimize(E: MajoranaPolynomialEnergy, L: int | None = None, config: GhfConfig | None = None) -> GhfResult:
    """Minimize the mean-field energy over pure Gaussian states.

    Each restart draws a Haar-random pure covariance, iterates the
    self-consistent map ``Gamma <- -sgn(F(Gamma))`` as a warm-up and then
    follows the flow ``dGamma/dtau = [Gamma, [Gamma, F]] / 2`` with
    step halving on energy increase and purity re-projection. With
    ``config.n_electrons`` set the search is restricted to Slater
    determinants via aufbau filling of the number-conserving Fock matrix.
    """
    cfg = config or GhfConfig()
    L = E.n_modes if L is None else L
    runs = []
    best = None
    for r in range(cfg.restarts):
        seed = cfg.seed + r
        rng = np.random.default_rng(seed)
        history: list[float] = []
        if cfg.n_electrons is not None:
            g, e, iters, conv = _hf_minimize(E, L, cfg, rng)
            deg = False
        else:
            g0 = random_pure_covariance(L, rng).gamma
            g, it_w, deg_w = _warmup(g0, E, cfg)
            g, e, it_f, conv, deg_f = _flow(g, E, cfg, history)
            iters, deg = it_w + it_f, deg_w or deg_f
        cov = CovarianceMatrix(g)
        run = GhfRun(r, seed, iters, e, cov.purity_residual(), conv, deg, tuple(history))
        runs.append(run)
        log.debug("GHF restart %d: E=%.10f iters=%d converged=%s", r, e, iters, conv)
        if best is None or e < best[1] - 1e-12:
            best = (cov, e, run)
    cov, e, run = best
    return GhfResult(cov, e, cov.parity(), run.converged, run.degenerate, tuple(runs))


# ---------------------------------------------------------------------------
# State synthesis


@dataclass(frozen=True)
class QuadraticGenerator:
    """Gaussian unitary ``exp(A^T K A / 4)`` in pq ordering and its complex form.

    ``M`` (Hermitian) and ``Delta`` (antisymmetric) satisfy
    ``[[-Delta*, -M*], [M, Delta]] = -(i/2) W^T K W`` with ``W = [[1, 1], [-i, i]]``,
    so the unitary equals ``exp(i H_q)`` with
    ``H_q = 1/2 (c, c^dag)^T [[-Delta*, -M*], [M, Delta]] (c, c^dag)``.
    """

    log_r: np.ndarray
    parity: int
    M: np.ndarray
    Delta: np.ndarray

    def fermion_operator(self) -> FermionOperator:
        """``i H_q`` as a fermion operator."""
        L = self.M.shape[0]
        X = np.block([[-self.Delta.conj(), -self.M.conj()], [self.M, self.Delta]])
        ladders = [(j, False) for j in range(L)] + [(j, True) for j in range(L)]
        terms = []
        for a in range(2 * L):
            for b in range(2 * L):
                if abs(X[a, b]) > 1e-15:
                    terms.append((0.5j * X[a, b], (ladders[a], ladders[b])))
        return FermionOperator(tuple(terms))


def _complex_structure_basis(gpq: np.ndarray) -> np.ndarray:
    """Orthogonal ``Q`` with ``Q^T Gamma_pq Q = [[0, -1], [1, 0]]``."""
    n = gpq.shape[0]
    L = n // 2
    cols: list[np.ndarray] = []
    partners: list[np.ndarray] = []
    basis = np.zeros((n, 0))
    for _ in range(L):
        # pivoted Gram-Schmidt over unit vectors, Gamma-invariant span
        resid = np.eye(n) - basis @ (basis.T @ np.eye(n))
        k = int(np.argmax(np.linalg.norm(resid, axis=0)))
        q = resid[:, k] / np.linalg.norm(resid[:, k])
        p = gpq @ q
        cols.append(q)
        partners.append(p)
        basis = np.column_stack([basis, q, p])
    return np.column_stack(cols + partners)


def _real_log_orthogonal(R: np.ndarray) -> np.ndarray | None:
    K, _ = sla.logm(R, disp=False)
    K = np.real_if_close(K, tol=1e6)
    if np.iscomplexobj(K):
        return None
    K = 0.5 * (K - K.T)
    if np.abs(sla.expm(K) - R).max() > 1e-9:
        return None
    return K


def quadratic_generator(gamma, seed: int = 0) -> QuadraticGenerator:
    """Gaussian unitary mapping ``|0...0>`` (even) or ``|0...01>`` (odd) to ``gamma``."""
    cov = gamma if isinstance(gamma, CovarianceMatrix) else CovarianceMatrix(gamma)
    if not cov.is_pure():
        raise ValueError(f"covariance matrix is not pure (residual {cov.purity_residual():.2e})")
    L = cov.n_modes
    gpq = cov.to_pq().gamma
    Q = _complex_structure_basis(gpq)
    parity = 1 if np.linalg.det(Q) > 0 else -1
    rng = np.random.default_rng(seed)
    K = None
    for attempt in range(20):
        if attempt:
            # right-multiply by a random U(L) element, which leaves Gamma unchanged
            u, _ = np.linalg.qr(rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L)))
            S = np.block([[u.real, -u.imag], [u.imag, u.real]])
            Qs = Q @ S
        else:
            Qs = Q
        R = Qs.copy()
        if parity < 0:
            R[:, -1] *= -1  # R-bar
        K = _real_log_orthogonal(R)
        if K is not None:
            break
    if K is None:
        raise RuntimeError("could not find a real logarithm of the orthogonal transformation")
    Wm = np.block([[np.eye(L), np.eye(L)], [-1j * np.eye(L), 1j * np.eye(L)]])
    X = -0.5j * Wm.T @ K @ Wm
    M = X[L:, :L]
    Delta = X[L:, L:]
    return QuadraticGenerator(K, parity, M, Delta)


def synthesize_fgs_state(gamma, seed: int = 0) -> StateVector:
    """Statevector of a pure Gaussian state with covariance ``gamma``.

    The even branch applies the Gaussian unitary to the vacuum and the odd
    branch to the state with only the last mode occupied. Requires
    ``L <= 14``.
    """
    cov = gamma if isinstance(gamma, CovarianceMatrix) else CovarianceMatrix(gamma)
    L = cov.n_modes
    if L > 14:
        raise ValueError("statevector synthesis limited to 14 modes")
    gen = quadratic_generator(cov, seed)
    start = np.zeros(2**L, dtype=complex)
    start[0 if gen.parity > 0 else 1 << (L - 1)] = 1.0
    G = fermion_sparse(gen.fermion_operator(), L)
    vec = spla.expm_multiply(G, start)
    vec /= np.linalg.norm(vec)
    j = int(np.argmax(np.abs(vec)))
    vec *= abs(vec[j]) / vec[j]
    return StateVector(vec)


def slater_determinant(orbitals: np.ndarray, n_modes: int | None = None) -> StateVector:
    """``d_1^dag ... d_n^dag |vac>`` with ``d_k^dag = sum_i C_ik c_i^dag``.

    Parameters
    ----------
    orbitals : (n_modes, n_el) array
        Orthonormal columns.
    """
    C = np.asarray(orbitals, dtype=complex)
    if C.ndim == 1:
        C = C[:, None]
    nm, ne = C.shape
    if n_modes is not None and n_modes != nm:
        raise ValueError("orbital matrix rows must equal the number of modes")
    if np.abs(C.conj().T @ C - np.eye(ne)).max() > 1e-10:
        raise ValueError("orbital columns are not orthonormal")
    vec = np.zeros(2**nm, dtype=complex)
    if ne == 0:
        vec[0] = 1.0
        return StateVector(vec)
    subsets = np.array(list(combinations(range(nm), ne)), dtype=np.int64)
    dets = np.linalg.det(C[subsets])
    idx = (1 << subsets).sum(axis=1)
    vec[idx] = dets
    return StateVector(vec / np.linalg.norm(vec))


def orbitals_from_covariance(gamma, n_electrons: int | None = None, tol: float = 1e-8) -> np.ndarray:
    """Occupied orbitals ``C`` of a number-conserving pure Gaussian state.

    Raises if the state carries pairing correlations.
    """
    rho = density_from_covariance(gamma)
    w, V = np.linalg.eigh(0.5 * (rho.T + rho.conj()))
    occ = w > 0.5
    if np.abs(w - occ).max() > tol:
        raise ValueError("covariance matrix is not a Slater determinant")
    if n_electrons is not None and occ.sum() != n_electrons:
        raise ValueError(f"state holds {occ.sum()} electrons, not {n_electrons}")
    return V[:, occ]


def gaussian_state(gamma, n_electrons: int | None = None, seed: int = 0) -> StateVector:
    """Statevector of a pure Gaussian state, using the determinant route when possible."""
    try:
        C = orbitals_from_covariance(gamma, n_electrons)
    except ValueError:
        if n_electrons is not None:
            raise
        return synthesize_fgs_state(gamma, seed)
    return slater_determinant(C)
