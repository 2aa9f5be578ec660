"""Exact and second-order trotterized imaginary time evolution."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diagnostics import DENSE_MAX_QUBITS, fidelity
from .hamiltonians import ProblemHamiltonian, TrotterSchedule, sector_basis
from .operators import FermionOperator, StateVector, apply_local_matrix, local_matrix, taylor_expm_apply

CSV_FIELDS = ("tau", "energy", "fidelity", "c_norm", "residual")


@dataclass(frozen=True)
class TraceRow:
    tau: float
    energy: float
    fidelity: float | None = None
    c_norm: float | None = None
    residual: float | None = None


@dataclass
class EvolutionTrace:
    """Time series of energies and fidelities along an evolution.

    Rows must have strictly increasing ``tau``, finite energy and fidelity in
    ``[0, 1]``. ``c_norm`` is the product of the normalization constants
    collected since the previous row; ``residual`` is the largest linear
    solver residual (QITE only).
    """

    rows: list[TraceRow] = field(default_factory=list)
    label: str = ""

    def append(self, tau, energy, fidelity=None, c_norm=None, residual=None) -> None:
        if self.rows and not tau > self.rows[-1].tau:
            raise ValueError(f"tau must increase ({tau} after {self.rows[-1].tau})")
        if not math.isfinite(energy):
            raise ValueError(f"non-finite energy at tau={tau}")
        if fidelity is not None and not -1e-12 <= fidelity <= 1 + 1e-12:
            raise ValueError(f"fidelity {fidelity} outside [0, 1]")
        self.rows.append(TraceRow(float(tau), float(energy), fidelity, c_norm, residual))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def taus(self) -> np.ndarray:
        return np.array([r.tau for r in self.rows])

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.rows])

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([np.nan if r.fidelity is None else r.fidelity for r in self.rows])

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]

    def at(self, tau: float) -> TraceRow:
        """Row closest to ``tau``."""
        return self.rows[int(np.argmin(np.abs(self.taus - tau)))]

    def to_csv(self, path=None, header: str | None = None) -> str:
        """Write ``tau,energy,fidelity,c_norm,residual``; empty fields for missing values."""
        buf = io.StringIO()
        if header:
            for line in header.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow(["" if v is None else repr(float(v)) for v in (r.tau, r.energy, r.fidelity, r.c_norm, r.residual)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> EvolutionTrace:
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        trace = cls()
        for rec in csv.DictReader(lines):
            vals = {k: (float(v) if v != "" else None) for k, v in rec.items()}
            trace.append(vals["tau"], vals["energy"], vals["fidelity"], vals["c_norm"], vals["residual"])
        return trace


# ---------------------------------------------------------------------------
# Working space: full register or fermionic sector


class _Space:
    """Vectors restricted to a fermionic sector when the initial state allows it."""

    def __init__(self, H: ProblemHamiltonian, psi: StateVector):
        self.H = H
        self.n = H.n_qubits
        if psi.n_qubits != self.n:
            raise ValueError(f"state has {psi.n_qubits} qubits, Hamiltonian {self.n}")
        self.basis = None
        if H.kind == "fermionic" and H.n_electrons is not None:
            basis = sector_basis(H.n_sites, H.n_electrons, H.sz2)
            inside = np.linalg.norm(psi.amplitudes[basis])
            if abs(inside - 1.0) < 1e-10:
                self.basis = basis
        self.matrix = H.sparse(self.basis)

    def restrict(self, psi: StateVector) -> np.ndarray:
        v = psi.amplitudes
        return v.copy() if self.basis is None else v[self.basis].copy()

    def embed(self, v: np.ndarray) -> StateVector:
        if self.basis is None:
            return StateVector(v / np.linalg.norm(v))
        full = np.zeros(2**self.n, dtype=complex)
        full[self.basis] = v
        return StateVector(full / np.linalg.norm(full))

    def energy(self, v: np.ndarray) -> float:
        return float(np.vdot(v, self.matrix @ v).real / np.vdot(v, v).real)

    def fidelity(self, v: np.ndarray, reference: StateVector | None) -> float | None:
        if reference is None:
            return None
        ref = reference.amplitudes if self.basis is None else reference.amplitudes[self.basis]
        return float(min(1.0, abs(np.vdot(ref, v)) ** 2 / np.vdot(v, v).real))


def _record_points(tau_max: float, stride: float) -> np.ndarray:
    n = int(round(tau_max / stride))
    if n < 1 or abs(n * stride - tau_max) > 1e-9 * max(1.0, tau_max):
        raise ValueError("tau_max must be a positive multiple of the stride")
    return stride * np.arange(1, n + 1)


def exact_ite(
    H: ProblemHamiltonian,
    psi: StateVector,
    tau_max: float,
    stride: float = 0.1,
    reference: StateVector | None = None,
    method: str | None = None,
) -> tuple[EvolutionTrace, StateVector]:
    """``exp(-tau H) psi`` normalized, recorded every ``stride``.

    The initial state needs non-zero overlap with the ground state for the
    evolution to converge there. Up to 12 qubits (or sector dimension 4096)
    the propagator uses an eigendecomposition, above that Krylov steps of
    ``scipy.sparse.linalg.expm_multiply`` between record points.
    """
    space = _Space(H, psi)
    v0 = space.restrict(psi)
    dim = len(v0)
    if method is None:
        method = "dense" if dim <= 2**DENSE_MAX_QUBITS else "krylov"
    taus = _record_points(tau_max, stride)
    trace = EvolutionTrace(label="exact-ite")
    trace.append(0.0, space.energy(v0), space.fidelity(v0, reference))
    if method == "dense":
        w, V = sla.eigh(space.matrix.toarray())
        coef = V.conj().T @ v0
        for tau in taus:
            # shift by the lowest eigenvalue to avoid overflow
            c = coef * np.exp(-tau * (w - w[0]))
            nrm = np.linalg.norm(c)
            c /= nrm
            e = float(np.sum(np.abs(c) ** 2 * w))
            v = V @ c
            trace.append(tau, e, space.fidelity(v, reference), c_norm=nrm)
        return trace, space.embed(v)
    if method != "krylov":
        raise ValueError(f"unknown method {method!r}")
    v = v0
    e = space.energy(v)
    shifted = space.matrix - e * sp.identity(dim, format="csr")
    for tau in taus:
        v = spla.expm_multiply(-stride * shifted, v)
        nrm = np.linalg.norm(v)
        v /= nrm
        trace.append(tau, space.energy(v), space.fidelity(v, reference), c_norm=nrm)
    return trace, space.embed(v)


def trotterized_ite(
    H: ProblemHamiltonian,
    schedule: TrotterSchedule,
    psi: StateVector,
    reference: StateVector | None = None,
    record_every: int = 1,
    tol: float = 1e-14,
) -> tuple[EvolutionTrace, StateVector]:
    """Second-order trotterized ITE with renormalization after every factor.

    Each factor ``exp(-dtau * fraction * h[l])`` acts locally on spin terms and
    through the sector matrix of the term for fermionic Hamiltonians.
    Energy and fidelity are recorded every ``record_every`` full steps.
    """
    space = _Space(H, psi)
    v = space.restrict(psi)
    dt = schedule.dtau
    kernels = {}
    for l, frac in set(schedule.sequence):
        op = H.terms[l].operator
        if isinstance(op, FermionOperator):
            m = H.term_sparse(l, space.basis).tocsr()
            bound = float(abs(m).sum(axis=0).max()) if m.nnz else 0.0
            kernels[(l, frac)] = ("sparse", m, bound)
        else:
            sites = H.terms[l].support
            h = local_matrix(op, sites)
            kernels[(l, frac)] = ("local", sites, sla.expm(-dt * frac * h))
    trace = EvolutionTrace(label="trot-ite")
    trace.append(0.0, space.energy(v), space.fidelity(v, reference))
    log_c = 0.0
    for step in range(1, schedule.n_steps + 1):
        for l, frac in schedule.sequence:
            kind, a, b = kernels[(l, frac)]
            if kind == "local":
                v = apply_local_matrix(v, space.n, a, b)
            else:
                v = taylor_expm_apply(lambda x, m=a: m @ x, -dt * frac, v, b, tol)
            nrm = np.linalg.norm(v)
            v /= nrm
            log_c += math.log(nrm)
        if step % record_every == 0 or step == schedule.n_steps:
            trace.append(step * dt, space.energy(v), space.fidelity(v, reference), c_norm=math.exp(log_c))
            log_c = 0.0
    return trace, space.embed(v)


def estimate_tau_eta(gap: float, gamma_init: float, eta: float) -> float:
    """Heuristic convergence time ``log(1 / (gamma_init * eta)) / gap``.

    A planning estimate with the asymptotic constant set to one.
    """
    if not gap > 0:
        raise ValueError("gap must be positive")
    if not 0 < gamma_init <= 1:
        raise ValueError("gamma_init must lie in (0, 1]")
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    return math.log(1.0 / (gamma_init * eta)) / gap


def state_fidelity(psi: StateVector, reference: StateVector | None) -> float | None:
    return None if reference is None else fidelity(psi, reference)
