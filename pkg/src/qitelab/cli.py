"""Command-line experiment runner.

Subcommands
-----------
run       evolve one system and write trace.csv, summary.csv, plan.txt, config.echo
presets   list the preset systems
sweep     run a config for several values of one key
spectrum  lowest eigenvalues of a system
ghf       mean-field ground state and its fidelity
mi        orbital mutual information of the exact ground state

Configs are INI-style text with the sections ``[system]``, ``[initial]``,
``[evolver]``, ``[diagnostics]`` and ``[run]``; command-line flags override
file keys. Output goes below ``$QITELAB_OUTPUT`` (default ``qitelab-out``)
unless ``[run] output`` names a directory.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import LANCZOS_MAX_QUBITS, SpectrumResult, fidelity, multiref_diagnostic, mutual_information, spectrum
from .evolution import EvolutionTrace, exact_ite, trotterized_ite
from .fgs import CovarianceMatrix, GhfConfig, GhfResult, MajoranaPolynomialEnergy, gaussian_state, ghf_minimize
from .hamiltonians import (
    LatticeGraph,
    ProblemHamiltonian,
    build_active_space_hamiltonian,
    build_fermi_hubbard,
    build_heisenberg,
    build_lattice,
    build_tfim,
    lattice_from_fixture,
    make_trotter_schedule,
    parse_fcidump,
    split_pauli_terms,
)
from .operators import StateVector
from .qite import SPIN_DOMAIN_CAP, QiteConfig, SolverConfig, estimate_running_time, plan_domains, qite_evolve

log = logging.getLogger(__name__)

OUTPUT_ENV = "QITELAB_OUTPUT"
FIXTURE_ENV = "QITELAB_FIXTURES"
CSV_VERSION = "qitelab-csv 1"
SUMMARY_FIELDS = ("E_init", "E_final", "F_init", "F_final", "E0", "E1")
# fermionic QITE refuses plans with more generators per group than this
FERMION_BASIS_CAP = 2000


class ConfigError(ValueError):
    pass


class Infeasible(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Presets


@dataclass(frozen=True)
class Preset:
    key: str
    label: str
    model: str
    lattice: str
    interaction: str
    sites: int
    params: tuple[tuple[str, float], ...] = ()
    basis_set: str = ""
    active_space: str = ""

    @property
    def molecular(self) -> bool:
        return self.model == "fcidump"

    def describe(self) -> str:
        if self.molecular:
            return f"{self.label:<16} {self.basis_set:<11} AS={self.active_space:<8} fixture required ({self.key}.FCIDUMP)"
        par = ", ".join(f"{k}={_fmt(v)}" for k, v in self.params)
        return f"{self.label:<16} {self.model:<10} {self.lattice:<17} {self.interaction:<3} {par}, L={self.sites}"


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


PRESETS: dict[str, Preset] = {
    p.key: p
    for p in (
        Preset("hm1", "HM I", "heisenberg", "ring", "NN", 10, (("B", 0.0), ("J", 1.0))),
        Preset("hm2", "HM II", "heisenberg", "ring", "LR", 10, (("B", 0.4), ("alpha", 1.0))),
        Preset("hm3", "HM III", "heisenberg", "triangular_ladder", "NN", 12, (("B", 0.4), ("J", 1.0))),
        Preset("tfim1", "TFIM I", "tfim", "ring", "LR", 10, (("B", 0.4), ("alpha", 0.3))),
        Preset("tfim2", "TFIM II", "tfim", "ring", "LR", 10, (("B", 0.4), ("alpha", 0.1))),
        Preset("j1j2", "J1J2", "heisenberg", "honeycomb", "SR", 12, (("B", 0.1), ("J", 1.0), ("J2", -0.5))),
        Preset("fhm", "FHM", "hubbard", "ring", "NN", 10, (("t", 1.0), ("U", 1.0))),
        Preset("ne0", "Ne (0)", "fcidump", "", "", 8, basis_set="cc-pVDZ", active_space="(8,8)"),
        Preset("fenta1", "Fe(III)-NTA (1)", "fcidump", "", "", 5, basis_set="def2-QZVPP", active_space="(5,5)"),
        Preset("fenta3", "Fe(III)-NTA (3)", "fcidump", "", "", 5, basis_set="def2-QZVPP", active_space="(5,5)"),
        Preset("o2s0", "O2 (0)", "fcidump", "", "", 6, basis_set="cc-pVQZ", active_space="(8,6)"),
        Preset("o2s2", "O2 (2)", "fcidump", "", "", 6, basis_set="cc-pVQZ", active_space="(8,6)"),
        Preset("o3s0", "O3 (0)", "fcidump", "", "", 9, basis_set="cc-pVQZ", active_space="(12,9)"),
    )
}


def list_presets() -> str:
    """Text table of the lattice and molecular presets."""
    lines = ["# lattice presets", f"{'key':<8} {'system':<16} {'model':<10} {'lattice':<17} typ parameters"]
    for p in PRESETS.values():
        if not p.molecular:
            lines.append(f"{p.key:<8} {p.describe()}")
    lines.append("# molecular presets (fixture-gated: set [system] fcidump or $%s)" % FIXTURE_ENV)
    for p in PRESETS.values():
        if p.molecular:
            lines.append(f"{p.key:<8} {p.describe()}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Configuration


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).replace(",", " ").split())


def _opt_float(text: str) -> float | None:
    return None if str(text).strip().lower() in ("", "none") else float(text)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: system, initial state, evolver, diagnostics and output.

    Unset model parameters fall back to the preset, then to model defaults.
    """

    preset: str | None = None
    model: str | None = None
    lattice: str | None = None
    sites: int | None = None
    J: float | None = None
    J2: float | None = None
    alpha: float | None = None
    B: float | None = None
    t: float | None = None
    U: float | None = None
    fcidump: str | None = None
    initial: str = "ghf"
    restarts: int = 10
    occupation: tuple[int, ...] | None = None
    state_file: str | None = None
    evolver: str = "trot-ite"
    dtau: float = 0.1
    tau: float = 10.0
    nu: int = 1
    solver: str = "cg"
    doubles: str = "inclusive"
    record_every: int = 1
    spectrum: bool = True
    mi: bool = False
    seed: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.evolver not in ("exact-ite", "trot-ite", "qite"):
            raise ConfigError(f"unknown evolver {self.evolver!r}")
        if self.initial not in ("ghf", "determinant", "file"):
            raise ConfigError(f"unknown initial state kind {self.initial!r}")
        if not self.dtau > 0:
            raise ConfigError("dtau must be positive")
        if self.tau < 0:
            raise ConfigError("tau must be non-negative")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; see 'qitelab presets'")

    @property
    def n_steps(self) -> int:
        n = round(self.tau / self.dtau)
        if abs(n * self.dtau - self.tau) > 1e-9 * max(1.0, self.tau):
            raise ConfigError("tau must be a multiple of dtau")
        return int(n)

    @property
    def name(self) -> str:
        base = self.preset or self.model or "system"
        return f"{base}-{self.evolver}"

    def resolved(self) -> ExperimentConfig:
        """Copy with the preset's model, lattice and parameters filled in."""
        if self.preset is None:
            if self.model is None:
                raise ConfigError("set [system] preset or model")
            return self
        p = PRESETS[self.preset]
        upd = {"model": self.model or p.model, "sites": self.sites or p.sites}
        if not p.molecular:
            upd["lattice"] = self.lattice or p.lattice
        for k, v in p.params:
            if getattr(self, k) is None:
                upd[k] = v
        return replace(self, **upd)


# (section, key) -> (attribute, parser)
_KEYS = {
    ("system", "preset"): ("preset", str),
    ("system", "model"): ("model", str),
    ("system", "lattice"): ("lattice", str),
    ("system", "sites"): ("sites", int),
    ("system", "J"): ("J", _opt_float),
    ("system", "J2"): ("J2", _opt_float),
    ("system", "alpha"): ("alpha", _opt_float),
    ("system", "B"): ("B", _opt_float),
    ("system", "t"): ("t", _opt_float),
    ("system", "U"): ("U", _opt_float),
    ("system", "fcidump"): ("fcidump", str),
    ("initial", "kind"): ("initial", str),
    ("initial", "restarts"): ("restarts", int),
    ("initial", "occupation"): ("occupation", _ints),
    ("initial", "file"): ("state_file", str),
    ("evolver", "kind"): ("evolver", str),
    ("evolver", "dtau"): ("dtau", float),
    ("evolver", "tau"): ("tau", float),
    ("evolver", "nu"): ("nu", int),
    ("evolver", "solver"): ("solver", str),
    ("evolver", "doubles"): ("doubles", str),
    ("evolver", "record_every"): ("record_every", int),
    ("diagnostics", "spectrum"): ("spectrum", _bool),
    ("diagnostics", "mi"): ("mi", _bool),
    ("run", "seed"): ("seed", int),
    ("run", "output"): ("output", str),
}
_BY_ATTR = {attr: (sec, key) for (sec, key), (attr, _) in _KEYS.items()}
_LOWER = {(sec, key.lower()): (sec, key) for sec, key in _KEYS}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    return cp


def _apply(values: dict, section: str, key: str, raw: str) -> None:
    k = _LOWER.get((section.lower(), key.lower()))
    if k is None:
        raise ConfigError(f"unknown config key [{section}] {key}")
    attr, conv = _KEYS[k]
    try:
        values[attr] = conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


def parse_config(text: str = "", overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Build a config from INI text plus ``section.key -> value`` overrides."""
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    values: dict = {}
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            _apply(values, sec, key, raw)
    for dotted, raw in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        _apply(values, sec, key, raw)
    return ExperimentConfig(**values)


def config_to_text(cfg: ExperimentConfig) -> str:
    """INI text that reproduces ``cfg`` through :func:`parse_config`."""
    sections: dict[str, list[str]] = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        sec, key = _BY_ATTR[f.name]
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, tuple):
            s = ",".join(map(str, v))
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        sections.setdefault(sec, []).append(f"{key} = {s}")
    out = [f"# {CSV_VERSION}; resolved experiment config"]
    for sec in ("system", "initial", "evolver", "diagnostics", "run"):
        if sec in sections:
            out.append(f"\n[{sec}]")
            out.extend(sections[sec])
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Building blocks


def _fixture_path(cfg: ExperimentConfig) -> Path:
    if cfg.fcidump:
        path = Path(cfg.fcidump)
    elif os.environ.get(FIXTURE_ENV) and cfg.preset:
        path = Path(os.environ[FIXTURE_ENV]) / f"{cfg.preset}.FCIDUMP"
    else:
        raise ConfigError("molecular systems need [system] fcidump or $" + FIXTURE_ENV)
    if not path.is_file():
        raise ConfigError(f"missing FCIDUMP fixture {path}")
    return path


def build_geometry(cfg: ExperimentConfig) -> LatticeGraph | None:
    cfg = cfg.resolved()
    if cfg.model == "fcidump":
        return None
    if cfg.lattice == "ring":
        return build_lattice("ring", cfg.sites, True)
    if cfg.lattice == "chain":
        return build_lattice("ring", cfg.sites, False)
    if cfg.lattice == "triangular_ladder":
        return lattice_from_fixture("triangular_ladder_2x6")
    if cfg.lattice == "honeycomb":
        return lattice_from_fixture("honeycomb_12")
    return lattice_from_fixture(cfg.lattice)


def build_system(cfg: ExperimentConfig) -> tuple[ProblemHamiltonian, LatticeGraph | None]:
    """Hamiltonian and lattice (``None`` for molecules) of a config."""
    cfg = cfg.resolved()
    name = cfg.preset or cfg.model
    if cfg.model == "fcidump":
        H = build_active_space_hamiltonian(parse_fcidump(_fixture_path(cfg).read_text()), name=name)
        return H, None
    g = build_geometry(cfg)
    if cfg.sites is not None and g.n_sites != cfg.sites:
        raise ConfigError(f"lattice {cfg.lattice!r} has {g.n_sites} sites, config says {cfg.sites}")
    B = cfg.B or 0.0
    if cfg.model == "heisenberg":
        J = 1.0 if cfg.J is None else cfg.J
        return build_heisenberg(g, J, B, J2=cfg.J2, alpha=cfg.alpha, name=name), g
    if cfg.model == "tfim":
        J = 1.0 if cfg.J is None else cfg.J
        return build_tfim(g, cfg.alpha, B, J=J, name=name), g
    if cfg.model == "hubbard":
        t = 1.0 if cfg.t is None else cfg.t
        U = 1.0 if cfg.U is None else cfg.U
        return build_fermi_hubbard(g, t, U, name=name), g
    raise ConfigError(f"unknown model {cfg.model!r}")


def _mean_field(H: ProblemHamiltonian, cfg: ExperimentConfig) -> GhfResult:
    n_el = H.n_electrons if H.kind == "fermionic" else None
    gcfg = GhfConfig(seed=cfg.seed, restarts=cfg.restarts, n_electrons=n_el)
    return ghf_minimize(MajoranaPolynomialEnergy.from_hamiltonian(H), config=gcfg)


def _default_occupation(H: ProblemHamiltonian) -> tuple[int, ...]:
    # lowest orbitals, alpha before beta: modes 2p (up) and 2p + 1 (down)
    n_el = H.n_electrons
    sz2 = H.sz2 or 0
    n_up, n_dn = (n_el + sz2) // 2, (n_el - sz2) // 2
    return tuple(sorted([2 * p for p in range(n_up)] + [2 * p + 1 for p in range(n_dn)]))


def initial_state(H: ProblemHamiltonian, cfg: ExperimentConfig) -> tuple[StateVector, float | None]:
    """Initial state and, for mean-field states, its mean-field energy."""
    n = H.n_qubits
    if cfg.initial == "ghf":
        if H.kind == "fermionic" and H.n_electrons is not None and (H.sz2 or 0) != 0:
            # open shells: start from the aufbau determinant in the given orbitals
            return _determinant(n, _default_occupation(H)), None
        res = _mean_field(H, cfg)
        n_el = H.n_electrons if H.kind == "fermionic" else None
        return gaussian_state(res.gamma, n_el, seed=cfg.seed), res.energy
    if cfg.initial == "determinant":
        occ = cfg.occupation
        if occ is None:
            if H.n_electrons is None:
                raise ConfigError("determinant initial state needs [initial] occupation")
            occ = _default_occupation(H)
        return _determinant(n, occ), None
    if not cfg.state_file:
        raise ConfigError("file initial state needs [initial] file")
    cov = CovarianceMatrix.load(cfg.state_file)
    if cov.n_modes != n:
        raise ConfigError(f"covariance file has {cov.n_modes} modes, system needs {n}")
    n_el = H.n_electrons if H.kind == "fermionic" else None
    return gaussian_state(cov, n_el, seed=cfg.seed), None


def _determinant(n: int, occupation) -> StateVector:
    occ = sorted(set(int(m) for m in occupation))
    if occ and (occ[0] < 0 or occ[-1] >= n):
        raise ConfigError(f"occupation {occ} outside 0..{n - 1}")
    v = np.zeros(2**n, dtype=complex)
    v[sum(1 << m for m in occ)] = 1.0
    return StateVector(v)


def _lattice_dim(g: LatticeGraph | None) -> int:
    return 1 if g is None or g.kind in ("ring", "chain") else 2


def check_feasible(H: ProblemHamiltonian, plan, cfg: ExperimentConfig, g: LatticeGraph | None) -> str:
    """Cost report for a QITE run; raises :class:`Infeasible` beyond the caps."""
    k = math.log(4.0) if H.kind == "spin" else math.log(2.0)
    cost = estimate_running_time(plan.n_groups, cfg.n_steps, k, cfg.nu, _lattice_dim(g))
    worst = max(plan.groups, key=lambda gr: gr.basis_size)
    report = (
        f"groups={plan.n_groups} max_domain={plan.max_domain()} largest_basis={worst.basis_size} "
        f"steps={cfg.n_steps} T~m*n*exp(k*nu^d)={cost:.3e}"
    )
    if H.kind == "spin" and plan.max_domain() > SPIN_DOMAIN_CAP:
        raise Infeasible(
            f"domain of {plan.max_domain()} sites needs {4 ** plan.max_domain()} Pauli strings "
            f"(cap {SPIN_DOMAIN_CAP} sites); {report}"
        )
    if H.kind == "fermionic" and worst.basis_size > FERMION_BASIS_CAP:
        raise Infeasible(f"{worst.basis_size} generators in one group (cap {FERMION_BASIS_CAP}); {report}")
    return report


# ---------------------------------------------------------------------------
# Running


@dataclass(frozen=True)
class RunResult:
    directory: Path
    trace: EvolutionTrace
    summary: dict


def _output_dir(cfg: ExperimentConfig) -> Path:
    if cfg.output:
        return Path(cfg.output)
    return Path(os.environ.get(OUTPUT_ENV, "qitelab-out")) / cfg.name


def _csv_text(header: list[str], columns, rows) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in r])
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Hamiltonian, initial state, plan, evolution and diagnostics for one config.

    Writes ``trace.csv``, ``summary.csv``, ``plan.txt`` and ``config.echo``
    (plus ``mi.csv`` when requested) into the output directory.
    """
    cfg = cfg.resolved()
    n_steps = cfg.n_steps
    H, g = build_system(cfg)
    out = Path(out_dir) if out_dir is not None else _output_dir(cfg)

    plan = report = None
    if cfg.evolver == "qite" and g is not None:
        # refuse infeasible plans before any expensive preparation
        plan = plan_domains(H, cfg.nu, geometry=g, seed=cfg.seed, doubles=cfg.doubles)
        report = check_feasible(H, plan, cfg, g)

    spec: SpectrumResult | None = None
    if cfg.spectrum or cfg.mi or (cfg.evolver == "qite" and g is None):
        if H.n_qubits > LANCZOS_MAX_QUBITS:
            raise Infeasible(f"{H.n_qubits} qubits is beyond exact diagonalization")
        spec = spectrum(H)
    ref = spec.ground_state if (spec is not None and cfg.spectrum) else None
    psi, _ = initial_state(H, cfg)

    if cfg.evolver == "qite":
        if plan is None:
            mi = mutual_information(spec.ground_state)
            plan = plan_domains(H, cfg.nu, mutual_information=mi, seed=cfg.seed, doubles=cfg.doubles)
            report = check_feasible(H, plan, cfg, g)
        plan_text = plan.dump() + f"# cost: {report}\n"
        qcfg = QiteConfig(
            dtau=cfg.dtau,
            n_steps=n_steps,
            nu=cfg.nu,
            solver=SolverConfig(method=cfg.solver),
            seed=cfg.seed,
            record_every=cfg.record_every,
        )
        trace, _ = qite_evolve(H, plan, qcfg, psi, ref)
    elif cfg.evolver == "trot-ite":
        Hs = split_pauli_terms(H)
        sched = make_trotter_schedule(Hs, cfg.dtau, n_steps)
        plan_text = "# trotter factors: term\tfraction\tsupport\n" + "".join(
            f"{l}\t{f!r}\t{','.join(map(str, Hs.terms[l].support))}\n" for l, f in sched.sequence
        )
        if n_steps == 0:
            trace = _initial_trace(H, psi, ref, "trot-ite")
        else:
            trace, _ = trotterized_ite(Hs, sched, psi, ref, record_every=cfg.record_every)
    else:
        plan_text = "# exact propagator exp(-tau H), no factorization\n"
        if n_steps == 0:
            trace = _initial_trace(H, psi, ref, "exact-ite")
        else:
            trace, _ = exact_ite(H, psi, cfg.tau, stride=cfg.dtau * cfg.record_every, reference=ref)

    first, last = trace.rows[0], trace.final
    summary = {
        "E_init": first.energy,
        "E_final": last.energy,
        "F_init": first.fidelity,
        "F_final": last.fidelity,
        "E0": spec.e0 if spec is not None else None,
        "E1": spec.e1 if spec is not None else None,
    }
    header = [CSV_VERSION, f"system={cfg.preset or cfg.model} evolver={cfg.evolver} seed={cfg.seed}"]
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv", header="\n".join(header + ["columns: " + ",".join(("tau", "energy", "fidelity", "c_norm", "residual"))]))
    (out / "summary.csv").write_text(
        _csv_text(header, ("system", "evolver") + SUMMARY_FIELDS, [[cfg.preset or cfg.model, cfg.evolver] + [summary[k] for k in SUMMARY_FIELDS]])
    )
    (out / "plan.txt").write_text(plan_text)
    (out / "config.echo").write_text(config_to_text(cfg))
    if cfg.mi:
        (out / "mi.csv").write_text(_mi_csv(mutual_information(spec.ground_state), header))
    return RunResult(out, trace, summary)


def _initial_trace(H: ProblemHamiltonian, psi: StateVector, ref: StateVector | None, label: str) -> EvolutionTrace:
    v = psi.amplitudes
    e = float(np.vdot(v, H.sparse() @ v).real)
    trace = EvolutionTrace(label=label)
    trace.append(0.0, e, None if ref is None else fidelity(psi, ref))
    return trace


def _mi_csv(I: np.ndarray, header: list[str]) -> str:
    L = I.shape[0]
    return _csv_text(header + ["orbital mutual information I(i,j)"], ["i"] + [str(j) for j in range(L)], [[i] + [float(x) for x in I[i]] for i in range(L)])


def _run_one(args) -> tuple[str, dict]:
    text, overrides, out_dir, label = args
    res = run_experiment(parse_config(text, overrides), out_dir)
    return label, res.summary


def sweep(text: str, key: str, values, base_overrides: dict | None = None, jobs: int = 1, out_root=None) -> str:
    """Run ``text`` once per value of ``key``; returns the combined summary CSV."""
    base = parse_config(text, base_overrides).resolved()
    root = Path(out_root) if out_root is not None else _output_dir(base).with_name(base.name + "-sweep")
    tasks = []
    for v in values:
        ov = dict(base_overrides or {})
        ov[key] = str(v)
        tasks.append((text, ov, root / f"{key}={v}", str(v)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    csv_text = _csv_text([CSV_VERSION, f"sweep over {key}"], (key,) + SUMMARY_FIELDS, [[lab] + [s[k] for k in SUMMARY_FIELDS] for lab, s in results])
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.csv").write_text(csv_text)
    return csv_text


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="INI config file")
    p.add_argument("--preset", help="preset key, see 'qitelab presets'")
    p.add_argument("--fcidump", help="FCIDUMP file for molecular systems")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")


def _overrides(args) -> dict[str, str]:
    ov = {}
    flag_keys = {
        "preset": "system.preset",
        "fcidump": "system.fcidump",
        "seed": "run.seed",
        "out": "run.output",
        "evolver": "evolver.kind",
        "dtau": "evolver.dtau",
        "tau": "evolver.tau",
        "nu": "evolver.nu",
        "solver": "evolver.solver",
        "doubles": "evolver.doubles",
        "restarts": "initial.restarts",
    }
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            ov[key] = str(v)
    for item in args.set:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        ov[k.strip()] = v.strip()
    return ov


def _load(args) -> tuple[str, dict[str, str]]:
    text = Path(args.config).read_text() if args.config else ""
    return text, _overrides(args)


def _cmd_run(args) -> int:
    text, ov = _load(args)
    res = run_experiment(parse_config(text, ov))
    s = res.summary
    print(f"wrote {res.directory}")
    for k in SUMMARY_FIELDS:
        print(f"{k:8s} {'' if s[k] is None else f'{s[k]:.10g}'}")
    return 0


def _cmd_presets(args) -> int:
    sys.stdout.write(list_presets())
    return 0


def _cmd_sweep(args) -> int:
    text, ov = _load(args)
    values = [v for v in args.values.split(",") if v]
    root = Path(args.out) if args.out else None
    ov.pop("run.output", None)
    sys.stdout.write(sweep(text, args.key, values, ov, jobs=args.jobs, out_root=root))
    return 0


def _cmd_spectrum(args) -> int:
    text, ov = _load(args)
    cfg = parse_config(text, ov).resolved()
    H, _ = build_system(cfg)
    res = spectrum(H, k=args.k)
    header = [CSV_VERSION, f"system={cfg.preset or cfg.model} method={res.method} sector={res.sector}"]
    rows = [[i, float(e), float(r)] for i, (e, r) in enumerate(zip(res.energies, res.residuals))]
    text_out = _csv_text(header, ("index", "energy", "residual"), rows)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "spectrum.csv").write_text(text_out)
    sys.stdout.write(text_out)
    return 0


def _cmd_ghf(args) -> int:
    text, ov = _load(args)
    cfg = parse_config(text, ov).resolved()
    H, _ = build_system(cfg)
    res = _mean_field(H, cfg)
    n_el = H.n_electrons if H.kind == "fermionic" else None
    psi = gaussian_state(res.gamma, n_el, seed=cfg.seed)
    f = None
    if H.n_qubits <= LANCZOS_MAX_QUBITS:
        f = fidelity(psi, spectrum(H).ground_state)
    header = [CSV_VERSION, f"system={cfg.preset or cfg.model} E_GHF={res.energy!r} F_GHF={f!r} parity={res.parity}"]
    rows = [[r["restart"], r["iterations"], float(r["energy"]), float(r["purity_residual"])] for r in res.summary_rows()]
    text_out = _csv_text(header, ("restart", "iterations", "energy", "purity_residual"), rows)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "ghf.csv").write_text(text_out)
        res.gamma.save(d / "covariance.txt")
    sys.stdout.write(text_out)
    return 0


def _cmd_mi(args) -> int:
    text, ov = _load(args)
    cfg = parse_config(text, ov).resolved()
    H, _ = build_system(cfg)
    if H.kind != "fermionic":
        raise ConfigError("mutual information is defined for fermionic systems")
    gs = spectrum(H).ground_state
    I = mutual_information(gs, half=args.half)
    z = multiref_diagnostic(gs)
    text_out = _mi_csv(I, [CSV_VERSION, f"system={cfg.preset or cfg.model} Z_s1={z!r} half={args.half}"])
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "mi.csv").write_text(text_out)
    sys.stdout.write(text_out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qitelab", description="Imaginary time evolution experiments")
    ap.add_argument("--version", action="version", version=f"qitelab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _add_common(p)
    p.add_argument("--evolver", choices=("exact-ite", "trot-ite", "qite"))
    p.add_argument("--dtau", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--nu", type=int)
    p.add_argument("--solver", choices=("cg", "svd", "spectral"))
    p.add_argument("--doubles", choices=("inclusive", "strict"))
    p.add_argument("--restarts", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("presets", help="list preset systems")
    p.set_defaults(func=_cmd_presets)

    p = sub.add_parser("sweep", help="run a config for several values of one key")
    _add_common(p)
    p.add_argument("--key", required=True, help="SECTION.KEY to vary, e.g. evolver.nu")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1, help="parallel processes")
    p.add_argument("--evolver", choices=("exact-ite", "trot-ite", "qite"))
    p.add_argument("--dtau", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--nu", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("spectrum", help="lowest eigenvalues")
    _add_common(p)
    p.add_argument("-k", type=int, default=2)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("ghf", help="mean-field ground state")
    _add_common(p)
    p.add_argument("--restarts", type=int)
    p.set_defaults(func=_cmd_ghf)

    p = sub.add_parser("mi", help="orbital mutual information of the ground state")
    _add_common(p)
    p.add_argument("--half", action="store_true", help="report I/2")
    p.set_defaults(func=_cmd_mi)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Infeasible as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
