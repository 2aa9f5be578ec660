import csv
import io

import numpy as np
import pytest

from qitelab.cli import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    config_to_text,
    list_presets,
    main,
    parse_config,
    run_experiment,
    sweep,
)
from qitelab.evolution import EvolutionTrace

SMALL = """
[system]
model = heisenberg
lattice = ring
sites = 4
J = 1.0
B = 0.2

[initial]
kind = determinant
occupation = 0, 2

[evolver]
kind = trot-ite
dtau = 0.1
tau = 1.0
"""


def read_rows(text):
    return list(csv.DictReader(io.StringIO("".join(l for l in text.splitlines(True) if not l.startswith("#")))))


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert out == list_presets()
    for p in PRESETS.values():
        assert p.key in out and p.label in out
    assert "HM I             heisenberg ring              NN  B=0, J=1, L=10" in out


def test_config_round_trip():
    cfg = parse_config(SMALL, {"run.seed": "7", "diagnostics.mi": "no"})
    assert cfg.seed == 7 and cfg.occupation == (0, 2) and cfg.n_steps == 10
    assert parse_config(config_to_text(cfg)) == cfg


def test_keys_are_case_insensitive():
    assert parse_config("[Evolver]\nDTAU = 0.05\n").dtau == 0.05


@pytest.mark.parametrize(
    "text, overrides",
    [
        ("[system]\nmodel = heisenberg\nbogus = 1\n", None),
        ("", {"evolver.kind": "magic"}),
        ("", {"system.preset": "nope"}),
        ("", {"evolver.tau": "1.05", "evolver.dtau": "0.1", "diagnostics.spectrum": "maybe"}),
    ],
)
def test_bad_configs_rejected(text, overrides):
    with pytest.raises(ConfigError):
        parse_config(text, overrides)


def test_tau_must_be_multiple_of_dtau():
    with pytest.raises(ConfigError):
        ExperimentConfig(model="tfim", tau=1.05, dtau=0.1).n_steps


def test_run_writes_outputs_and_is_reproducible(tmp_path):
    res = run_experiment(parse_config(SMALL), tmp_path / "a")
    for name in ("trace.csv", "summary.csv", "plan.txt", "config.echo"):
        assert (tmp_path / "a" / name).is_file()
    assert len(res.trace.rows) == 11
    assert res.summary["E_final"] < res.summary["E_init"]
    assert res.summary["E_final"] >= res.summary["E0"] - 1e-12
    again = run_experiment(parse_config((tmp_path / "a" / "config.echo").read_text()), tmp_path / "b")
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert np.array_equal(again.trace.energies, EvolutionTrace.from_csv(tmp_path / "a" / "trace.csv").energies)


def test_zero_steps_give_single_row(tmp_path):
    for evolver in ("trot-ite", "exact-ite", "qite"):
        res = run_experiment(parse_config(SMALL, {"evolver.tau": "0", "evolver.kind": evolver}), tmp_path / evolver)
        assert len(res.trace.rows) == 1
        assert res.summary["E_final"] == pytest.approx(res.summary["E_init"])


def test_exact_and_qite_evolvers(tmp_path):
    ov = {"evolver.tau": "2.0"}
    ex = run_experiment(parse_config(SMALL, {**ov, "evolver.kind": "exact-ite"}), tmp_path / "e")
    qi = run_experiment(parse_config(SMALL, {**ov, "evolver.kind": "qite", "evolver.nu": "1"}), tmp_path / "q")
    assert ex.summary["E_final"] < ex.summary["E_init"]
    assert qi.summary["E_final"] < qi.summary["E_init"]
    assert "basis_size" in (tmp_path / "q" / "plan.txt").read_text()


def test_main_run_and_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--tau", "0.5"]) == 0
    assert "E_final" in capsys.readouterr().out
    assert main(["run", "--preset", "nope"]) == 2
    assert main(["run", str(cfg), "--set", "system.colour=red"]) == 2
    # a nu = 3 ring domain holds 8 sites, beyond the Pauli cap
    rc = main(["run", "--preset", "tfim1", "--evolver", "qite", "--nu", "3", "--set", "diagnostics.spectrum=false", "--out", str(tmp_path / "x")])
    assert rc == 3
    assert "refused" in capsys.readouterr().err


def test_spectrum_ghf_and_mi_commands(tmp_path, capsys):
    hub = ["--set", "system.model=hubbard", "--set", "system.lattice=ring", "--set", "system.sites=2"]
    assert main(["spectrum", *hub, "-k", "3"]) == 0
    rows = read_rows(capsys.readouterr().out)
    # Hubbard dimer at U = t = 1: E0 = (U - sqrt(U^2 + 16 t^2)) / 2
    assert float(rows[0]["energy"]) == pytest.approx((1 - np.sqrt(17)) / 2)
    assert main(["ghf", *hub, "--restarts", "2", "--out", str(tmp_path / "g")]) == 0
    out = capsys.readouterr().out
    assert "E_GHF=" in out and len(read_rows(out)) == 2
    assert (tmp_path / "g" / "covariance.txt").is_file()
    assert main(["mi", *hub]) == 0
    full = read_rows(capsys.readouterr().out)
    assert main(["mi", *hub, "--half"]) == 0
    half = read_rows(capsys.readouterr().out)
    assert float(half[0]["1"]) == pytest.approx(0.5 * float(full[0]["1"]))
    assert main(["mi", "--set", "system.model=tfim", "--set", "system.lattice=ring", "--set", "system.sites=3"]) == 2


def test_initial_state_from_covariance_file(tmp_path, capsys):
    hub = ["--set", "system.model=hubbard", "--set", "system.lattice=ring", "--set", "system.sites=2"]
    assert main(["ghf", *hub, "--restarts", "1", "--out", str(tmp_path / "g")]) == 0
    capsys.readouterr()
    text = "[system]\nmodel = hubbard\nlattice = ring\nsites = 2\n[evolver]\ntau = 0\n"
    ov = {"initial.kind": "file", "initial.file": str(tmp_path / "g" / "covariance.txt")}
    res = run_experiment(parse_config(text, ov), tmp_path / "r")
    ghf = run_experiment(parse_config(text, {"initial.restarts": "1"}), tmp_path / "s")
    assert res.summary["E_init"] == pytest.approx(ghf.summary["E_init"])


def test_sweep(tmp_path):
    out = sweep(SMALL, "evolver.dtau", ["0.1", "0.05"], out_root=tmp_path)
    rows = read_rows(out)
    assert [r["evolver.dtau"] for r in rows] == ["0.1", "0.05"]
    assert (tmp_path / "sweep.csv").read_text() == out
    assert (tmp_path / "evolver.dtau=0.05" / "trace.csv").is_file()


def test_molecular_preset_needs_fixture(monkeypatch):
    monkeypatch.delenv("QITELAB_FIXTURES", raising=False)
    assert main(["spectrum", "--preset", "ne0"]) == 2
