"""Gaussian mean-field baseline for a long-range transverse-field Ising ring.

The best pure Gaussian state is found over a few random restarts, turned
into a statevector and compared with the exact ground state.
"""

from qitelab.diagnostics import fidelity, spectrum
from qitelab.fgs import GhfConfig, MajoranaPolynomialEnergy, gaussian_state, ghf_minimize
from qitelab.hamiltonians import build_lattice, build_tfim

H = build_tfim(build_lattice("ring", 8), alpha=0.3, B=0.4)
gs = spectrum(H)
res = ghf_minimize(MajoranaPolynomialEnergy.from_hamiltonian(H), config=GhfConfig(restarts=3))
for run in res.runs:
    print(f"restart {run.restart}: E = {run.energy:.6f} after {run.iterations} iterations")
psi = gaussian_state(res.gamma)
print(f"E_GHF = {res.energy:.6f}  E0 = {gs.e0:.6f}  F_GHF = {fidelity(psi, gs.ground_state):.4f}")
