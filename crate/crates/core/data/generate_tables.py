"""Regenerate the bundled attenuation and spectrum tables.

Attenuation values come from xraydb (Elam/NIST-derived photon cross sections,
coherent scattering included). Spectrum is a Kramers-law bremsstrahlung shape
for a tungsten anode with aluminium inherent filtration.

    pip install xraydb
    python3 generate_tables.py
"""
from pathlib import Path

import numpy as np
import xraydb

HERE = Path(__file__).parent
ENERGIES = np.arange(20, 151)

MATERIALS = [
    ("polyethylene", "C2H4", 0.93),
    ("pvc", "C2H3Cl", 1.38),
    ("water", "H2O", 1.0),
    ("aluminum", "Al", 2.699),
    ("iodine", "I", 4.93),
    ("bone", "Ca10P6O26H2", 3.16),
]


def mu(formula, density):
    return np.array([xraydb.material_mu(formula, e * 1000.0, density=density) for e in ENERGIES])


def fmt(values):
    return ",\n".join("    %.10e" % v for v in values)


def write_material(name, formula, density):
    values = mu(formula, density)
    text = f"""# Linear attenuation coefficients (1/cm), generated by generate_tables.py
name = "{name}"
formula = "{formula}"
density = {density}
source = "xraydb {xraydb.__version__} material_mu (Elam tables)"
energy_start_kev = {ENERGIES[0]}
energy_step_kev = 1
mu = [
{fmt(values)},
]
"""
    (HERE / "materials" / f"{name}.toml").write_text(text)


def write_spectrum(kvp=120, al_cm=0.6):
    al = mu("Al", 2.699)
    fluence = np.where(ENERGIES < kvp, (kvp - ENERGIES) / ENERGIES, 0.0) * np.exp(-al * al_cm)
    fluence /= fluence.sum()
    text = f"""# Relative photon fluence per 1 keV, generated by generate_tables.py
# Kramers-law tungsten shape, {al_cm * 10:.0f} mm Al filtration.
name = "w{kvp}_al{al_cm * 10:.0f}mm"
kvp = {kvp}
energy_start_kev = {ENERGIES[0]}
energy_step_kev = 1
fluence = [
{fmt(fluence)},
]
"""
    (HERE / "spectra" / f"w{kvp}.toml").write_text(text)


if __name__ == "__main__":
    for m in MATERIALS:
        write_material(*m)
    write_spectrum()
