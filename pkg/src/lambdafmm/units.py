"""Unit system and physical constants.

Internally everything is carried in simulation-native units:

    length  nm
    charge  e
    energy  e^2/nm   (Coulomb energies before conversion)

A single conversion factor takes internal Coulomb energies to kJ/mol at the
reporting boundary (CLI output, dynamics, CSV files). Dynamics uses MD units
where kJ/mol = u nm^2 / ps^2 exactly, so masses are in u nm^2 for the
titration coordinates and times in ps.
"""

# Coulomb constant e^2/(4 pi eps0) expressed in kJ/mol nm e^-2
COULOMB_KJ_PER_MOL = 138.935458

# Boltzmann constant in kJ/mol/K
BOLTZMANN_KJ_PER_MOL_K = 0.00831446261815324


def coulomb_to_kj_per_mol(energy_internal):
    """Convert an energy from e^2/nm to kJ/mol."""
    return energy_internal * COULOMB_KJ_PER_MOL


def kj_per_mol_to_coulomb(energy_kj):
    """Convert an energy from kJ/mol to e^2/nm."""
    return energy_kj / COULOMB_KJ_PER_MOL
