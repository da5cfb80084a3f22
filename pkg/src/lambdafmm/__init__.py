"""Periodic fast-multipole electrostatics with interpolated-Hamiltonian
lambda forces for titratable sites.

The package computes, from a single charge-scaled periodic solve plus cheap
per-site correction scalars, the exact titration-coordinate forces that a
blend of end-state Hamiltonians would give, alongside the plain
charge-interpolation forces, a brute-force reference path, and a small
Langevin lambda-dynamics driver.
"""

__version__ = "0.1.0"
