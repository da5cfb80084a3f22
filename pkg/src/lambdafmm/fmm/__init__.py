"""Periodic fast-multipole solver: kernels, octree, lattice operator, driver."""

from . import harmonics, lattice, octree, solver  # noqa: F401
from .solver import PeriodicSolver, SolverConfig, SolveResult  # noqa: F401
