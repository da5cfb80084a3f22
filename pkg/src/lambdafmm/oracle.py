"""Reference results the engine is checked against.

Two kinds live here. The direct image sums are fully independent of the
fast solver (plain numpy pair loops) and pin down absolute energies for
small systems. The end-state machinery reuses the engine deliberately:
interpolation identities relate a single blended-charge solve to the
family of end-state solves under the *same* operator, so the reference
Hamiltonians must come from the same configuration, batched as one
multi-right-hand-side solve.

All lambda forces follow the F = -dH/dlambda convention.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .corrections import minimum_image
from .fmm.solver import PeriodicSolver
from .system import end_state_charges, scale_charges
from .weights import expand_weights, weight_gradient_matrix

MAX_END_STATES = 256


def _shell_offsets(shell_cap):
    n = np.arange(-shell_cap, shell_cap + 1)
    return np.stack(np.meshgrid(n, n, n, indexing="ij"), axis=-1).reshape(-1, 3).astype(np.float64)


def direct_periodic_potentials(positions, charges, box_length, shell_cap=0):
    """Per-particle potentials by explicit image summation.

    Sums every image cell with |n|_inf <= shell_cap, including the home
    cell; a particle never sees itself in the home cell but does see its
    own periodic copies. Independent of the fast solver.
    """
    pos = np.asarray(positions, dtype=np.float64)
    q = np.asarray(charges, dtype=np.float64)
    n = pos.shape[0]
    disp = pos[:, None, :] - pos[None, :, :]
    v = np.zeros(n)
    for off in _shell_offsets(shell_cap):
        d = disp + off * float(box_length)
        r = np.sqrt((d * d).sum(-1))
        if not off.any():
            np.fill_diagonal(r, np.inf)
        v += (1.0 / r) @ q
    return v


def direct_periodic_energy(positions, charges, box_length, shell_cap=0):
    """Total electrostatic energy by explicit image summation."""
    v = direct_periodic_potentials(positions, charges, box_length, shell_cap)
    q = np.asarray(charges, dtype=np.float64)
    return 0.5 * math.fsum((q * v).tolist())


def k_factor(positions, delta_charges, box_length):
    """Curvature of the blended-charge Hamiltonian along one 2-form site.

    k = sum over ordered pairs i != j of dq_i dq_j / r_ij at minimum
    image, where dq = q1 - q0. The charge and interpolated routes then
    differ by exactly H_qi - H_hi = (k/2) (lambda^2 - lambda) and
    F_hi - F_qi = (lambda - 1/2) k when intra-site bilinears use the same
    minimum-image convention.
    """
    pos = np.asarray(positions, dtype=np.float64)
    dq = np.asarray(delta_charges, dtype=np.float64)
    disp = minimum_image(pos[:, None, :] - pos[None, :, :], box_length)
    r = np.sqrt((disp * disp).sum(-1))
    np.fill_diagonal(r, np.inf)
    return math.fsum(((dq[:, None] * dq[None, :]) / r).ravel().tolist())


@dataclass(frozen=True)
class EndStateEnergySet:
    """Hamiltonians of every joint form assignment of a system's sites."""

    site_forms: tuple  # forms per site
    assignments: tuple  # tuples, one form index per site, lexicographic
    energies: np.ndarray  # (num_assignments,)

    def energy(self, assignment):
        return float(self.energies[self.assignments.index(tuple(assignment))])


def end_state_hamiltonians(system, config=None, solver=None):
    """Engine Hamiltonians of all joint form assignments, one batched solve.

    The solver configuration is the one identity checks compare against,
    so callers must pass the same config (or solver) used for the blended
    solve. Refuses more than MAX_END_STATES assignments.
    """
    nfs = tuple(s.num_forms for s in system.sites)
    total = 1
    for nf in nfs:
        total *= nf
    if total > MAX_END_STATES:
        raise ValueError(f"{total} end states exceed the cap of {MAX_END_STATES}")
    assignments = tuple(itertools.product(*[range(nf) for nf in nfs]))
    if solver is None:
        solver = PeriodicSolver(system.positions, system.box_length, config)
    cols = np.stack([end_state_charges(system, a) for a in assignments], axis=1)
    res = solver.solve(cols)
    energies = np.atleast_1d(np.asarray(res.energy, dtype=np.float64))
    return EndStateEnergySet(site_forms=nfs, assignments=assignments, energies=energies)


def blend_energy(lam_values, energy_set):
    """Multilinear blend of end-state Hamiltonians at the given lambdas."""
    tilde = [expand_weights(v).values for v in lam_values]
    acc = []
    for a, e in zip(energy_set.assignments, energy_set.energies):
        w = 1.0
        for s, rho in enumerate(a):
            w *= tilde[s][rho]
        acc.append(w * float(e))
    return math.fsum(acc)


def reference_lambda_forces(lam_values, energy_set):
    """Exact lambda forces of the end-state blend, F = -dH/dlambda.

    Differentiates H(lambda) = sum_A w_A(lambda) H_A analytically, where
    w_A is the product of each site's expanded weights. For one 2-form
    site this is just F = -(H_1 - H_0). Returns (energy, forces) with one
    (L,) array per site.
    """
    tilde = [expand_weights(v).values for v in lam_values]
    grads = [weight_gradient_matrix(v) for v in lam_values]
    energy = blend_energy(lam_values, energy_set)
    forces = []
    for s, lams in enumerate(lam_values):
        g = np.zeros(len(lams))
        for i in range(len(lams)):
            acc = []
            for a, e in zip(energy_set.assignments, energy_set.energies):
                w = grads[s][i, a[s]]
                for s2, rho in enumerate(a):
                    if s2 != s:
                        w *= tilde[s2][rho]
                acc.append(w * float(e))
            g[i] = math.fsum(acc)
        forces.append(-g)
    return energy, forces


def qi_reference_force(system, lam_values, config=None, solver=None, fd_step=1e-6, check_tol=1e-8):
    """Charge-route lambda forces by two independent routes, cross-checked.

    The analytic route contracts the blended-solve potentials with the
    charge derivatives, F_k = -sum_i (dqtilde_i/dlambda_k) V_i. The
    numeric route central-differences the blended-charge energy in each
    lambda. Both come from one batched solve; they must agree to
    check_tol (relative for large forces) or this raises. Returns the
    analytic forces, one (L,) array per site.
    """
    lam_values = [np.asarray(v, dtype=np.float64) for v in lam_values]
    if solver is None:
        solver = PeriodicSolver(system.positions, system.box_length, config)
    slots = [(s, i) for s, v in enumerate(lam_values) for i in range(len(v))]
    cols = [scale_charges(system, [expand_weights(v) for v in lam_values])]
    for s, i in slots:
        for sgn in (1.0, -1.0):
            bumped = [v.copy() for v in lam_values]
            bumped[s][i] += sgn * fd_step
            cols.append(scale_charges(system, [expand_weights(v) for v in bumped]))
    res = solver.solve(np.stack(cols, axis=1))
    pot = res.potentials[:, 0]
    energies = np.asarray(res.energy)
    forces = []
    for s, (site, lams) in enumerate(zip(system.sites, lam_values)):
        g = weight_gradient_matrix(lams)
        sv = site.form_charges @ pot[site.particle_indices]
        forces.append(-(g @ sv))
    for n, (s, i) in enumerate(slots):
        fd = -(energies[1 + 2 * n] - energies[2 + 2 * n]) / (2.0 * fd_step)
        ana = forces[s][i]
        if abs(ana - fd) > check_tol * max(1.0, abs(ana)):
            raise AssertionError(
                f"charge-route force mismatch at site {s} slot {i}: analytic {ana!r} vs finite difference {fd!r}"
            )
    return forces
