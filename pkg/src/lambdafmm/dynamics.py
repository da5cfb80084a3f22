"""Langevin dynamics of the titration coordinates.

Spatial coordinates stay frozen; only the lambdas move. The integrator
is BAOAB (half-kick, half-drift, Ornstein-Uhlenbeck, half-drift,
half-kick), which reduces exactly to velocity Verlet at zero friction
and temperature. Kinetic units are MD-style: time in ps, lambda masses
in u nm^2, energies in kJ/mol (so kJ/mol / (u nm^2) is 1/ps^2); engine
forces are converted from internal charge-squared-per-length units at
the force-field boundary.

Because the solve is linear in the charges and the charges are linear in
the per-form weights, the whole lambda-force field on frozen coordinates
is a closed form in one batched basis solve: one potential column for
the environment charges plus one per site form. FrozenLambdaForceField
precomputes those columns and the per-site correction tables once; each
step then costs a few small matrix contractions regardless of system
size. EngineLambdaForceField does the full per-step solve instead and is
the generic (and much slower) reference path.
"""

import math
from dataclasses import dataclass

import numpy as np

from .corrections import hi_energy_and_forces, lattice_kernel, near_kernel
from .fmm import lattice
from .fmm.solver import PeriodicSolver
from .units import BOLTZMANN_KJ_PER_MOL_K, COULOMB_KJ_PER_MOL
from .weights import expand_weights, weight_gradient_matrix

WALL_LOW = -0.1
WALL_HIGH = 1.1
WALL_STRENGTH = 50000.0  # kJ/mol per unit^4; ~10 kT at 0.15 past the wall
TRANSITION_LOW = 0.2
TRANSITION_HIGH = 0.8


@dataclass
class BiasPotential:
    """End-state-stabilising bias V = h 16 (lambda(1-lambda))^2 per slot.

    The shape is normalised so V(0) = V(1) = 0 and V(1/2) = h; h in
    kJ/mol is the midpoint barrier height. h=0 switches the bias off,
    negative h turns the barrier into a transition-accelerating well.
    """

    height: float = 5.0

    def energy(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        g = lam * (1.0 - lam)
        return float(16.0 * self.height * np.sum(g * g))

    def force(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        return -32.0 * self.height * lam * (1.0 - lam) * (1.0 - 2.0 * lam)


def wall_energy(lam):
    lam = np.asarray(lam, dtype=np.float64)
    over = np.maximum(lam - WALL_HIGH, 0.0)
    under = np.maximum(WALL_LOW - lam, 0.0)
    return float(WALL_STRENGTH * np.sum(over**4 + under**4))


def wall_force(lam):
    lam = np.asarray(lam, dtype=np.float64)
    over = np.maximum(lam - WALL_HIGH, 0.0)
    under = np.maximum(WALL_LOW - lam, 0.0)
    return 4.0 * WALL_STRENGTH * (under**3 - over**3)


class EngineLambdaForceField:
    """Full per-step engine evaluation; the slow reference path."""

    def __init__(self, system, config=None, solver=None, mode="hi"):
        self.system = system
        self.solver = solver if solver is not None else PeriodicSolver(system.positions, system.box_length, config)
        self.mode = mode

    def lambda_forces(self, lam_values):
        """Returns (energy, per-site forces), internal units, F = -dH/dlambda."""
        r = hi_energy_and_forces(self.system, lam_values, solver=self.solver, mode=self.mode)
        return r.energy, r.forces


class FrozenLambdaForceField:
    """Closed-form lambda forces from one batched basis solve.

    Exact for frozen coordinates up to floating-point reassociation:
    potentials of the blended charges are the weight-blended basis
    potentials by linearity, so S terms, correction scalars, and energies
    all become contractions of small per-site tables.
    """

    def __init__(self, system, config=None, solver=None, mode="hi"):
        if solver is None:
            solver = PeriodicSolver(system.positions, system.box_length, config)
        self.system = system
        self.solver = solver
        self.mode = mode
        sites = system.sites
        env = np.array(system.charges, dtype=np.float64)
        for site in sites:
            env[site.particle_indices] = 0.0
        cols = [env]
        self._col_of = []  # per site: slice into columns
        start = 1
        for site in sites:
            for rho in range(site.num_forms):
                c = np.zeros(system.num_particles)
                c[site.particle_indices] = site.form_charges[rho]
                cols.append(c)
            self._col_of.append(slice(start, start + site.num_forms))
            start += site.num_forms
        pot = solver.solve(np.stack(cols, axis=1)).potentials  # (N, ncols)
        qmat = np.stack(cols, axis=1)
        # energy table: half the Gram of all basis columns through the solve
        self._egram = 0.5 * (qmat.T @ pot)
        # S tables: per site, form charges against every basis column
        self._s_tab = [site.form_charges @ pot[site.particle_indices, :] for site in sites]
        # correction tables
        cfg = solver.config
        self._b_gram = []
        self._dip = []
        self._gamma = lattice.dipole_gamma(system.box_length) if cfg.dipole else 0.0
        images = cfg.intra_site_images
        for site in sites:
            pos = system.positions[site.particle_indices]
            kern = near_kernel(pos, system.box_length, "minimum" if images == "minimum" else "full")
            if images == "full" and solver.lattice_matrix is not None:
                kern = kern + lattice_kernel(pos, system.box_length, solver.lattice_matrix, cfg.p)
            qf = site.form_charges
            self._b_gram.append(qf @ kern @ qf.T)
            if images == "full" and cfg.dipole:
                self._dip.append(qf @ (pos - 0.5 * system.box_length))  # (nf, 3)
            else:
                self._dip.append(None)

    def lambda_forces(self, lam_values):
        """Returns (energy, per-site forces), internal units, F = -dH/dlambda."""
        tilde = [expand_weights(v).values for v in lam_values]
        w = np.concatenate([[1.0], *tilde])  # blend vector over basis columns
        energy = float(w @ self._egram @ w)
        forces = []
        corr_energy = 0.0
        svals = []
        for s, site in enumerate(self.system.sites):
            svals.append(self._s_tab[s] @ w)  # (nf,) S_rho of the blended solve
        for s, (site, lams) in enumerate(zip(self.system.sites, lam_values)):
            smc = svals[s]
            if self.mode == "hi":
                bg = self._b_gram[s]
                ww = tilde[s]
                c = bg @ ww - 0.5 * np.diag(bg)
                if self._dip[s] is not None:
                    dd = self._dip[s] - ww @ self._dip[s]
                    c = c - lattice.DIPOLE_ETA * self._gamma * np.sum(dd * dd, axis=1)
                smc = smc - c
                corr_energy += 0.5 * float(ww @ bg @ ww) - float(ww @ c)
            g = weight_gradient_matrix(lams)
            forces.append(-(g @ smc))
        return energy + corr_energy, forces


@dataclass
class TransitionRecord:
    """End-to-end transitions of one lambda slot, with hysteresis."""

    site: int
    slot: int
    count: int
    times: np.ndarray  # sample times (ps) at which a crossing completed


def count_transitions(values, low=TRANSITION_LOW, high=TRANSITION_HIGH):
    """Completed end-to-end crossings of one series, hysteresis [low, high].

    A sample <= low arms the low state, >= high the high state; each
    change of armed state after the first counts one transition. A
    monotone 0-to-1 ramp counts exactly 1; a square wave counts one per
    half-period after the first.
    """
    v = np.asarray(values, dtype=np.float64)
    states = np.where(v <= low, 0, np.where(v >= high, 1, -1))
    idx = np.nonzero(states >= 0)[0]
    if idx.size == 0:
        return 0, np.array([], dtype=np.int64)
    s = states[idx]
    flips = np.nonzero(s[1:] != s[:-1])[0]
    return int(flips.size), idx[flips + 1]


@dataclass
class Trajectory:
    """Sampled lambda trajectory; arrays indexed (sample, site slot)."""

    times: np.ndarray  # (n_samples,) ps
    lambdas: np.ndarray  # (n_samples, total_slots)
    velocities: np.ndarray
    forces: np.ndarray  # physical force on each slot, kJ/mol
    energies: np.ndarray  # (n_samples,) engine energy, kJ/mol
    slot_index: tuple  # (site, slot) per column

    def transitions(self, low=TRANSITION_LOW, high=TRANSITION_HIGH):
        out = []
        for c, (site, slot) in enumerate(self.slot_index):
            n, where = count_transitions(self.lambdas[:, c], low, high)
            out.append(TransitionRecord(site=site, slot=slot, count=n, times=self.times[where]))
        return out


def run_trajectory(
    force_field,
    lam_state,
    num_steps,
    dt=0.002,
    temperature=300.0,
    friction=5.0,
    bias=None,
    rng=None,
    sample_every=1,
):
    """Integrate the lambdas with BAOAB and sample every sample_every steps.

    force_field must expose lambda_forces(lam_values) -> (energy, forces)
    in internal units. dt in ps, friction in 1/ps, temperature in K. The
    first sample is the initial state; with friction=0 and temperature=0
    the scheme is plain velocity Verlet. The final state is written back
    to lam_state so consecutive runs chain.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if bias is None:
        bias = BiasPotential()
    state = lam_state.copy()
    nsites = len(state.values)
    slot_index = tuple((s, i) for s in range(nsites) for i in range(len(state.values[s])))
    kt = BOLTZMANN_KJ_PER_MOL_K * temperature
    c1 = math.exp(-friction * dt)
    noise = math.sqrt(kt * max(0.0, 1.0 - c1 * c1))

    def total_force(values):
        energy, eng_forces = force_field.lambda_forces(values)
        out = []
        for s in range(nsites):
            f = eng_forces[s] * COULOMB_KJ_PER_MOL + bias.force(values[s]) + wall_force(values[s])
            out.append(f)
        return energy * COULOMB_KJ_PER_MOL, out

    energy, forces = total_force(state.values)
    samples = {"t": [], "x": [], "v": [], "f": [], "e": []}

    def record(step):
        samples["t"].append(step * dt)
        samples["x"].append(np.concatenate([v.copy() for v in state.values]))
        samples["v"].append(np.concatenate([v.copy() for v in state.velocities]))
        samples["f"].append(np.concatenate(forces))
        samples["e"].append(energy)

    record(0)
    for step in range(1, num_steps + 1):
        for s in range(nsites):
            state.velocities[s] += (0.5 * dt / state.masses[s]) * forces[s]
            state.values[s] += 0.5 * dt * state.velocities[s]
        for s in range(nsites):
            xi = rng.standard_normal(len(state.velocities[s]))
            state.velocities[s] = c1 * state.velocities[s] + noise / math.sqrt(state.masses[s]) * xi
            state.values[s] += 0.5 * dt * state.velocities[s]
        energy, forces = total_force(state.values)
        for s in range(nsites):
            state.velocities[s] += (0.5 * dt / state.masses[s]) * forces[s]
        if step % sample_every == 0:
            record(step)
    lam_state.values = [v.copy() for v in state.values]
    lam_state.velocities = [v.copy() for v in state.velocities]
    return Trajectory(
        times=np.array(samples["t"]),
        lambdas=np.array(samples["x"]),
        velocities=np.array(samples["v"]),
        forces=np.array(samples["f"]),
        energies=np.array(samples["e"]),
        slot_index=slot_index,
    )


def replica_rng(master_seed, replica_index):
    """Stream for one replica; distinct and reproducible per index."""
    return np.random.default_rng([int(master_seed), int(replica_index)])
