"""Accuracy sweeps and timing benchmarks.

Timing protocol: one discarded warmup call, then the median of at least
five repetitions. Accuracy rows carry no timings and are formatted
deterministically by the CLI, so equal inputs give byte-equal CSVs.
"""

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .corrections import assemble_lambda_forces, build_corrections, hi_energy_and_forces
from .fmm.solver import PeriodicSolver, SolverConfig
from .oracle import end_state_hamiltonians, reference_lambda_forces
from .generators import generate_random_system
from .system import scale_charges
from .weights import expand_weights

MIN_TIMING_REPS = 5


def timed(fn, reps=MIN_TIMING_REPS, warmup=1):
    """Median wall time of fn() over reps runs after warmup discarded runs."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(max(reps, MIN_TIMING_REPS)):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def branch_deviations(system, lam_values, solver):
    """Per-slot relative deviation of assembled lambda forces vs the blend.

    Both routes run on the same solver; deviations are normalised by the
    largest reference force over all slots, so small slots do not blow
    up the relative measure.
    """
    r = hi_energy_and_forces(system, lam_values, solver=solver)
    es = end_state_hamiltonians(system, solver=solver)
    _, ref = reference_lambda_forces(lam_values, es)
    scale = max(max(np.max(np.abs(f)) for f in ref), 1e-300)
    out = []
    branch = 0
    for fh, fr in zip(r.forces, ref):
        for a, b in zip(fh, fr):
            out.append((branch, abs(a - b) / scale))
            branch += 1
    return out


@dataclass
class SweepSpec:
    """Grid of an accuracy sweep; the defaults are the standard grid."""

    depths: tuple = (1, 2, 3)
    orders: tuple = (4, 8, 16, 28)
    placement: str = "typical"
    site_forms: tuple = (2,)
    lambda_values: tuple = ((0.345,),)
    seed: int = 0
    num_background: int = 1000
    lattice_mode: str = "converged"
    shell_cap: int = 8
    dipole: bool = True


def accuracy_sweep(spec=None, progress=None):
    """Rows (p, d, branch, deviation) over a SweepSpec depth/order grid."""
    if spec is None:
        spec = SweepSpec()
    system, _ = generate_random_system(
        num_background=spec.num_background,
        site_forms=spec.site_forms,
        placement=spec.placement,
        seed=spec.seed,
    )
    lam_values = [np.asarray(v, dtype=np.float64) for v in spec.lambda_values]
    rows = []
    for d, p in itertools.product(spec.depths, spec.orders):
        cfg = SolverConfig(p=p, depth=d, lattice_mode=spec.lattice_mode,
                           shell_cap=spec.shell_cap, dipole=spec.dipole)
        solver = PeriodicSolver(system.positions, system.box_length, cfg)
        for branch, dev in branch_deviations(system, lam_values, solver):
            rows.append({"p": p, "d": d, "branch": branch, "deviation": dev})
        if progress is not None:
            progress(f"d={d} p={p} done")
    return rows


def scaling_bench(
    form_counts=(16, 32, 64, 128, 256, 512),
    num_background=100000,
    forms_per_site=4,
    depth=4,
    p=6,
    seed=0,
    reps=MIN_TIMING_REPS,
    progress=None,
):
    """Timing rows (N, sites, forms, d, t_solve, t_corrections, overhead_vs_baseline).

    t_solve is the blended-charge solve; t_corrections covers building
    the per-site correction scalars plus force assembly, the part that
    must stay linear in the total form count; the overhead column is
    t_corrections / t_solve.
    """
    rows = []
    for forms in form_counts:
        nsites = forms // forms_per_site
        if nsites * forms_per_site != forms:
            raise ValueError(f"{forms} forms not divisible by {forms_per_site}")
        system, lam = generate_random_system(
            num_background=num_background,
            site_forms=(forms_per_site,) * nsites,
            seed=seed,
        )
        cfg = SolverConfig(p=p, depth=depth, lattice_mode="converged", dipole=True)
        solver = PeriodicSolver(system.positions, system.box_length, cfg)
        tilde = [expand_weights(v) for v in lam.values]
        qt = scale_charges(system, tilde)
        res = solver.solve(qt)
        t_solve = timed(lambda: solver.solve(qt), reps=reps)

        def correction_phase():
            corr = build_corrections(system, lam.values, solver)
            return assemble_lambda_forces(system, lam.values, corr, res.potentials)

        t_corr = timed(correction_phase, reps=reps)
        rows.append({
            "N": system.num_particles,
            "sites": nsites,
            "forms": forms,
            "d": depth,
            "t_solve": t_solve,
            "t_corrections": t_corr,
            "overhead_vs_baseline": t_corr / t_solve,
        })
        if progress is not None:
            progress(f"forms={forms}: solve {t_solve:.3f}s corrections {t_corr:.4f}s")
    return rows


def linear_fit_quality(xs, ys):
    """(r_squared, worst doubling ratio) of a time-vs-count series."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    pred = a * x + b
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    ratios = [y[i + 1] / y[i] for i in range(len(y) - 1) if y[i] > 0]
    return r2, max(ratios) if ratios else 1.0
