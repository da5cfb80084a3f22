"""Command-line interface.

Exit codes: 0 success, 1 usage or input errors, 2 numerical failures
(non-finite results, identity residuals beyond tolerance, cross-check
mismatches). The LAMBDAFMM_THREADS environment variable caps the BLAS
and numba thread pools; it must be applied before numpy loads, so this
module imports nothing heavy at the top level and every command handler
imports lazily.

Float columns in CSV outputs are printed with repr-faithful %.17g, so
equal inputs give byte-equal files; timing columns are the only
run-to-run variable outputs.
"""

import argparse
import csv
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "NUMBA_NUM_THREADS")


class NumericalFailure(RuntimeError):
    """A computation produced results that fail a numerical guarantee."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _apply_thread_env():
    raw = os.environ.get("LAMBDAFMM_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        sys.stderr.write(f"lambdafmm: LAMBDAFMM_THREADS must be a positive integer, got {raw!r}\n")
        sys.exit(1)
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _fmt(x):
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _parse_lambdas(text):
    """Per-site lambda vectors: sites split by ';', slots by ','."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        out.append([float(x) for x in part.split(",")])
    if not out:
        raise ValueError("empty lambda list")
    return out


def _parse_int_list(text):
    return [int(x) for x in text.replace(",", " ").split()]


def _config_from(args):
    from .fmm.solver import SolverConfig

    return SolverConfig(
        p=args.p,
        depth=args.depth,
        lattice_mode=args.lattice,
        shell_cap=args.shell_cap,
        dipole=not args.no_dipole,
        intra_site_images=args.images,
        precision=args.precision,
    ).validated()


def _load(args):
    from .system import load_system

    system, lam = load_system(args.system)
    if getattr(args, "lambdas", None):
        values = _parse_lambdas(args.lambdas)
        if len(values) != len(system.sites):
            raise ValueError(f"{len(values)} lambda vectors for {len(system.sites)} sites")
        import numpy as np

        lam.values = [np.asarray(v, dtype=float) for v in values]
        lam.velocities = [np.zeros(len(v)) for v in values]
    return system, lam


def _require_finite(label, *values):
    import numpy as np

    for v in values:
        if not np.all(np.isfinite(np.asarray(v, dtype=np.float64))):
            raise NumericalFailure(f"non-finite {label}")


def _cmd_gen(args):
    from .generators import generate_random_system
    from .system import save_system

    forms = tuple(_parse_int_list(args.site_forms))
    lambda_values = _parse_lambdas(args.lambdas) if args.lambdas else None
    system, lam = generate_random_system(
        num_background=args.background,
        site_forms=forms,
        site_atoms=args.site_atoms,
        box_length=args.box,
        placement=args.placement,
        neutralize=not args.no_neutralize,
        lambda_values=lambda_values,
        seed=args.seed,
    )
    save_system(system, lam, args.out)
    print(f"wrote {args.out}: {system.num_particles} particles, "
          f"{len(system.sites)} sites, box {system.box_length:g} nm")
    return 0


def _cmd_energy(args):
    from .corrections import hi_energy_and_forces
    from .fmm.solver import PeriodicSolver
    from .units import COULOMB_KJ_PER_MOL

    system, lam = _load(args)
    cfg = _config_from(args)
    solver = PeriodicSolver(system.positions, system.box_length, cfg)
    r = hi_energy_and_forces(system, lam.values, solver=solver, mode="hi")
    res = r.solve
    _require_finite("energy", res.energy, r.energy)
    c = COULOMB_KJ_PER_MOL
    print(f"total charge      {res.total_charge:+.6f} e")
    print(f"blended solve     {res.energy * c:+.10f} kJ/mol  ({res.energy:+.10e} e^2/nm)")
    print(f"  near            {res.near_energy * c:+.10f} kJ/mol")
    print(f"  far             {res.far_energy * c:+.10f} kJ/mol")
    print(f"  surface         {res.dipole_energy * c:+.10f} kJ/mol")
    print(f"interpolated      {r.energy * c:+.10f} kJ/mol  ({r.energy:+.10e} e^2/nm)")
    return 0


def _cmd_lambda_forces(args):
    from .corrections import hi_energy_and_forces
    from .fmm.solver import PeriodicSolver
    from .units import COULOMB_KJ_PER_MOL

    system, lam = _load(args)
    cfg = _config_from(args)
    solver = PeriodicSolver(system.positions, system.box_length, cfg)
    r = hi_energy_and_forces(system, lam.values, solver=solver, mode=args.mode)
    _require_finite("lambda forces", *r.forces)
    c = COULOMB_KJ_PER_MOL
    print(f"mode {args.mode}: energy {r.energy * c:+.10f} kJ/mol")
    for s, f in enumerate(r.forces):
        lams = ",".join(f"{x:g}" for x in lam.values[s])
        for i, fi in enumerate(f):
            print(f"site {s} branch {i} (lambda {lams}): F = {fi * c:+.10f} kJ/mol")
    return 0


def _cmd_compare(args):
    import numpy as np

    from .corrections import hi_energy_and_forces
    from .fmm.solver import PeriodicSolver
    from .oracle import k_factor
    from .units import COULOMB_KJ_PER_MOL

    system, lam = _load(args)
    cfg = _config_from(args)
    solver = PeriodicSolver(system.positions, system.box_length, cfg)
    r_hi = hi_energy_and_forces(system, lam.values, solver=solver, mode="hi")
    r_qi = hi_energy_and_forces(system, lam.values, solver=solver, mode="qi")
    c = COULOMB_KJ_PER_MOL
    print(f"H_qi - H_hi = {(r_qi.energy - r_hi.energy) * c:+.10e} kJ/mol")
    failed = False
    gap_expect = 0.0
    for s, site in enumerate(system.sites):
        if site.num_forms != 2:
            print(f"site {s}: {site.num_forms} forms, pairwise identity not applicable")
            continue
        lam_s = float(lam.values[s][0])
        pos = system.positions[site.particle_indices]
        k = k_factor(pos, site.form_charges[1] - site.form_charges[0], system.box_length)
        gap_expect += 0.5 * k * (lam_s**2 - lam_s)
        expect = (lam_s - 0.5) * k
        got = float(r_hi.forces[s][0] - r_qi.forces[s][0])
        resid = abs(got - expect)
        tol = args.tol * max(abs(k), 1.0)
        status = "ok" if resid <= tol else "FAIL"
        if resid > tol:
            failed = True
        print(f"site {s}: k = {k * c:+.6e} kJ/mol  F_hi - F_qi = {got * c:+.6e}  "
              f"(lambda-1/2)k = {expect * c:+.6e}  |residual| = {resid * c:.3e} kJ/mol [{status}]")
    if all(site.num_forms == 2 for site in system.sites) and cfg.intra_site_images == "minimum":
        gap_resid = abs((r_qi.energy - r_hi.energy) - gap_expect)
        print(f"energy gap vs (k/2)(lambda^2-lambda): |residual| = {gap_resid * c:.3e} kJ/mol")
        if gap_resid > args.tol * max(abs(gap_expect), 1.0):
            failed = True
    if failed:
        raise NumericalFailure("interpolated/charge-route identity residual beyond tolerance")
    return 0


def _cmd_accuracy_sweep(args):
    from .bench import SweepSpec, accuracy_sweep

    spec = SweepSpec(
        depths=tuple(_parse_int_list(args.depths)),
        orders=tuple(_parse_int_list(args.orders)),
        placement=args.placement,
        site_forms=tuple(_parse_int_list(args.site_forms)),
        lambda_values=tuple(tuple(v) for v in _parse_lambdas(args.lambdas)),
        seed=args.seed,
        num_background=args.background,
        lattice_mode=args.lattice,
        shell_cap=args.shell_cap,
        dipole=not args.no_dipole,
    )
    rows = accuracy_sweep(spec, progress=lambda m: print(m, file=sys.stderr))
    _require_finite("sweep deviations", [r["deviation"] for r in rows])
    _write_csv(args.out, ["p", "d", "branch", "deviation"],
               [[r["p"], r["d"], r["branch"], _fmt(r["deviation"])] for r in rows])
    print(f"wrote {args.out}: {len(rows)} rows")
    return 0


def _cmd_bench(args):
    from .bench import linear_fit_quality, scaling_bench

    rows = scaling_bench(
        form_counts=tuple(_parse_int_list(args.form_counts)),
        num_background=args.background,
        forms_per_site=args.forms_per_site,
        depth=args.depth,
        p=args.p,
        seed=args.seed,
        reps=args.reps,
        progress=lambda m: print(m, file=sys.stderr),
    )
    _write_csv(args.out,
               ["N", "sites", "forms", "d", "t_solve", "t_corrections", "overhead_vs_baseline"],
               [[r["N"], r["sites"], r["forms"], r["d"], _fmt(r["t_solve"]),
                 _fmt(r["t_corrections"]), _fmt(r["overhead_vs_baseline"])] for r in rows])
    r2, worst = linear_fit_quality([r["forms"] for r in rows], [r["t_corrections"] for r in rows])
    print(f"wrote {args.out}: {len(rows)} rows; corrections-vs-forms r^2 = {r2:.4f}, "
          f"worst step ratio = {worst:.2f}")
    return 0


def _cmd_dynamics(args):
    import numpy as np

    from .dynamics import (BiasPotential, EngineLambdaForceField, FrozenLambdaForceField,
                           replica_rng, run_trajectory)
    from .fmm.solver import PeriodicSolver

    if args.mirror:
        from .generators import mirror_pair_system

        system, lam = mirror_pair_system(separation=args.separation, barrier_kt=args.barrier_kt,
                                         temperature=args.temperature)
    else:
        if not args.system:
            raise ValueError("dynamics needs --system FILE or --mirror")
        system, lam = _load(args)
    cfg = _config_from(args)
    solver = PeriodicSolver(system.positions, system.box_length, cfg)
    if args.per_step_engine:
        field = EngineLambdaForceField(system, solver=solver, mode=args.mode)
    else:
        field = FrozenLambdaForceField(system, solver=solver, mode=args.mode)
    bias = BiasPotential(args.bias_height)
    medians = []
    for rep in range(args.replicas):
        state = lam.copy()
        traj = run_trajectory(field, state, args.steps, dt=args.dt, temperature=args.temperature,
                              friction=args.friction, bias=bias,
                              rng=replica_rng(args.master_seed, rep),
                              sample_every=args.sample_every)
        _require_finite("trajectory", traj.lambdas, traj.forces)
        out = args.out if args.replicas == 1 else _with_suffix(args.out, f"-r{rep}")
        rows = []
        for i, t in enumerate(traj.times):
            for col, (s, b) in enumerate(traj.slot_index):
                rows.append([_fmt(t), s, b, _fmt(traj.lambdas[i, col]), _fmt(traj.forces[i, col])])
        _write_csv(out, ["time_ps", "site", "branch", "lambda", "force"], rows)
        counts = []
        for tr in traj.transitions():
            print(f"replica {rep}: site {tr.site} branch {tr.slot} transitions {tr.count}")
            counts.append(tr.count)
        medians.append(counts)
        print(f"wrote {out}: {len(rows)} rows")
    if args.replicas > 1:
        per_slot = np.array(medians)  # (replicas, slots)
        med = np.median(per_slot, axis=0)
        for c, m in enumerate(med):
            print(f"median transitions slot {c}: {m:g}")
    return 0


def _with_suffix(path, suffix):
    root, ext = os.path.splitext(path)
    return f"{root}{suffix}{ext}"


def _add_config_args(p):
    p.add_argument("--p", type=int, default=8, help="multipole order (default 8)")
    p.add_argument("--depth", type=int, default=2, help="octree depth (default 2)")
    p.add_argument("--lattice", choices=("converged", "shells", "off"), default="converged")
    p.add_argument("--shell-cap", type=int, default=8, help="image shells in shells mode")
    p.add_argument("--no-dipole", action="store_true", help="drop the surface term")
    p.add_argument("--images", choices=("full", "minimum"), default="full",
                   help="intra-site image convention for correction bilinears")
    p.add_argument("--precision", choices=("double", "reduced"), default="double")


def build_parser():
    parser = _Parser(prog="lambdafmm",
                     description="Periodic multipole electrostatics with exact lambda forces "
                                 "from a single blended-charge solve.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random test system", parents=[])
    p.add_argument("--out", required=True)
    p.add_argument("--background", type=int, default=1000)
    p.add_argument("--site-forms", default="2", help="forms per site, e.g. '2,4'")
    p.add_argument("--site-atoms", type=int, default=10)
    p.add_argument("--box", type=float, default=10.0)
    p.add_argument("--placement", choices=("typical", "worst"), default="typical")
    p.add_argument("--no-neutralize", action="store_true")
    p.add_argument("--lambdas", default=None, help="per-site lambdas, e.g. '0.345;0.2,0.7'")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("energy", help="energy breakdown at the stored lambdas")
    p.add_argument("--system", required=True)
    p.add_argument("--lambdas", default=None)
    _add_config_args(p)
    p.set_defaults(func=_cmd_energy)

    p = sub.add_parser("lambda-forces", help="per-branch lambda forces")
    p.add_argument("--system", required=True)
    p.add_argument("--lambdas", default=None)
    p.add_argument("--mode", choices=("hi", "qi"), default="hi")
    _add_config_args(p)
    p.set_defaults(func=_cmd_lambda_forces)

    p = sub.add_parser("compare-hi-qi",
                       help="interpolated vs charge-route forces and the pairwise identity")
    p.add_argument("--system", required=True)
    p.add_argument("--lambdas", default=None)
    p.add_argument("--tol", type=float, default=1e-9,
                   help="identity tolerance, relative to |k| (default 1e-9)")
    _add_config_args(p)
    p.set_defaults(func=_cmd_compare)
    p.set_defaults(images="minimum")

    p = sub.add_parser("accuracy-sweep", help="deviation vs order/depth grid to CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--depths", default="1,2,3")
    p.add_argument("--orders", default="4,8,16,28")
    p.add_argument("--placement", choices=("typical", "worst"), default="typical")
    p.add_argument("--site-forms", default="2")
    p.add_argument("--lambdas", default="0.345")
    p.add_argument("--background", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lattice", choices=("converged", "shells"), default="converged")
    p.add_argument("--shell-cap", type=int, default=8)
    p.add_argument("--no-dipole", action="store_true")
    p.set_defaults(func=_cmd_accuracy_sweep)

    p = sub.add_parser("bench", help="correction-phase scaling benchmark to CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--form-counts", default="16,32,64,128,256,512")
    p.add_argument("--background", type=int, default=100000)
    p.add_argument("--forms-per-site", type=int, default=4)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--p", type=int, default=6)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("dynamics", help="Langevin lambda dynamics to CSV")
    p.add_argument("--system", default=None)
    p.add_argument("--mirror", action="store_true", help="built-in mirror-pair benchmark system")
    p.add_argument("--separation", type=float, default=0.5)
    p.add_argument("--barrier-kt", type=float, default=1.0)
    p.add_argument("--lambdas", default=None)
    p.add_argument("--mode", choices=("hi", "qi"), default="hi")
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--dt", type=float, default=0.002)
    p.add_argument("--temperature", type=float, default=300.0)
    p.add_argument("--friction", type=float, default=5.0)
    p.add_argument("--bias-height", type=float, default=5.0)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--sample-every", type=int, default=10)
    p.add_argument("--per-step-engine", action="store_true",
                   help="full engine solve every step instead of the precomputed field")
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=_cmd_dynamics)

    return parser


def cli_main(argv=None):
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except NumericalFailure as exc:
        sys.stderr.write(f"lambdafmm: numerical failure: {exc}\n")
        return 2
    except AssertionError as exc:
        sys.stderr.write(f"lambdafmm: cross-check failed: {exc}\n")
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        sys.stderr.write(f"lambdafmm: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(cli_main())
