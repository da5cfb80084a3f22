import numpy as np
import pytest
from numpy.testing import assert_allclose

from lambdafmm import bench


def test_timed_returns_median():
    calls = []

    def fn():
        calls.append(1)

    median = bench.timed(fn, reps=5, warmup=1)
    assert isinstance(median, float)
    assert median >= 0.0
    assert len(calls) == 6  # warmup + reps


def test_timed_clamps_reps_to_minimum():
    calls = []
    bench.timed(lambda: calls.append(1), reps=1, warmup=0)
    # reps below MIN_TIMING_REPS are raised to it, never rejected
    assert len(calls) == bench.MIN_TIMING_REPS


def test_linear_fit_quality_on_exact_line():
    xs = np.array([16, 32, 64, 128], dtype=float)
    ys = 3.0 * xs + 5.0
    r2, worst = bench.linear_fit_quality(xs, ys)
    assert r2 > 0.999999
    # doubling the form count at most doubles the (affine) time
    assert worst < 2.05


def test_linear_fit_quality_flags_quadratic():
    xs = np.array([16, 32, 64, 128], dtype=float)
    ys = xs**2
    r2, worst = bench.linear_fit_quality(xs, ys)
    assert worst > 3.5


def test_branch_deviations_small_system():
    from lambdafmm.fmm.solver import PeriodicSolver, SolverConfig
    from lambdafmm.generators import generate_random_system

    system, lam = generate_random_system(
        num_background=40, site_forms=(2,), site_atoms=4, box_length=4.0, seed=8
    )
    cfg = SolverConfig(p=10, depth=0)
    solver = PeriodicSolver(system.positions, system.box_length, cfg)
    rows = bench.branch_deviations(system, lam.values, solver)
    assert len(rows) == 1
    branch, dev = rows[0]
    assert branch == 0
    assert dev < 1e-12  # depth 0 is the exact-identity regime


def test_accuracy_sweep_rows():
    spec = bench.SweepSpec(
        depths=(1,),
        orders=(4, 8),
        num_background=40,
        site_forms=(2,),
        lambda_values=((0.345,),),
        seed=0,
        lattice_mode="shells",
        shell_cap=3,
    )
    rows = bench.accuracy_sweep(spec)
    assert len(rows) == 2  # one per (p, d) per branch
    for row in rows:
        assert set(row) == {"p", "d", "branch", "deviation"}
        assert row["d"] == 1
        assert np.isfinite(row["deviation"])
    devs = {row["p"]: row["deviation"] for row in rows}
    assert devs[8] < devs[4]


def test_accuracy_sweep_deterministic():
    spec = bench.SweepSpec(
        depths=(1,), orders=(6,), num_background=30, site_forms=(2,), seed=1
    )
    a = bench.accuracy_sweep(spec)
    b = bench.accuracy_sweep(spec)
    assert a == b


def test_scaling_bench_rows():
    rows = bench.scaling_bench(
        form_counts=(16, 32),
        num_background=2000,
        forms_per_site=4,
        depth=2,
        p=4,
        seed=0,
        reps=5,
    )
    assert len(rows) == 2
    for row in rows:
        assert set(row) == {
            "N",
            "sites",
            "forms",
            "d",
            "t_solve",
            "t_corrections",
            "overhead_vs_baseline",
        }
        assert row["t_solve"] > 0
        assert row["t_corrections"] > 0
        assert row["forms"] == row["sites"] * 4
    assert rows[0]["forms"] == 16
    assert rows[1]["forms"] == 32
