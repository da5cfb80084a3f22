import numpy as np
from numpy.testing import assert_allclose

from lambdafmm.fmm import harmonics as sh
from lambdafmm.fmm import lattice


def test_shell_vectors_counts():
    assert lattice.shell_vectors(0, 0).shape == (1, 3)
    assert lattice.shell_vectors(0, 1).shape == (27, 3)
    assert lattice.shell_vectors(2, 2).shape == (125 - 27, 3)
    assert lattice.shell_vectors(3, 2).shape == (0, 3)


def test_shell_operator_matches_brute_image_sum():
    # apply T to a random multipole and compare against summing the
    # images one by one with the generic M2L operator
    p = 6
    cap = 3
    op = lattice.shell_sum_operator(p, cap)
    g = np.random.default_rng(0)
    src = g.uniform(-0.2, 0.2, size=(5, 3))
    q = g.uniform(-1, 1, size=5)
    mult = sh.particle_multipole(src, q, p)
    brute = np.zeros(sh.ncoef(p), dtype=np.complex128)
    for v in lattice.shell_vectors(2, cap):
        # image box center sits at -v relative to the home box center
        brute += sh.m2l_matrix(tuple(-v.astype(float)), p) @ mult
    assert_allclose(op.matrix @ mult, brute, rtol=0, atol=1e-12)


def test_operator_symmetry():
    for op in (lattice.shell_sum_operator(4, 3), lattice.converged_operator(4)):
        assert_allclose(op.matrix, op.matrix.T, rtol=0, atol=0)


def test_scaled_operator_matches_rebuild():
    # scaling the unit-box operator equals building on the scaled lattice:
    # entries are sums of I_{l+j}(v L), homogeneous of degree -(l+j+1)
    p = 5
    cap = 3
    box = 2.5
    op = lattice.shell_sum_operator(p, cap)
    scaled = op.scaled(box)
    iv = sh.irregular(lattice.shell_vectors(2, cap).astype(float) * box, 2 * p).sum(axis=0)
    direct = sh.m2l_from_irregular(iv, p)
    direct = 0.5 * (direct + direct.T)
    assert np.max(np.abs(scaled - direct)) < 1e-13 * np.max(np.abs(direct))


def test_converged_operator_low_orders_zeroed():
    p = 4
    op = lattice.converged_operator(p)
    ls, _ = sh.index_arrays(p)
    low = (ls[:, None] + ls[None, :]) <= 3
    assert np.all(op.matrix[low] == 0.0)


def test_converged_operator_approaches_infinite_shell_limit():
    # the telescoped build truncates supercell re-expansion at order p, so
    # each entry carries a truncation error that dies out as p grows; the
    # slowest entry (0,0)x(4,0) must land on the extrapolated infinite
    # cubic-shell value once p is high enough
    i, j = sh.idx(0, 0), sh.idx(4, 0)
    caps = [8, 12, 16, 24]
    vals = [lattice.shell_sum_operator(4, c).matrix[i, j].real for c in caps]
    # partial sums tail off as a/c^2 + b/c^3 + d/c^4; solve for the limit
    coeff = np.array([[1.0, c**-2.0, c**-3.0, c**-4.0] for c in caps])
    limit = np.linalg.solve(coeff, vals)[0]
    lo = abs(lattice.converged_operator(4).matrix[i, j].real - limit)
    hi = abs(lattice.converged_operator(14).matrix[i, j].real - limit)
    assert hi < 2e-6 * abs(limit)
    assert hi < lo / 100


def test_rocksalt_energy_matches_madelung():
    # 8 alternating unit charges on a cubic sublattice form the rocksalt
    # crystal; the tinfoil lattice energy per ion pair is the Madelung
    # constant over the nearest-neighbor distance
    from lambdafmm.fmm.solver import PeriodicSolver, SolverConfig

    box = 2.0
    a = box / 2
    grid = np.stack(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij"), axis=-1).reshape(-1, 3)
    pos = (grid + 0.25) * a
    charges = np.where(grid.sum(axis=1) % 2 == 0, 1.0, -1.0)
    cfg = SolverConfig(p=22, depth=0, lattice_mode="converged", dipole=True)
    res = PeriodicSolver(pos, box, cfg).solve(charges)
    madelung = 1.7475645946331822
    expected = -8.0 * madelung / box  # 4 ion pairs at spacing box/2
    assert_allclose(res.energy, expected, rtol=1e-10)


def test_dipole_term_consistency():
    g = np.random.default_rng(1)
    box = 3.0
    pos = g.uniform(0, box, size=(7, 3))
    q = g.uniform(-1, 1, size=7)
    d = lattice.dipole_vector(pos, q, box)
    e = lattice.dipole_energy(d, box)
    # potentials integrate back to the energy
    v = lattice.dipole_potentials(pos, d, box)
    assert_allclose(0.5 * np.dot(q, v), e, rtol=1e-13)
    # forces match -dE/dr by finite differences
    f = lattice.dipole_forces(q, d, box)
    h = 1e-6
    for i in (0, 3):
        for ax in range(3):
            lo = pos.copy()
            hi = pos.copy()
            lo[i, ax] -= h
            hi[i, ax] += h
            elo = lattice.dipole_energy(lattice.dipole_vector(lo, q, box), box)
            ehi = lattice.dipole_energy(lattice.dipole_vector(hi, q, box), box)
            assert_allclose(f[i, ax], -(ehi - elo) / (2 * h), rtol=0, atol=1e-8)


def test_dipole_multi_column():
    g = np.random.default_rng(2)
    box = 2.0
    pos = g.uniform(0, box, size=(6, 3))
    q = g.uniform(-1, 1, size=(6, 3))
    d = lattice.dipole_vector(pos, q, box)
    assert d.shape == (3, 3)
    e = lattice.dipole_energy(d, box)
    for k in range(3):
        dk = lattice.dipole_vector(pos, q[:, k], box)
        assert_allclose(d[:, k], dk, rtol=0, atol=0)
        assert_allclose(e[k], lattice.dipole_energy(dk, box), rtol=0, atol=0)


def test_lattice_bilinear_symmetric():
    p = 4
    op = lattice.shell_sum_operator(p, 3)
    g = np.random.default_rng(3)
    src = g.uniform(-0.3, 0.3, size=(6, 3))
    qa = g.uniform(-1, 1, size=6)
    qb = g.uniform(-1, 1, size=6)
    oma = sh.particle_multipole(src, qa, p)
    omb = sh.particle_multipole(src, qb, p)
    ab = lattice.lattice_bilinear(op.matrix, np.conj(oma), omb)
    ba = lattice.lattice_bilinear(op.matrix, np.conj(omb), oma)
    assert_allclose(ab, ba, rtol=1e-12, atol=1e-15)


def test_corner_dipole_charges_moments():
    box = 2.0
    dvec = np.array([0.4, -0.7, 0.2])
    pos, q = lattice.corner_dipole_charges(dvec, box)
    assert pos.shape == (50, 3)
    assert abs(np.sum(q)) < 1e-12
    d = lattice.dipole_vector(pos, q, box)
    assert_allclose(d, dvec, rtol=0, atol=1e-12)
    # moments of order 2..4 about the box center vanish
    rv = sh.regular(pos - 0.5 * box, 4)
    mom = rv.T @ q.astype(np.complex128)
    ls, _ = sh.index_arrays(4)
    assert np.max(np.abs(mom[ls >= 2])) < 1e-12
