import numpy as np
from numpy.testing import assert_allclose

from lambdafmm.fmm import harmonics as sh


def rng(seed=0):
    return np.random.default_rng(seed)


def random_points(r, n=6, seed=0):
    g = rng(seed)
    pts = g.normal(size=(n, 3))
    pts *= (r * g.uniform(0.3, 1.0, size=(n, 1))) / np.linalg.norm(pts, axis=1, keepdims=True)
    return pts


def test_ncoef_and_idx():
    assert sh.ncoef(0) == 1
    assert sh.ncoef(3) == 16
    assert sh.idx(0, 0) == 0
    assert sh.idx(1, -1) == 1
    assert sh.idx(1, 0) == 2
    assert sh.idx(1, 1) == 3
    assert sh.idx(2, -2) == 4


def test_low_order_closed_forms():
    p = 2
    xyz = np.array([[0.3, -0.4, 0.5]])
    x, y, z = xyz[0]
    r = np.linalg.norm(xyz[0])
    rv = sh.regular(xyz, p)[0]
    assert_allclose(rv[sh.idx(0, 0)], 1.0, atol=1e-15)
    assert_allclose(rv[sh.idx(1, 0)], z, atol=1e-15)
    assert_allclose(rv[sh.idx(1, 1)], (x + 1j * y) / 2, atol=1e-15)
    iv = sh.irregular(xyz, p)[0]
    assert_allclose(iv[sh.idx(0, 0)], 1 / r, atol=1e-15)
    assert_allclose(iv[sh.idx(1, 0)], z / r**3, atol=1e-15)


def test_multipole_matches_direct_potential():
    # potential of a small cluster evaluated far away
    p = 16
    src = random_points(0.4, n=8, seed=1)
    q = rng(2).uniform(-1, 1, size=8)
    mult = sh.particle_multipole(src, q, p)
    targets = random_points(0.5, n=5, seed=3) + np.array([3.0, 0.0, 0.0])
    pot = sh.eval_multipole(mult, targets, p)
    direct = np.array([np.sum(q / np.linalg.norm(t - src, axis=1)) for t in targets])
    assert_allclose(pot, direct, rtol=1e-12, atol=1e-14)


def test_m2m_translation_exact():
    # re-centered multipole reproduces the original expansion exactly
    p = 12
    src = random_points(0.3, n=6, seed=4)
    q = rng(5).uniform(-1, 1, size=6)
    shift = np.array([0.21, -0.13, 0.17])
    child = sh.particle_multipole(src - shift, q, p)  # expansion about `shift`
    parent = sh.m2m_matrix(tuple(-shift), p) @ child  # move center to the origin
    direct = sh.particle_multipole(src, q, p)
    assert_allclose(parent, direct, rtol=0, atol=1e-13)


def test_l2l_translation_exact():
    p = 10
    src = random_points(1.0, n=4, seed=6) * 4.0
    q = rng(7).uniform(-1, 1, size=4)
    # build a local expansion about the origin from far sources
    local = np.conj(sh.irregular(src, p)).T @ q.astype(np.complex128)
    shift = np.array([0.08, 0.05, -0.11])
    moved = sh.l2l_matrix(tuple(shift), p) @ local
    targets = random_points(0.12, n=5, seed=8)
    a = sh.eval_local(local, targets, p)
    b = sh.eval_local(moved, targets - shift, p)
    assert_allclose(a, b, rtol=0, atol=1e-12)


def test_m2l_translation_converges():
    p = 20
    src = random_points(0.3, n=6, seed=9)
    q = rng(10).uniform(-1, 1, size=6)
    sep = np.array([2.0, 0.4, -0.3])
    mult = sh.particle_multipole(src, q, p)
    local = sh.m2l_matrix(tuple(sep), p) @ mult
    targets = random_points(0.3, n=5, seed=11)
    pot = sh.eval_local(local, targets, p)
    direct = np.array(
        [np.sum(q / np.linalg.norm(t + sep - src, axis=1)) for t in targets]
    )
    assert_allclose(pot, direct, rtol=1e-9, atol=1e-11)


def test_matrix_and_vector_operator_forms_agree():
    p = 6
    shift = np.array([0.4, -0.2, 0.9])
    rv_neg = sh.regular(-shift[None, :], p)[0]
    rv_pos = sh.regular(shift[None, :], p)[0]
    iv_neg = sh.irregular(-shift[None, :], 2 * p)[0]
    m = rng(12).normal(size=sh.ncoef(p)) + 1j * rng(13).normal(size=sh.ncoef(p))
    d = tuple(shift)
    assert_allclose(sh.m2m_from_regular(rv_neg, p) @ m, sh.m2m_matrix(d, p) @ m, atol=1e-13)
    assert_allclose(sh.l2l_from_regular(rv_pos, p) @ m, sh.l2l_matrix(d, p) @ m, atol=1e-13)
    assert_allclose(sh.m2l_from_irregular(iv_neg, p) @ m, sh.m2l_matrix(d, p) @ m, atol=1e-13)


def test_local_gradient_matches_finite_difference():
    p = 8
    src = random_points(1.0, n=4, seed=14) * 3.0
    q = rng(15).uniform(-1, 1, size=4)
    local = np.conj(sh.irregular(src, p)).T @ q.astype(np.complex128)
    pt = np.array([[0.05, -0.1, 0.07]])
    grad = sh.eval_local_grad(local, pt, p)[0]
    h = 1e-6
    fd = np.zeros(3)
    for d in range(3):
        lo = pt.copy()
        hi = pt.copy()
        lo[0, d] -= h
        hi[0, d] += h
        fd[d] = (sh.eval_local(local, hi, p)[0] - sh.eval_local(local, lo, p)[0]) / (2 * h)
    assert_allclose(grad, fd, rtol=0, atol=1e-8)


def test_contract_is_pair_energy():
    # M.L with L built at the M center equals the source-target interaction
    p = 24
    src = random_points(0.25, n=5, seed=16)
    qs = rng(17).uniform(-1, 1, size=5)
    tgt = random_points(0.25, n=4, seed=18) + np.array([3.0, 0.0, 0.0])
    qt = rng(19).uniform(-1, 1, size=4)
    mult = sh.particle_multipole(src, qs, p)
    local = sh.m2l_matrix((3.0, 0.0, 0.0), p) @ mult
    # evaluate the local expansion at the target cluster, weight by target charges
    energy = np.sum(qt * sh.eval_local(local, tgt - np.array([3.0, 0.0, 0.0]), p))
    direct = 0.0
    for t, w in zip(tgt, qt):
        direct += w * np.sum(qs / np.linalg.norm(t - src, axis=1))
    assert_allclose(energy, direct, rtol=1e-12)
    # same number through the coefficient pairing
    tgt_mult = sh.particle_multipole(tgt - np.array([3.0, 0.0, 0.0]), qt, p)
    assert_allclose(sh.contract(tgt_mult, local), direct, rtol=1e-12)


def test_multi_column_charges_match_stacked_calls():
    p = 7
    src = random_points(0.4, n=9, seed=20)
    q2 = rng(21).uniform(-1, 1, size=(9, 3))
    stacked = np.stack([sh.particle_multipole(src, q2[:, k], p) for k in range(3)], axis=1)
    multi = sh.particle_multipole(src, q2, p)
    assert_allclose(multi, stacked, rtol=0, atol=1e-15)


def test_conjugate_symmetry_residual():
    p = 9
    src = random_points(0.4, n=6, seed=22)
    q = rng(23).uniform(-1, 1, size=6)
    mult = sh.particle_multipole(src, q, p)
    scale = np.max(np.abs(mult))
    assert sh.conjugate_symmetry_residual(mult, p) < 1e-14 * scale
    broken = mult.copy()
    broken[sh.idx(2, 1)] += 0.1
    assert sh.conjugate_symmetry_residual(broken, p) > 0.05
