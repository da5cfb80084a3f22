"""Scaled solid harmonics and expansion translation operators.

Conventions, fixed across the package:

    R_l^m(r) = P_l^m(cos th) r^l  e^{i m phi} / (l+m)!     regular
    I_l^m(r) = (l-m)! P_l^m(cos th) e^{i m phi} / r^(l+1)  irregular

with no Condon-Shortley phase and X_l^{-m} = (-1)^m conj(X_l^m).
Coefficient vectors are flat complex arrays of length (p+1)^2 indexed by
idx = l*l + l + m.

Identities this module relies on:

    1/|a - b|  = sum_lm R_lm(b) conj(I_lm(a))        for |b| < |a|
    R_l^m(x+y) = sum_{j<=l,k} R_j^k(x) R_{l-j}^{m-k}(y)
    d/dz R_l^m = R_{l-1}^m
    (d/dx - i d/dy) R_l^m =  R_{l-1}^{m-1}
    (d/dx + i d/dy) R_l^m = -R_{l-1}^{m+1}

A multipole expansion about c is M_lm = sum_i q_i R_lm(r_i - c); its far
potential is Phi(P) = Re sum_lm M_lm conj(I_lm(P - c)). A local expansion
evaluates as Phi(P) = Re sum_lm L_lm R_lm(P - c); the missing conjugation is
deliberate, it keeps every translation operator complex-linear so expansions
for many charge sets can share one operator application.
"""

from functools import lru_cache

import numpy as np


def ncoef(p):
    """Number of coefficients in an expansion of order p."""
    return (p + 1) * (p + 1)


def idx(l, m):
    """Flat index of the (l, m) coefficient."""
    return l * l + l + m


@lru_cache(maxsize=None)
def index_arrays(p):
    """Arrays (l_of_idx, m_of_idx) for order p, each of length (p+1)^2."""
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(p + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(p + 1)])
    ls.setflags(write=False)
    ms.setflags(write=False)
    return ls, ms


def _prepare(xyz):
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    return x + 1j * y, z, x * x + y * y + z * z


def regular(xyz, p):
    """Regular solid harmonics R_lm for each row of xyz, shape (n, (p+1)^2)."""
    u, z, r2 = _prepare(xyz)
    out = np.zeros((z.shape[0], ncoef(p)), dtype=np.complex128)
    rmm = np.ones_like(u)
    for m in range(p + 1):
        if m > 0:
            rmm = rmm * u / (2.0 * m)
        out[:, idx(m, m)] = rmm
        if m + 1 <= p:
            out[:, idx(m + 1, m)] = z * rmm
        for l in range(m + 2, p + 1):
            out[:, idx(l, m)] = (
                (2 * l - 1) * z * out[:, idx(l - 1, m)]
                - r2 * out[:, idx(l - 2, m)]
            ) / ((l + m) * (l - m))
    for l in range(1, p + 1):
        for m in range(1, l + 1):
            out[:, idx(l, -m)] = (-1) ** m * np.conj(out[:, idx(l, m)])
    return out


def irregular(xyz, p):
    """Irregular solid harmonics I_lm for each row of xyz, shape (n, (p+1)^2).

    Rows must have r > 0.
    """
    u, z, r2 = _prepare(xyz)
    inv_r2 = 1.0 / r2
    out = np.zeros((z.shape[0], ncoef(p)), dtype=np.complex128)
    imm = np.sqrt(inv_r2).astype(np.complex128)
    for m in range(p + 1):
        if m > 0:
            imm = (2 * m - 1) * imm * u * inv_r2
        out[:, idx(m, m)] = imm
        if m + 1 <= p:
            out[:, idx(m + 1, m)] = (2 * m + 1) * z * imm * inv_r2
        for l in range(m + 2, p + 1):
            out[:, idx(l, m)] = (
                (2 * l - 1) * z * out[:, idx(l - 1, m)]
                - ((l - 1) ** 2 - m * m) * out[:, idx(l - 2, m)]
            ) * inv_r2
    for l in range(1, p + 1):
        for m in range(1, l + 1):
            out[:, idx(l, -m)] = (-1) ** m * np.conj(out[:, idx(l, m)])
    return out


@lru_cache(maxsize=None)
def _grad_maps(p):
    # gather indices into the order-p R vector for (l-1, m-1), (l-1, m+1), (l-1, m)
    ls, ms = index_arrays(p)
    maps = []
    for dm in (-1, 1, 0):
        lt, mt = ls - 1, ms + dm
        ok = (lt >= 0) & (np.abs(mt) <= lt)
        src = np.where(ok, lt * lt + lt + mt, 0)
        maps.append((src, ok))
    return maps


def regular_grad(xyz, p):
    """Cartesian gradients of R_lm, shape (n, (p+1)^2, 3)."""
    rv = regular(xyz, p)
    (sa, oa), (sb, ob), (sc, oc) = _grad_maps(p)
    a = np.where(oa, rv[:, sa], 0.0)  # R_{l-1}^{m-1}
    b = np.where(ob, rv[:, sb], 0.0)  # R_{l-1}^{m+1}
    c = np.where(oc, rv[:, sc], 0.0)  # R_{l-1}^{m}
    out = np.empty(rv.shape + (3,), dtype=np.complex128)
    out[..., 0] = 0.5 * (a - b)
    out[..., 1] = 0.5j * (a + b)
    out[..., 2] = c
    return out


@lru_cache(maxsize=None)
def _translation_map(p):
    ls, ms = index_arrays(p)
    dl = ls[:, None] - ls[None, :]
    dm = ms[:, None] - ms[None, :]
    ok = (dl >= 0) & (np.abs(dm) <= dl)
    src = np.where(ok, dl * dl + dl + dm, 0)
    return src, ok


@lru_cache(maxsize=None)
def _m2l_map(p):
    ls, ms = index_arrays(p)
    n_, mu = ls[:, None], ms[:, None]
    j, k = ls[None, :], ms[None, :]
    lsrc = n_ + j
    msrc = -(mu + k)
    src = lsrc * lsrc + lsrc + msrc
    sign = np.where((j + mu + k) % 2 == 0, 1.0, -1.0)
    return src, sign


def m2m_matrix(d, p):
    """Operator A with M_new = A @ M_old for a center shift c_new = c_old + d."""
    src, ok = _translation_map(p)
    rv = regular(-np.asarray(d, dtype=np.float64)[None, :], p)[0]
    return np.where(ok, rv[src], 0.0)


def l2l_matrix(d, p):
    """Operator C with L_new = C @ L_old for a center shift c_new = c_old + d."""
    src, ok = _translation_map(p)
    rv = regular(np.asarray(d, dtype=np.float64)[None, :], p)[0]
    return np.where(ok, rv[src], 0.0).T


def m2l_matrix(d, p):
    """Operator B with L_target = B @ M_source, d = c_target - c_source.

    L_n^mu = sum_jk (-1)^(j+mu+k) M_j^k I_{n+j}^{-(mu+k)}(c_source - c_target);
    requires |d| large enough for the separated expansion to converge.
    """
    src, sign = _m2l_map(p)
    iv = irregular(-np.asarray(d, dtype=np.float64)[None, :], 2 * p)[0]
    return sign * iv[src]


def m2m_from_regular(rv, p):
    """M2M matrix from a precomputed vector rv = R(-d), or any sum of such.

    m2m_matrix(d, p) == m2m_from_regular(regular(-d), p); summing rv over a
    set of displacements yields the aggregated operator in one gather.
    """
    src, ok = _translation_map(p)
    return np.where(ok, rv[src], 0.0)


def l2l_from_regular(rv, p):
    """L2L matrix from rv = R(d); see m2m_from_regular."""
    src, ok = _translation_map(p)
    return np.where(ok, rv[src], 0.0).T


def m2l_from_irregular(iv, p):
    """M2L matrix from iv = I(-d) at order 2p, or any sum of such.

    m2l_matrix(d, p) == m2l_from_irregular(irregular(-d, 2p), p). iv may
    also be a stack (..., (2p+1)^2); the gather maps over leading axes.
    """
    src, sign = _m2l_map(p)
    return sign * iv[..., src]


def particle_multipole(disp, charges, p):
    """Multipole coefficients about a center: M = sum_i q_i R(disp_i).

    disp: (n, 3) displacements r_i - c. charges: (n,) or (n, K) for several
    charge sets sharing positions; result (ncoef,) or (ncoef, K).
    """
    rv = regular(disp, p)
    q = np.asarray(charges, dtype=np.float64)
    if q.ndim == 1:
        return rv.T @ q.astype(np.complex128)
    return rv.T @ q.astype(np.complex128)


def eval_local(coeffs, disp, p):
    """Potential of a local expansion at displacements disp = P - c.

    coeffs: (ncoef,) or (ncoef, K); returns (n,) or (n, K) real.
    """
    rv = regular(disp, p)
    return np.real(rv @ coeffs)


def eval_local_grad(coeffs, disp, p):
    """Gradient of the local-expansion potential, (n, 3) or (n, K, 3) real."""
    gv = regular_grad(disp, p)  # (n, nc, 3)
    c = np.asarray(coeffs)
    if c.ndim == 1:
        return np.real(np.einsum("ncd,c->nd", gv, c))
    return np.real(np.einsum("ncd,ck->nkd", gv, c))


def eval_multipole(coeffs, disp, p):
    """Far potential of a multipole expansion at displacements disp = P - c."""
    iv = irregular(disp, p)
    return np.real(np.conj(iv) @ coeffs)


def contract(mcoeffs, lcoeffs):
    """Energy pairing sum_lm M_lm L_lm (real part).

    For conjugate-symmetric inputs the imaginary part is roundoff only.
    """
    return np.real(np.sum(mcoeffs * lcoeffs, axis=0))


def conjugate_symmetry_residual(coeffs, p):
    """Max |X_{l,-m} - (-1)^m conj(X_lm)| over the vector; 0 for physical data."""
    ls, ms = index_arrays(p)
    flip = ls * ls + ls - ms
    sign = np.where(ms % 2 == 0, 1.0, -1.0)
    c = np.asarray(coeffs)
    ax = tuple(range(c.ndim))
    return np.max(np.abs(c[flip] - sign.reshape((-1,) + (1,) * (c.ndim - 1)) * np.conj(c)), axis=None)
