"""Periodic electrostatics through a uniform fast multipole method.

One solve produces per-particle potentials and energies for one or many
charge sets sharing the same positions (charges of shape (N,) or (N, K);
the extra sets ride along through every matrix stage nearly for free).

Pipeline: particles aggregate into leaf multipoles, M2M walks them to the
root; each level's interaction list (grouped by grid offset) turns source
multipoles into local expansions, L2L walks locals down, leaves evaluate;
the 27 near images are summed directly pairwise. The root multipole meets
the far images of the whole box through the lattice operator, and the box
dipole adds the surface term. With depth 0 the same code path degenerates
to direct near images plus lattice plus surface term.

Conventions that make results reproducible to the bit: particles are
processed in canonical tree order regardless of input order, reductions
over particles use exact summation, and near-field kernels run serially.

Energies are in e^2/nm; multiply by units.COULOMB_KJ_PER_MOL for kJ/mol.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import harmonics, lattice, octree

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None


@dataclass
class SolverConfig:
    """Knobs of one solver instance; validated on solver construction.

    lattice_mode "converged" sums the infinite image lattice, "shells"
    sums images 2 <= ||v||inf <= shell_cap exactly (for comparisons with
    a direct sum over the same set), "off" stops at the 27 near images.
    periodic_near=False drops even those (bare cluster; depth 0, lattice
    off only). precision "single" rounds after every operator stage to
    probe error floors; results are then qualitative. intra_site_images
    picks the pair treatment inside the titration correction terms:
    "full" matches the solver (near images + lattice + surface term),
    "minimum" uses the minimum-image pair sum only.
    """

    p: int = 8
    depth: int = 2
    lattice_mode: str = "converged"
    shell_cap: int = 8
    dipole: bool = True
    periodic_near: bool = True
    precision: str = "double"
    intra_site_images: str = "full"

    def validated(self):
        if not 1 <= self.p <= 40:
            raise ValueError(f"expansion order p={self.p} outside [1, 40]")
        if not 0 <= self.depth <= 6:
            raise ValueError(f"tree depth {self.depth} outside [0, 6]")
        if self.lattice_mode not in ("converged", "shells", "off"):
            raise ValueError(f"unknown lattice_mode {self.lattice_mode!r}")
        if self.lattice_mode == "shells" and self.shell_cap < 2:
            raise ValueError("shells mode needs shell_cap >= 2")
        if self.precision not in ("double", "single"):
            raise ValueError(f"unknown precision {self.precision!r}")
        if self.intra_site_images not in ("full", "minimum"):
            raise ValueError(f"unknown intra_site_images {self.intra_site_images!r}")
        if not self.periodic_near and (self.depth != 0 or self.lattice_mode != "off"):
            raise ValueError("periodic_near=False requires depth=0 and lattice_mode='off'")
        return self


@dataclass
class SolveResult:
    """Potentials (input particle order) and energy pieces of one solve.

    With charges (N, K) all per-particle arrays are (N, K) and energies
    are (K,); with charges (N,) everything is squeezed.
    """

    potentials: np.ndarray  # near + far + surface
    near_potentials: np.ndarray
    far_potentials: np.ndarray
    dipole_potentials: np.ndarray
    energy: np.ndarray
    near_energy: np.ndarray
    far_energy: np.ndarray
    dipole_energy: np.ndarray
    root_multipole: np.ndarray  # ((p+1)^2,[ K]) complex, about the box center
    dipole_vector: np.ndarray  # (3,[ K])
    total_charge: np.ndarray


def _stage_round(a):
    if np.iscomplexobj(a):
        return a.astype(np.complex64).astype(np.complex128)
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


def _column_fsum(values):
    """Exact per-column sums of a (N, K) array."""
    return np.array([math.fsum(values[:, k].tolist()) for k in range(values.shape[1])])


@lru_cache(maxsize=48)
def _cached_m2m(dx, dy, dz, p):
    return harmonics.m2m_matrix(np.array([dx, dy, dz]), p)


@lru_cache(maxsize=48)
def _cached_l2l(dx, dy, dz, p):
    return harmonics.l2l_matrix(np.array([dx, dy, dz]), p)


@lru_cache(maxsize=8)
def _offset_irregulars(p, size):
    """Irregular vectors of all 316 interaction offsets at one level scale."""
    return harmonics.irregular(octree.M2L_OFFSETS * float(size), 2 * p)


def near_field(tree, charges, periodic=True):
    """Direct potentials from the 27 near images; charges (N, K) canonical
    order, result (N, K) canonical order."""
    if periodic:
        nb_box, nb_shift = tree.nb_box, tree.nb_shift
    else:
        nb_box, nb_shift = tree.nb_box[:, 13:14], tree.nb_shift[:, 13:14, :]
    shift_len = nb_shift * tree.box_length
    if numba is not None:
        out = np.zeros_like(charges)
        _p2p_potentials(
            tree.positions, tree.leaf_start, nb_box, shift_len.astype(np.float64),
            charges, out,
        )
        return out
    return _p2p_potentials_numpy(tree, nb_box, shift_len, charges)


def _p2p_potentials_numpy(tree, nb_box, shift_len, charges):
    pos, start = tree.positions, tree.leaf_start
    out = np.zeros_like(charges)
    for b in range(nb_box.shape[0]):
        t0, t1 = start[b], start[b + 1]
        if t1 == t0:
            continue
        for t in range(nb_box.shape[1]):
            s = nb_box[b, t]
            s0, s1 = start[s], start[s + 1]
            if s1 == s0:
                continue
            disp = pos[t0:t1, None, :] - (pos[None, s0:s1, :] + shift_len[b, t])
            r = np.sqrt(np.sum(disp * disp, axis=2))
            if s == b and not np.any(shift_len[b, t]):
                np.fill_diagonal(r, np.inf)
            out[t0:t1] += (1.0 / r) @ charges[s0:s1]
    return out


if numba is not None:

    @numba.njit(cache=False)
    def _p2p_potentials(pos, start, nb_box, shift_len, q, out):
        nleaf = nb_box.shape[0]
        nk = q.shape[1]
        for b in range(nleaf):
            t0, t1 = start[b], start[b + 1]
            if t1 == t0:
                continue
            for t in range(nb_box.shape[1]):
                s = nb_box[b, t]
                s0, s1 = start[s], start[s + 1]
                if s1 == s0:
                    continue
                sx = shift_len[b, t, 0]
                sy = shift_len[b, t, 1]
                sz = shift_len[b, t, 2]
                same = s == b and sx == 0.0 and sy == 0.0 and sz == 0.0
                for i in range(t0, t1):
                    xi = pos[i, 0]
                    yi = pos[i, 1]
                    zi = pos[i, 2]
                    for j in range(s0, s1):
                        if same and j == i:
                            continue
                        dx = xi - pos[j, 0] - sx
                        dy = yi - pos[j, 1] - sy
                        dz = zi - pos[j, 2] - sz
                        inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
                        for k in range(nk):
                            out[i, k] += q[j, k] * inv


def near_field_gradient(tree, charges, periodic=True):
    """Gradient of the near-image potential at each particle, (N, 3) for a
    single charge column; canonical order. Direct pair loop, meant for the
    moderate sizes the force checks use."""
    if periodic:
        nb_box, nb_shift = tree.nb_box, tree.nb_shift
    else:
        nb_box, nb_shift = tree.nb_box[:, 13:14], tree.nb_shift[:, 13:14, :]
    shift_len = nb_shift * tree.box_length
    pos, start = tree.positions, tree.leaf_start
    q = charges.reshape(-1)
    out = np.zeros((pos.shape[0], 3))
    for b in range(nb_box.shape[0]):
        t0, t1 = start[b], start[b + 1]
        if t1 == t0:
            continue
        for t in range(nb_box.shape[1]):
            s = nb_box[b, t]
            s0, s1 = start[s], start[s + 1]
            if s1 == s0:
                continue
            disp = pos[t0:t1, None, :] - (pos[None, s0:s1, :] + shift_len[b, t])
            r2 = np.sum(disp * disp, axis=2)
            if s == b and not np.any(shift_len[b, t]):
                np.fill_diagonal(r2, np.inf)
            out[t0:t1] += np.einsum("tsd,ts,s->td", disp, -r2 ** -1.5, q[s0:s1])
    return out


def upward_pass(tree, charges, p, rounder=None):
    """Leaf multipoles and their M2M aggregation; charges (N, K) canonical
    order. Returns one ((p+1)^2, nbox, K) complex array per level, about
    physical box centers, index 0 = root."""
    nc = harmonics.ncoef(p)
    nk = charges.shape[1]
    out = [None] * (tree.depth + 1)
    leaf_level = tree.levels[tree.depth]
    m = np.zeros((nc, leaf_level.num_boxes, nk), dtype=np.complex128)
    centers = leaf_level.centers()
    start = tree.leaf_start
    for b in range(leaf_level.num_boxes):
        s0, s1 = start[b], start[b + 1]
        if s1 == s0:
            continue
        m[:, b, :] = harmonics.particle_multipole(
            tree.positions[s0:s1] - centers[b], charges[s0:s1], p
        )
    if rounder:
        m = rounder(m)
    out[tree.depth] = m
    for l in range(tree.depth - 1, -1, -1):
        level, child = tree.levels[l], tree.levels[l + 1]
        mp = np.zeros((nc, level.num_boxes, nk), dtype=np.complex128)
        for oi in range(8):
            d = (0.5 - octree.OCTANTS[oi]) * child.size
            t = _cached_m2m(d[0], d[1], d[2], p)
            ci = level.child_index[:, oi]
            mp += (t @ out[l + 1][:, ci, :].reshape(nc, -1)).reshape(mp.shape)
        if rounder:
            mp = rounder(mp)
        out[l] = mp
    return out


def downward_pass(tree, multipoles, p, root_local=None, rounder=None):
    """L2L plus per-level interactions; returns local expansions per level.

    root_local seeds level 0 (the lattice contribution); None means zero.
    """
    nc = harmonics.ncoef(p)
    nk = multipoles[0].shape[2]
    locals_ = [None] * (tree.depth + 1)
    if root_local is None:
        locals_[0] = np.zeros((nc, 1, nk), dtype=np.complex128)
    else:
        locals_[0] = root_local.reshape(nc, 1, nk)
    for l in range(1, tree.depth + 1):
        level, parent = tree.levels[l], tree.levels[l - 1]
        loc = np.zeros((nc, level.num_boxes, nk), dtype=np.complex128)
        for oi in range(8):
            d = (octree.OCTANTS[oi] - 0.5) * level.size
            t = _cached_l2l(d[0], d[1], d[2], p)
            ci = parent.child_index[:, oi]
            loc[:, ci, :] = (t @ locals_[l - 1].reshape(nc, -1)).reshape(nc, parent.num_boxes, nk)
        iv = _offset_irregulars(p, level.size)
        for row, targets, sources in level.m2l:
            tm = harmonics.m2l_from_irregular(iv[row], p)
            loc[:, targets, :] += (tm @ multipoles[l][:, sources, :].reshape(nc, -1)).reshape(
                nc, targets.size, nk
            )
        if rounder:
            loc = rounder(loc)
        locals_[l] = loc
    return locals_


def evaluate(tree, locals_, p):
    """Far potentials at the particles from leaf locals, (N, K) canonical order."""
    leaf_level = tree.levels[tree.depth]
    centers = leaf_level.centers()
    start = tree.leaf_start
    nk = locals_[tree.depth].shape[2]
    out = np.zeros((tree.num_particles, nk))
    for b in range(leaf_level.num_boxes):
        s0, s1 = start[b], start[b + 1]
        if s1 == s0:
            continue
        out[s0:s1] = harmonics.eval_local(
            locals_[tree.depth][:, b, :], tree.positions[s0:s1] - centers[b], p
        )
    return out


def evaluate_gradient(tree, locals_, p):
    """Far potential gradients at the particles, (N, 3), single charge column."""
    leaf_level = tree.levels[tree.depth]
    centers = leaf_level.centers()
    start = tree.leaf_start
    out = np.zeros((tree.num_particles, 3))
    for b in range(leaf_level.num_boxes):
        s0, s1 = start[b], start[b + 1]
        if s1 == s0:
            continue
        out[s0:s1] = harmonics.eval_local_grad(
            locals_[tree.depth][:, b, 0], tree.positions[s0:s1] - centers[b], p
        )
    return out


class PeriodicSolver:
    """FMM engine bound to one set of positions and one configuration."""

    def __init__(self, positions, box_length, config=None):
        from ..system import wrap_positions

        self.config = (config or SolverConfig()).validated()
        self.box_length = float(box_length)
        pos = wrap_positions(np.atleast_2d(np.asarray(positions, dtype=np.float64)), self.box_length)
        self.tree = octree.build_octree(pos, self.box_length, self.config.depth)
        if self.config.lattice_mode == "converged":
            op = lattice.converged_operator(self.config.p)
        elif self.config.lattice_mode == "shells":
            op = lattice.shell_sum_operator(self.config.p, self.config.shell_cap)
        else:
            op = None
        self.lattice_matrix = None if op is None else op.scaled(self.box_length)

    @property
    def num_particles(self):
        return self.tree.num_particles

    def solve(self, charges):
        cfg = self.config
        q = np.asarray(charges, dtype=np.float64)
        single = q.ndim == 1
        q2 = q[:, None] if single else q
        if q2.shape[0] != self.num_particles:
            raise ValueError(f"charges for {q2.shape[0]} particles, solver holds {self.num_particles}")
        qs = np.ascontiguousarray(q2[self.tree.perm])
        rounder = _stage_round if cfg.precision == "single" else None

        v_near = near_field(self.tree, qs, periodic=cfg.periodic_near)
        if rounder:
            v_near = rounder(v_near)

        multipoles = upward_pass(self.tree, qs, cfg.p, rounder)
        om_root = multipoles[0][:, 0, :]
        root_local = None
        if self.lattice_matrix is not None:
            root_local = self.lattice_matrix @ om_root
        self._locals = downward_pass(self.tree, multipoles, cfg.p, root_local, rounder)
        v_far = evaluate(self.tree, self._locals, cfg.p)
        if rounder:
            v_far = rounder(v_far)

        dvec = lattice.dipole_vector(self.tree.positions, qs, self.box_length)
        if cfg.dipole:
            v_dip = lattice.dipole_potentials(self.tree.positions, dvec, self.box_length)
            e_dip = np.atleast_1d(lattice.dipole_energy(dvec, self.box_length))
        else:
            v_dip = np.zeros_like(v_near)
            e_dip = np.zeros(qs.shape[1])

        e_near = 0.5 * _column_fsum(qs * v_near)
        e_far = 0.5 * _column_fsum(qs * v_far)
        inv = self.tree.inv_perm

        def back(a):
            a = a[inv]
            return a[:, 0] if single else a

        def scal(a):
            a = np.asarray(a, dtype=np.float64)
            return a[0] if single else a

        return SolveResult(
            potentials=back(v_near + v_far + v_dip),
            near_potentials=back(v_near),
            far_potentials=back(v_far),
            dipole_potentials=back(v_dip),
            energy=scal(e_near + e_far + e_dip),
            near_energy=scal(e_near),
            far_energy=scal(e_far),
            dipole_energy=scal(e_dip),
            root_multipole=om_root[:, 0] if single else om_root,
            dipole_vector=dvec[:, 0] if single else dvec,
            total_charge=scal(_column_fsum(qs)),
        )

    def spatial_forces(self, charges):
        """Forces -q grad(V) on every particle, (N, 3), single charge set.

        Runs a fresh solve internally; intended for checks and small
        systems rather than production dynamics.
        """
        cfg = self.config
        q = np.asarray(charges, dtype=np.float64).reshape(-1)
        qs = np.ascontiguousarray(q[self.tree.perm])[:, None]
        g_near = near_field_gradient(self.tree, qs, periodic=cfg.periodic_near)
        multipoles = upward_pass(self.tree, qs, cfg.p)
        root_local = None
        if self.lattice_matrix is not None:
            root_local = self.lattice_matrix @ multipoles[0][:, 0, :]
        locals_ = downward_pass(self.tree, multipoles, cfg.p, root_local)
        g_far = evaluate_gradient(self.tree, locals_, cfg.p)
        forces = -qs * (g_near + g_far)
        if cfg.dipole:
            dvec = lattice.dipole_vector(self.tree.positions, qs[:, 0], self.box_length)
            forces += lattice.dipole_forces(qs[:, 0], dvec, self.box_length)
        return forces[self.tree.inv_perm]
