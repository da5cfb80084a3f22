"""Uniform periodic octree with canonical particle ordering.

Level l covers the box with a 2^l grid per axis; a box with grid coords
(ix, iy, iz) has flat index (ix*n + iy)*n + iz. Particles are reordered
once into canonical order (leaf, then x, y, z); every internal array uses
that order and inv_perm maps results back, so outputs are independent of
the input ordering down to the last bit.

All partner bookkeeping is periodic. A partner is a (box, shift) pair:
the interacting image sits at the wrapped box translated by shift (in box
lengths), so on coarse grids one box can appear several times under
different shifts. Interaction lists are grouped by grid offset: the M2L
matrix depends only on the offset, so each offset is one matrix applied
to many (target, source) column pairs. An offset is usable for a target
box exactly when the parent displacement floor((parity + o)/2) stays
within +-1 on every axis, which depends only on the box parity.
"""

from dataclasses import dataclass, field

import numpy as np


def _offset_cube(r):
    ax = np.arange(-r, r + 1)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


NEIGHBOR_OFFSETS = _offset_cube(1)  # (27, 3), lexicographic; (0,0,0) at row 13
M2L_OFFSETS = _offset_cube(3)[np.abs(_offset_cube(3)).max(axis=1) >= 2]  # (316, 3)
OCTANTS = np.stack(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij"), axis=-1).reshape(-1, 3)

# valid(par, o): parent offset floor((par+o)/2) in {-1,0,1} <=> -2-par <= o <= 3-par
_AXIS_VALID = np.zeros((2, 7), dtype=bool)  # [parity, o+3]
for _par in (0, 1):
    for _o in range(-3, 4):
        _AXIS_VALID[_par, _o + 3] = -2 - _par <= _o <= 3 - _par


def box_grid(n):
    """Grid coordinates of all n^3 boxes in flat order, (n^3, 3) int64."""
    ax = np.arange(n)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    return g.reshape(-1, 3).astype(np.int64)


def flat_index(grid, n):
    return (grid[..., 0] * n + grid[..., 1]) * n + grid[..., 2]


@dataclass
class LevelGrid:
    """One tree level: geometry plus its offset-grouped interaction lists."""

    n: int  # boxes per axis
    size: float  # box edge length
    grid: np.ndarray  # (n^3, 3) int64
    # (M2L_OFFSETS row, targets, sources) triples; empty below level 1
    m2l: list = field(default_factory=list)
    child_index: np.ndarray = None  # (n^3, 8) flat indices one level down

    @property
    def num_boxes(self):
        return self.n ** 3

    def centers(self):
        return (self.grid + 0.5) * self.size


@dataclass
class Octree:
    box_length: float
    depth: int
    perm: np.ndarray  # canonical order: positions[perm] is sorted
    inv_perm: np.ndarray
    positions: np.ndarray  # (N, 3) in canonical order
    leaf_of_particle: np.ndarray  # (N,) in canonical order
    leaf_start: np.ndarray  # (n_leaf + 1,) CSR offsets
    nb_box: np.ndarray  # (n_leaf, 27) neighbor flat indices
    nb_shift: np.ndarray  # (n_leaf, 27, 3) image shifts in box lengths
    levels: list = field(default_factory=list)  # LevelGrid, index 0..depth

    @property
    def num_particles(self):
        return self.positions.shape[0]

    @property
    def num_leaves(self):
        return self.levels[self.depth].num_boxes

    def leaf_centers(self):
        return self.levels[self.depth].centers()


def _build_m2l_lists(level):
    n = level.n
    parity = level.grid & 1  # (nbox, 3)
    lists = []
    for row, off in enumerate(M2L_OFFSETS):
        ok = (
            _AXIS_VALID[parity[:, 0], off[0] + 3]
            & _AXIS_VALID[parity[:, 1], off[1] + 3]
            & _AXIS_VALID[parity[:, 2], off[2] + 3]
        )
        targets = np.nonzero(ok)[0]
        if targets.size == 0:
            continue
        sources = flat_index(np.mod(level.grid[targets] + off, n), n)
        lists.append((row, targets, sources))
    return lists


def build_octree(positions, box_length, depth):
    """Sort particles into the uniform tree and precompute all lists.

    positions must already be wrapped into [0, box_length)^3.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    npart = positions.shape[0]
    n = 2 ** depth
    size = box_length / n
    cell = np.clip((positions / size).astype(np.int64), 0, n - 1)
    leaf = flat_index(cell, n)
    perm = np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0], leaf))
    inv_perm = np.empty(npart, dtype=np.int64)
    inv_perm[perm] = np.arange(npart)
    pos_sorted = positions[perm]
    leaf_sorted = leaf[perm]

    nleaf = n ** 3
    counts = np.bincount(leaf_sorted, minlength=nleaf)
    leaf_start = np.zeros(nleaf + 1, dtype=np.int64)
    np.cumsum(counts, out=leaf_start[1:])

    grid_leaf = box_grid(n)
    raw = grid_leaf[:, None, :] + NEIGHBOR_OFFSETS[None, :, :]  # (nleaf, 27, 3)
    nb_shift = np.floor_divide(raw, n)
    nb_box = flat_index(raw - nb_shift * n, n)

    levels = []
    for l in range(depth + 1):
        nl = 2 ** l
        level = LevelGrid(n=nl, size=box_length / nl, grid=box_grid(nl))
        if l >= 1:
            level.m2l = _build_m2l_lists(level)
        levels.append(level)
    for l in range(depth):
        child = (2 * levels[l].grid)[:, None, :] + OCTANTS[None, :, :]
        levels[l].child_index = flat_index(child, levels[l + 1].n)

    return Octree(
        box_length=float(box_length),
        depth=depth,
        perm=perm,
        inv_perm=inv_perm,
        positions=pos_sorted,
        leaf_of_particle=leaf_sorted,
        leaf_start=leaf_start,
        nb_box=nb_box,
        nb_shift=nb_shift,
        levels=levels,
    )
