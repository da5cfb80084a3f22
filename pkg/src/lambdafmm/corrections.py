"""Per-site correction scalars and interpolated-Hamiltonian assembly.

A single solve over blended charges prices every titration form at once:
the potentials V already contain each site's own blended contribution, so
the per-form pairing S_rho = sum_{i in site} q_i^rho V_i overcounts by a
known self term. Removing C_rho = b(q^rho, qtilde - q^rho/2), with b the
site-restricted bilinear through the 27 near images, the lattice
operator, and the surface term, leaves exact energy derivatives:

    dH/dlambda_k = sum_rho (dlamtilde_rho/dlambda_k) (S_rho - C_rho)

and the assembled energy

    H = H_solve + sum_sites [ e(qtilde) - sum_rho lamtilde_rho C_rho ]

where e(a) = b_near_lattice(a, a)/2 is the site's intra-site energy
without the surface part (the surface piece folds into the squared-dipole
form of the C term). The gradient formula is the exact lambda derivative
of the assembled energy for any symmetric bilinear b, and at a vertex
weight vector the bracket vanishes identically, so end-state Hamiltonians
are recovered exactly.

Mechanically, each site builds one small Gram matrix per bilinear piece
(near kernel, lattice-projected kernel); every per-form scalar is then a
quadratic form in small vectors, so the correction phase costs a constant
amount per form on top of a per-site setup.

All lambda forces returned by this module are F = -dH/dlambda.
"""

import math
from dataclasses import dataclass

import numpy as np

from .fmm import harmonics, lattice
from .fmm.solver import PeriodicSolver
from .system import scale_charges
from .weights import expand_weights, weight_gradient_matrix


def minimum_image(disp, box_length):
    return disp - box_length * np.round(disp / box_length)


def near_kernel(positions, box_length, images="full"):
    """Pair kernel matrix of one site; bilinears are a @ K @ b.

    images "full": K_ij = sum over the 27 near cells of 1/|r_ij + n L|,
    self pairs excluded only in the home cell (the diagonal holds the
    constant self-image sum). images "minimum": single minimum-image
    distance per pair, zero diagonal.
    """
    pos = np.asarray(positions, dtype=np.float64)
    ns = pos.shape[0]
    disp = pos[:, None, :] - pos[None, :, :]
    if images == "minimum":
        r = np.sqrt((minimum_image(disp, box_length) ** 2).sum(-1))
        np.fill_diagonal(r, np.inf)
        return 1.0 / r
    if images != "full":
        raise ValueError(f"unknown images mode {images!r}")
    k = np.zeros((ns, ns))
    for n in lattice.shell_vectors(0, 1):
        d = disp + n * float(box_length)
        r = np.sqrt((d * d).sum(-1))
        if not n.any():
            np.fill_diagonal(r, np.inf)
        k += 1.0 / r
    return k


def lattice_kernel(positions, box_length, lattice_matrix, p):
    """Pair kernel of the far-image operator restricted to one site:
    a @ G @ b == <omega(a), T omega(b)> with multipoles about the box center."""
    rv = harmonics.regular(np.asarray(positions, dtype=np.float64) - 0.5 * box_length, p)
    return np.real(rv @ lattice_matrix @ rv.T)


@dataclass(frozen=True)
class CorrectionCharges:
    """Charge tables entering the correction bilinears of one site."""

    blend: np.ndarray  # (ns,) qtilde
    half_offset: np.ndarray  # (nf, ns) qtilde - q_rho/2, pairs with q_rho in C
    deviation: np.ndarray  # (nf, ns) qtilde - q_rho, the vertex-distance charges


def correction_charges(form_charges, weights):
    qf = np.atleast_2d(np.asarray(form_charges, dtype=np.float64))
    w = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    qt = w @ qf
    return CorrectionCharges(blend=qt, half_offset=qt[None, :] - 0.5 * qf, deviation=qt[None, :] - qf)


def c_p2p(site_positions, form_charges, weights, box_length, images="full"):
    """Near-image self-interaction scalars, one per form."""
    k = near_kernel(site_positions, box_length, images)
    cc = correction_charges(form_charges, weights)
    qf = np.atleast_2d(np.asarray(form_charges, dtype=np.float64))
    return np.einsum("fs,st,ft->f", qf, k, cc.half_offset)


def c_lattice(site_positions, form_charges, weights, box_length, lattice_matrix, p):
    """Far-image (lattice operator) self-interaction scalars, one per form."""
    g = lattice_kernel(site_positions, box_length, lattice_matrix, p)
    cc = correction_charges(form_charges, weights)
    qf = np.atleast_2d(np.asarray(form_charges, dtype=np.float64))
    return np.einsum("fs,st,ft->f", qf, g, cc.half_offset)


def c_dipole(site_positions, form_charges, weights, box_length):
    """Surface-term self-interaction scalars, one per form.

    Packaged as -eta*gamma*|D_rho - D_blend|^2, which differs from the raw
    bilinear only by a form-independent shift; with the surface part kept
    out of the site blend energy the assembled energy and all gradients
    come out exact.
    """
    pos = np.asarray(site_positions, dtype=np.float64) - 0.5 * box_length
    qf = np.atleast_2d(np.asarray(form_charges, dtype=np.float64))
    cc = correction_charges(form_charges, weights)
    ddev = cc.deviation @ pos  # (nf, 3) = D_blend - D_rho
    return -lattice.DIPOLE_ETA * lattice.dipole_gamma(box_length) * np.sum(ddev * ddev, axis=1)


@dataclass
class SiteCorrections:
    """Correction scalars of one site at one weight setting."""

    weights: object  # TildeWeights
    charges: CorrectionCharges
    c_p2p: np.ndarray  # (nf,)
    c_lattice: np.ndarray
    c_dipole: np.ndarray
    blend_energy: float  # e(qtilde): near + lattice halves, no surface part

    def c_total(self):
        return self.c_p2p + self.c_lattice + self.c_dipole

    def energy_offset(self):
        """This site's additive energy correction e(qtilde) - sum w C."""
        return self.blend_energy - float(self.weights.values @ self.c_total())


@dataclass
class CorrectionSet:
    """Per-site corrections plus the lambda fingerprint they belong to."""

    sites: list
    fingerprint: tuple

    def energy_offset(self):
        return math.fsum(s.energy_offset() for s in self.sites)


def build_corrections(system, lam_values, solver):
    """Correction scalars for every site at the given lambda values.

    lam_values: one lambda vector per site. The solver supplies the
    geometry convention: its lattice matrix, surface-term toggle, and
    intra_site_images mode decide which bilinear pieces exist.
    """
    cfg = solver.config
    images = cfg.intra_site_images
    out = []
    for site, lams in zip(system.sites, lam_values):
        w = expand_weights(lams)
        if w.num_forms != site.num_forms:
            raise ValueError(
                f"{len(lams)} lambdas give {w.num_forms} weights, site has {site.num_forms} forms"
            )
        pos = system.positions[site.particle_indices]
        qf = site.form_charges
        cc = correction_charges(qf, w)
        mode = "minimum" if images == "minimum" else "full"
        kern = near_kernel(pos, system.box_length, mode)
        cp = np.einsum("fs,st,ft->f", qf, kern, cc.half_offset)
        eb = 0.5 * float(cc.blend @ kern @ cc.blend)
        if images == "full" and solver.lattice_matrix is not None:
            g = lattice_kernel(pos, system.box_length, solver.lattice_matrix, cfg.p)
            cl = np.einsum("fs,st,ft->f", qf, g, cc.half_offset)
            eb += 0.5 * float(cc.blend @ g @ cc.blend)
        else:
            cl = np.zeros(site.num_forms)
        if images == "full" and cfg.dipole:
            cd = c_dipole(pos, qf, w, system.box_length)
        else:
            cd = np.zeros(site.num_forms)
        out.append(
            SiteCorrections(weights=w, charges=cc, c_p2p=cp, c_lattice=cl, c_dipole=cd, blend_energy=eb)
        )
    return CorrectionSet(sites=out, fingerprint=tuple(tuple(float(x) for x in v) for v in lam_values))


def s_values(site, potentials):
    """Per-form pairings S_rho = sum_{i in site} q_i^rho V_i."""
    return site.form_charges @ np.asarray(potentials, dtype=np.float64)[site.particle_indices]


def k_terms(lams, values):
    """Split contraction of per-form values against the weight gradients.

    Returns (2L,): K[2i] collects forms where lambda_i is deselected and
    K[2i+1] those where it is selected, each weighted by the magnitude of
    the corresponding weight derivative, so that K[2i+1] - K[2i] equals
    sum_rho (dlamtilde_rho/dlambda_i) values_rho.
    """
    g = weight_gradient_matrix(lams)
    nl, nf = g.shape
    v = np.asarray(values, dtype=np.float64)
    out = np.empty(2 * nl)
    rho = np.arange(nf)
    for i in range(nl):
        sel = (rho >> i) & 1 == 1
        out[2 * i] = math.fsum((-g[i, ~sel] * v[~sel]).tolist())
        out[2 * i + 1] = math.fsum((g[i, sel] * v[sel]).tolist())
    return out


def assemble_lambda_forces(system, lam_values, corrections, potentials):
    """Lambda forces F = -dH/dlambda per site from one solve's potentials.

    corrections must have been built at exactly the same lambda values
    (fingerprint-checked); pass None for the plain charge-route forces of
    the blended Hamiltonian (no self-term removal).
    """
    fp = tuple(tuple(float(x) for x in v) for v in lam_values)
    if corrections is not None and corrections.fingerprint != fp:
        raise ValueError("corrections were built for different lambda values")
    forces = []
    for s, (site, lams) in enumerate(zip(system.sites, lam_values)):
        smc = s_values(site, potentials)
        if corrections is not None:
            smc = smc - corrections.sites[s].c_total()
        kt = k_terms(lams, smc)
        forces.append(-(kt[1::2] - kt[0::2]))
    return forces


@dataclass
class InterpolationResult:
    """Energy and lambda forces of one interpolated-Hamiltonian evaluation."""

    energy: float
    forces: list  # per site, (L,) arrays, F = -dH/dlambda
    mode: str
    solve: object  # SolveResult of the charge-scaled solve
    corrections: object  # CorrectionSet or None (qi mode)


def hi_energy_and_forces(system, lam_state, config=None, solver=None, mode="hi"):
    """One charge-scaled solve plus correction assembly.

    mode "hi": interpolated Hamiltonian (exact end-state blend); mode
    "qi": plain charge interpolation, whose energy is the blended-charge
    Hamiltonian itself and whose forces skip the self-term removal.
    lam_state: a LambdaState or a bare list of lambda vectors.
    """
    if mode not in ("hi", "qi"):
        raise ValueError(f"unknown mode {mode!r}")
    lam_values = getattr(lam_state, "values", lam_state)
    if solver is None:
        solver = PeriodicSolver(system.positions, system.box_length, config)
    tilde = [expand_weights(v) for v in lam_values]
    qt = scale_charges(system, tilde)
    res = solver.solve(qt)
    if mode == "qi":
        forces = assemble_lambda_forces(system, lam_values, None, res.potentials)
        return InterpolationResult(energy=float(res.energy), forces=forces, mode=mode, solve=res, corrections=None)
    corr = build_corrections(system, lam_values, solver)
    forces = assemble_lambda_forces(system, lam_values, corr, res.potentials)
    energy = float(res.energy) + corr.energy_offset()
    return InterpolationResult(energy=energy, forces=forces, mode=mode, solve=res, corrections=corr)
