"""Particle, site, and lambda-state data model plus the on-disk format.

Lengths are nm, charges are elementary charges. The system file is JSON:

    {
      "box_length_nm": 10.0,
      "particles": [{"pos": [x, y, z], "q": 0.25}, ...],
      "sites": [{"indices": [3, 4], "forms": [[0.5, -0.5], [0.0, 0.0]]}, ...],
      "lambda": [{"values": [0.345], "velocities": [0.0], "mass": 5.0}, ...]
    }

Particle order in the file is canonical and preserved everywhere. Numbers
round-trip exactly (shortest-decimal serialization). Positions are wrapped
into [0, box_length) on load. The per-particle "q" of a site member is a
placeholder (by convention the form-0 charge); scale_charges replaces site
entries and never touches environment entries.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .weights import MAX_BRANCHES

MAX_FORMS = 2 ** MAX_BRANCHES


@dataclass
class TitratableSite:
    """Indices of a site's particles and its per-form charge table."""

    particle_indices: np.ndarray  # (Ns,) int64, into the system's particle arrays
    form_charges: np.ndarray  # (#S, Ns) float64, row rho = that form's charges

    def __post_init__(self):
        self.particle_indices = np.asarray(self.particle_indices, dtype=np.int64)
        self.form_charges = np.atleast_2d(np.asarray(self.form_charges, dtype=np.float64))

    @property
    def num_particles(self):
        return self.particle_indices.shape[0]

    @property
    def num_forms(self):
        return self.form_charges.shape[0]

    @property
    def num_lambda(self):
        return max(1, (self.num_forms - 1).bit_length())


@dataclass
class ParticleSystem:
    """All particles of one cubic periodic box, plus its titratable sites."""

    box_length: float
    positions: np.ndarray  # (N, 3) float64, wrapped into the box
    charges: np.ndarray  # (N,) float64; environment charges, placeholders on sites
    sites: list = field(default_factory=list)

    def __post_init__(self):
        self.box_length = float(self.box_length)
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.charges = np.asarray(self.charges, dtype=np.float64)

    @property
    def num_particles(self):
        return self.positions.shape[0]

    def site_particle_mask(self):
        mask = np.zeros(self.num_particles, dtype=bool)
        for site in self.sites:
            mask[site.particle_indices] = True
        return mask


@dataclass
class LambdaState:
    """Titration coordinates: per site a lambda vector, velocities, one mass."""

    values: list  # per site: (L,) float64
    velocities: list  # per site: (L,) float64
    masses: list  # per site: float (u nm^2)

    def __post_init__(self):
        self.values = [np.asarray(v, dtype=np.float64).copy() for v in self.values]
        self.velocities = [np.asarray(v, dtype=np.float64).copy() for v in self.velocities]
        self.masses = [float(m) for m in self.masses]

    def copy(self):
        return LambdaState(
            values=[v.copy() for v in self.values],
            velocities=[v.copy() for v in self.velocities],
            masses=list(self.masses),
        )

    def fingerprint(self):
        return tuple(tuple(float(x) for x in v) for v in self.values)


def wrap_positions(positions, box_length):
    """Wrap coordinates into [0, box_length); exact box multiples map to 0."""
    wrapped = np.mod(np.asarray(positions, dtype=np.float64), box_length)
    # mod of a tiny negative can round up to exactly box_length
    wrapped[wrapped >= box_length] = 0.0
    return wrapped


def validate_system(system, lam_state=None):
    """Collect invariant violations; empty list means valid.

    Violations are data, not errors: callers that want fail-fast behavior
    raise on a non-empty result (load_system does).
    """
    v = []
    if not system.box_length > 0:
        v.append(f"box_length must be positive, got {system.box_length}")
        return v
    n = system.num_particles
    if system.positions.shape != (n, 3):
        v.append(f"positions must have shape (N, 3), got {system.positions.shape}")
    if system.charges.shape != (n,):
        v.append(f"charges must have shape (N,), got {system.charges.shape}")
    if not np.all(np.isfinite(system.positions)):
        v.append("positions contain non-finite values")
    elif np.any(system.positions < 0) or np.any(system.positions >= system.box_length):
        v.append("positions not wrapped into [0, box_length)")
    if not np.all(np.isfinite(system.charges)):
        v.append("charges contain non-finite values")

    seen = set()
    for s, site in enumerate(system.sites):
        label = f"site {s}"
        idx = site.particle_indices
        if idx.shape[0] == 0:
            v.append(f"{label}: empty particle list")
            continue
        if np.any(idx < 0) or np.any(idx >= n):
            v.append(f"{label}: particle index out of range")
        if len(set(idx.tolist())) != idx.shape[0]:
            v.append(f"{label}: duplicate particle indices")
        overlap = seen.intersection(idx.tolist())
        if overlap:
            v.append(f"{label}: site overlap on particle indices {sorted(overlap)}")
        seen.update(idx.tolist())
        nf = site.num_forms
        if nf < 2 or nf & (nf - 1) != 0:
            v.append(f"{label}: form count {nf} not a power of two >= 2")
        if nf > MAX_FORMS:
            v.append(f"{label}: form count {nf} exceeds the cap of {MAX_FORMS}")
        if site.form_charges.shape != (nf, idx.shape[0]):
            v.append(
                f"{label}: form_charges shape {site.form_charges.shape} does not "
                f"match {nf} forms x {idx.shape[0]} particles"
            )
        if not np.all(np.isfinite(site.form_charges)):
            v.append(f"{label}: form charges contain non-finite values")

    if lam_state is not None:
        if len(lam_state.values) != len(system.sites):
            v.append(
                f"lambda state covers {len(lam_state.values)} sites, "
                f"system has {len(system.sites)}"
            )
        else:
            for s, site in enumerate(system.sites):
                want = site.num_lambda
                if lam_state.values[s].shape != (want,):
                    v.append(f"site {s}: lambda vector length != {want}")
                if lam_state.velocities[s].shape != (want,):
                    v.append(f"site {s}: velocity vector length != {want}")
                if not lam_state.masses[s] > 0:
                    v.append(f"site {s}: non-positive lambda mass")
    return v


def scale_charges(system, tilde_weights):
    """Blend per-form site charges with the given weights; environment
    entries pass through untouched.

    tilde_weights: one TildeWeights (or plain weight vector) per site.
    """
    q = system.charges.copy()
    if len(tilde_weights) != len(system.sites):
        raise ValueError(
            f"{len(tilde_weights)} weight vectors for {len(system.sites)} sites"
        )
    for site, tw in zip(system.sites, tilde_weights):
        w = np.asarray(getattr(tw, "values", tw), dtype=np.float64)
        if w.shape != (site.num_forms,):
            raise ValueError(
                f"weight vector length {w.shape} != form count {site.num_forms}"
            )
        q[site.particle_indices] = w @ site.form_charges
    return q


def end_state_charges(system, assignment):
    """Full charge vector with every site pinned to one form.

    assignment: sequence with one form index per site.
    """
    q = system.charges.copy()
    if len(assignment) != len(system.sites):
        raise ValueError("assignment length != site count")
    for site, rho in zip(system.sites, assignment):
        if not 0 <= rho < site.num_forms:
            raise ValueError(f"form index {rho} out of range")
        q[site.particle_indices] = site.form_charges[rho]
    return q


def load_system(path):
    """Read a system file; returns (ParticleSystem, LambdaState).

    Raises ValueError with field context on schema problems and with the
    first failing constraint on invariant violations.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc

    def need(obj, key, where):
        if key not in obj:
            raise ValueError(f"{path}: missing field '{key}' in {where}")
        return obj[key]

    box = need(data, "box_length_nm", "top level")
    particles = need(data, "particles", "top level")
    positions = np.array([need(prt, "pos", f"particles[{i}]") for i, prt in enumerate(particles)], dtype=np.float64)
    charges = np.array([need(prt, "q", f"particles[{i}]") for i, prt in enumerate(particles)], dtype=np.float64)
    if positions.size == 0:
        positions = positions.reshape(0, 3)

    sites = []
    for s, entry in enumerate(data.get("sites", [])):
        sites.append(
            TitratableSite(
                particle_indices=np.asarray(need(entry, "indices", f"sites[{s}]"), dtype=np.int64),
                form_charges=np.asarray(need(entry, "forms", f"sites[{s}]"), dtype=np.float64),
            )
        )

    system = ParticleSystem(
        box_length=float(box),
        positions=wrap_positions(positions, float(box)),
        charges=charges,
        sites=sites,
    )

    lam_entries = data.get("lambda", [])
    if lam_entries and len(lam_entries) != len(sites):
        raise ValueError(f"{path}: {len(lam_entries)} lambda entries for {len(sites)} sites")
    if lam_entries:
        lam_state = LambdaState(
            values=[need(e, "values", f"lambda[{i}]") for i, e in enumerate(lam_entries)],
            velocities=[e.get("velocities", [0.0] * len(e["values"])) for e in lam_entries],
            masses=[need(e, "mass", f"lambda[{i}]") for i, e in enumerate(lam_entries)],
        )
    else:
        lam_state = LambdaState(
            values=[np.full(site.num_lambda, 0.5) for site in sites],
            velocities=[np.zeros(site.num_lambda) for site in sites],
            masses=[5.0 for _ in sites],
        )

    violations = validate_system(system, lam_state)
    if violations:
        raise ValueError(f"{path}: invalid system: {violations[0]}")
    return system, lam_state


def _floatify(x):
    # json serializes Python floats shortest-round-trip; numpy scalars are not json-clean
    if isinstance(x, (list, tuple)):
        return [_floatify(e) for e in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    return x


def save_system(system, lam_state, path):
    """Write the system file; load_system(save_system(...)) round-trips bit-exactly."""
    data = {
        "box_length_nm": float(system.box_length),
        "particles": [
            {"pos": _floatify(list(p)), "q": float(q)}
            for p, q in zip(system.positions, system.charges)
        ],
        "sites": [
            {
                "indices": _floatify(list(site.particle_indices)),
                "forms": _floatify([list(row) for row in site.form_charges]),
            }
            for site in system.sites
        ],
        "lambda": [
            {
                "values": _floatify(list(lam_state.values[s])),
                "velocities": _floatify(list(lam_state.velocities[s])),
                "mass": float(lam_state.masses[s]),
            }
            for s in range(len(system.sites))
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def total_scaled_charge(system, tilde_weights):
    """Total charge of the scaled system (continuous in lambda)."""
    return math.fsum(scale_charges(system, tilde_weights))
