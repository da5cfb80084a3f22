"""Deterministic random test systems.

Background charges sit on a jittered grid (no catastrophic near-contacts,
still disordered); titratable sites are rejection-sampled on top with a
minimum separation from everything already placed. "typical" sites pack
their atoms into a 0.5 nm-diameter ball, as a buried residue would;
"worst" sites scatter their atoms over the whole box, maximising the
spatial extent the correction bilinears have to cover.

2-form sites model a protonation: form 1 adds a net +1 proton charge
spread over a few atoms. 4-form sites stack two such independent deltas,
one per lambda in least-significant-bit order. Everything is driven by
one seeded Generator, so equal seeds give byte-equal systems.
"""

import numpy as np

from .system import LambdaState, ParticleSystem, TitratableSite, validate_system
from .units import BOLTZMANN_KJ_PER_MOL_K, COULOMB_KJ_PER_MOL

DEFAULT_BOX = 10.0
SITE_BALL_DIAMETER = 0.5
MIN_SEPARATION = 0.1


def _background_positions(rng, num, box_length):
    n = max(1, int(np.ceil(num ** (1.0 / 3.0))))
    pitch = box_length / n
    g = (np.arange(n) + 0.5) * pitch
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    keep = rng.permutation(grid.shape[0])[:num]
    pos = grid[keep] + rng.uniform(-0.3 * pitch, 0.3 * pitch, (num, 3))
    return np.mod(pos, box_length)


def _clear_of(pool, cand, box_length):
    if len(pool) == 0:
        return True
    d = np.asarray(pool) - cand
    d -= box_length * np.round(d / box_length)
    return float(np.min((d * d).sum(-1))) >= MIN_SEPARATION**2


def _sample_site_positions(rng, num_atoms, box_length, placement, occupied):
    """Rejection-sample atom positions >= MIN_SEPARATION from everything."""
    out = []
    center = rng.uniform(0.0, box_length, 3)
    for _ in range(num_atoms):
        for _attempt in range(2000):
            if placement == "typical":
                u = rng.normal(size=3)
                u /= np.linalg.norm(u)
                cand = center + u * (0.5 * SITE_BALL_DIAMETER) * rng.uniform() ** (1.0 / 3.0)
            else:
                cand = rng.uniform(0.0, box_length, 3)
            cand = np.mod(cand, box_length)
            if _clear_of(occupied, cand, box_length) and _clear_of(out, cand, box_length):
                out.append(cand)
                break
        else:
            raise RuntimeError("could not place a site atom; box too crowded")
    return np.array(out)


def _site_form_charges(rng, num_atoms, num_forms):
    """Base pattern plus one net +1 delta per lambda, least bit first."""
    base = rng.uniform(-0.3, 0.3, num_atoms)
    num_lambda = max(1, (num_forms - 1).bit_length())
    deltas = []
    for _ in range(num_lambda):
        carriers = rng.choice(num_atoms, size=min(4, num_atoms), replace=False)
        d = np.zeros(num_atoms)
        w = rng.uniform(0.5, 1.0, carriers.size)
        d[carriers] = w / w.sum()
        deltas.append(d)
    forms = np.empty((num_forms, num_atoms))
    for rho in range(num_forms):
        q = base.copy()
        for i in range(num_lambda):
            if (rho >> i) & 1:
                q = q + deltas[i]
        forms[rho] = q
    return forms


def generate_random_system(
    num_background=1000,
    site_forms=(2,),
    site_atoms=10,
    box_length=DEFAULT_BOX,
    placement="typical",
    neutralize=True,
    lambda_values=None,
    lambda_mass=5.0,
    seed=0,
):
    """Build a (ParticleSystem, LambdaState) pair from one seed.

    site_forms: forms per site, e.g. (2,) or (2, 4, 4). placement:
    "typical" or "worst". neutralize shifts the background so the total
    charge with every site in form 0 is zero. lambda_values defaults to
    0.5 everywhere.
    """
    if placement not in ("typical", "worst"):
        raise ValueError(f"unknown placement {placement!r}")
    rng = np.random.default_rng(seed)
    bg_pos = _background_positions(rng, num_background, box_length)
    bg_q = rng.uniform(-0.5, 0.5, num_background)
    positions = [bg_pos]
    occupied = bg_pos
    sites = []
    ptr = num_background
    for nf in site_forms:
        sp = _sample_site_positions(rng, site_atoms, box_length, placement, occupied)
        occupied = np.vstack([occupied, sp])
        positions.append(sp)
        forms = _site_form_charges(rng, site_atoms, int(nf))
        sites.append(TitratableSite(np.arange(ptr, ptr + site_atoms), forms))
        ptr += site_atoms
    if neutralize and num_background > 0:
        form0_net = sum(float(s.form_charges[0].sum()) for s in sites)
        bg_q -= (bg_q.sum() + form0_net) / num_background
    all_pos = np.vstack(positions)
    charges = np.concatenate([bg_q, np.zeros(ptr - num_background)])
    system = ParticleSystem(box_length, all_pos, charges, sites)
    if lambda_values is None:
        lambda_values = [np.full(s.num_lambda, 0.5) for s in sites]
    lam = LambdaState(
        values=[np.asarray(v, dtype=np.float64) for v in lambda_values],
        velocities=[np.zeros(len(v)) for v in lambda_values],
        masses=[float(lambda_mass)] * len(sites),
    )
    problems = validate_system(system, lam)
    if problems:
        raise RuntimeError("generated an invalid system: " + "; ".join(problems))
    return system, lam


def mirror_pair_system(
    box_length=DEFAULT_BOX,
    separation=0.5,
    temperature=300.0,
    barrier_kt=1.0,
    lambda_mass=5.0,
    start_lambda=0.0,
):
    """Two particles, one 2-form site with mirrored charges (+d,-d)/(-d,+d).

    The mirror symmetry makes both end states exactly degenerate (zero
    tilt), so every transition statistic isolates the barrier. The
    charge-route curvature is k = -8 d^2 / r; d is calibrated so that
    the induced charge-route barrier |k|/8 equals barrier_kt times kT at
    the given temperature. Returns (ParticleSystem, LambdaState).
    """
    kt_internal = BOLTZMANN_KJ_PER_MOL_K * temperature / COULOMB_KJ_PER_MOL
    delta = float(np.sqrt(barrier_kt * kt_internal * separation))
    half = 0.5 * box_length
    pos = np.array([[half - 0.5 * separation, half, half], [half + 0.5 * separation, half, half]])
    forms = np.array([[delta, -delta], [-delta, delta]])
    system = ParticleSystem(box_length, pos, np.zeros(2), [TitratableSite(np.array([0, 1]), forms)])
    lam = LambdaState(values=[np.array([float(start_lambda)])], velocities=[np.zeros(1)], masses=[float(lambda_mass)])
    return system, lam
