"""Multi-state titration weight algebra.

A site with #S = 2^L forms is driven by L lambda coordinates. Each form
rho in {0, ..., 2^L - 1} carries the weight

    w[rho] = prod_k ( lambda_k      if bit k of rho is set,
                      1 - lambda_k  otherwise )

with lambda_0 on the least significant bit, so for L = 2 the weights are
((1-l1)(1-l0), (1-l1) l0, l1 (1-l0), l1 l0). The weights sum to one for any
lambda, and at a 0/1 vertex they reduce to an indicator vector.

The printed correction-mapping table that ships with the method enumerates
forms with the reversed bit order (lambda_0 on the most significant bit).
branch_index_map exposes both views: bit_order="table" reproduces the
printed bullet rows, bit_order="lsb" matches the weight algebra above. The
set semantics are identical, only the form numbering differs.

Lambda values are deliberately not clamped to [0, 1]; the dynamics module
confines them with walls, and clamping would break gradient consistency.
"""

from dataclasses import dataclass

import numpy as np

MAX_BRANCHES = 4  # forms per site capped at 16


def _check_lambdas(lams):
    lams = np.asarray(lams, dtype=np.float64)
    if lams.ndim != 1 or not 1 <= lams.shape[0] <= MAX_BRANCHES:
        raise ValueError(
            f"need between 1 and {MAX_BRANCHES} lambda values, got shape {lams.shape}"
        )
    return lams


@dataclass(frozen=True)
class TildeWeights:
    """Per-form weights of one site, with the lambdas they came from."""

    lambdas: tuple
    values: np.ndarray

    @property
    def num_forms(self):
        return self.values.shape[0]

    def fingerprint(self):
        return tuple(float(v) for v in self.lambdas)


def expand_weights(lams):
    """Map L lambda values to the 2^L per-form weights."""
    lams = _check_lambdas(lams)
    w = np.ones(1, dtype=np.float64)
    for lam in lams:
        w = np.concatenate([w * (1.0 - lam), w * lam])
    return TildeWeights(lambdas=tuple(float(x) for x in lams), values=w)


def weight_gradient(lams, k):
    """d w[rho] / d lambda_k for all forms rho.

    Equal in magnitude to the exclusion product over all other branch
    factors, with sign + where branch k's bit is set and - where it is not;
    the entries sum to zero.
    """
    lams = _check_lambdas(lams)
    if not 0 <= k < lams.shape[0]:
        raise ValueError(f"branch index {k} out of range for {lams.shape[0]} lambdas")
    g = np.ones(1, dtype=np.float64)
    for i, lam in enumerate(lams):
        if i == k:
            g = np.concatenate([-g, g])
        else:
            g = np.concatenate([g * (1.0 - lam), g * lam])
    return g


def weight_gradient_matrix(lams):
    """All branch gradients stacked, shape (L, 2^L)."""
    lams = _check_lambdas(lams)
    return np.stack([weight_gradient(lams, k) for k in range(lams.shape[0])])


@dataclass(frozen=True)
class IndexMap:
    """Back-mapping bookkeeping for one site.

    pairs[k] = (2k, 2k+1) are the correction-slot indices of branch k's
    (1-lambda_k, lambda_k) factors; form_tuples[rho] picks one slot per
    branch, so slot 2k+1 appears in form_tuples[rho] exactly when branch k
    multiplies rho's weight by lambda_k (in the map's bit order).
    """

    num_lambdas: int
    bit_order: str
    pairs: tuple
    form_tuples: tuple

    def _bitpos(self, k):
        return k if self.bit_order == "lsb" else self.num_lambdas - 1 - k

    def selected(self, k):
        """Forms whose weight carries the factor lambda_k."""
        b = self._bitpos(k)
        return tuple(r for r in range(2 ** self.num_lambdas) if (r >> b) & 1)

    def deselected(self, k):
        """Forms whose weight carries the factor (1 - lambda_k)."""
        b = self._bitpos(k)
        return tuple(r for r in range(2 ** self.num_lambdas) if not (r >> b) & 1)


def branch_index_map(num_lambdas, bit_order="table"):
    """Branch/form index machinery for a site with 2^num_lambdas forms.

    bit_order "table" numbers forms as in the printed correction-mapping
    table (lambda_0 on the most significant bit); "lsb" numbers them as
    expand_weights does (lambda_0 on the least significant bit).
    """
    if not 1 <= num_lambdas <= MAX_BRANCHES:
        raise ValueError(f"num_lambdas must be in 1..{MAX_BRANCHES}")
    if bit_order not in ("table", "msb", "lsb"):
        raise ValueError(f"unknown bit_order {bit_order!r}")
    order = "lsb" if bit_order == "lsb" else "table"
    pairs = tuple((2 * k, 2 * k + 1) for k in range(num_lambdas))
    bitpos = (
        (lambda k: k)
        if order == "lsb"
        else (lambda k: num_lambdas - 1 - k)
    )
    form_tuples = tuple(
        tuple(2 * k + ((r >> bitpos(k)) & 1) for k in range(num_lambdas))
        for r in range(2 ** num_lambdas)
    )
    return IndexMap(
        num_lambdas=num_lambdas, bit_order=order, pairs=pairs, form_tuples=form_tuples
    )
