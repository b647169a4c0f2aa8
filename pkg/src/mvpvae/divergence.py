"""Permutation divergence over a tuple of diagonal Gaussians."""

import math
from dataclasses import dataclass, field

from .errors import ContractViolation
from .gaussian import kl_divergence
from .permutation import CyclicPermutation, _check_bijection


@dataclass
class DivergenceReport:
    total: float
    per_term: list = field(default_factory=list)  # (i, sigma(i), kl), 1-based


def _as_map(sigma, n):
    m = list(sigma.map) if isinstance(sigma, CyclicPermutation) else [int(x) for x in sigma]
    if len(m) != n:
        raise ContractViolation(f"permutation has length {len(m)}, expected {n}")
    _check_bijection(m)
    return m


def permutation_divergence(ps, sigma):
    """Sum of KL[P_i || P_sigma(i)] over i = 1..N.

    ``sigma`` is normally a ``CyclicPermutation``; a plain 1-based map is
    also accepted so that non-cyclic ablations can reuse this function.
    """
    ps = list(ps)
    if not ps:
        raise ContractViolation("need at least one distribution")
    dim = ps[0].dim
    if any(p.dim != dim for p in ps):
        raise ContractViolation("all distributions must share a dimension")
    m = _as_map(sigma, len(ps))
    terms = [(i, m[i - 1], kl_divergence(ps[i - 1], ps[m[i - 1] - 1])) for i in range(1, len(ps) + 1)]
    return DivergenceReport(math.fsum(t[2] for t in terms), terms)


def symmetric_permutation_divergence(ps, sigma):
    """``d(ps; sigma) + d(ps; sigma^-1)``, i.e. a sum of symmetric KL terms."""
    ps = list(ps)
    m = _as_map(sigma, len(ps))
    inv = [0] * len(m)
    for i, t in enumerate(m, start=1):
        inv[t - 1] = i
    fwd = permutation_divergence(ps, m)
    bwd = permutation_divergence(ps, inv)
    terms = fwd.per_term + bwd.per_term
    return DivergenceReport(math.fsum(t[2] for t in terms), terms)
