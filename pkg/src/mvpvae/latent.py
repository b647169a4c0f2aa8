"""
The L x L latent matrix for a single sample.

Entry ``(v, l)`` (1-based) is the Gaussian for view ``l`` as seen from source
view ``v``: the encoder output when ``v == l`` and the correspondence
``f_{l<-v}`` applied to that output otherwise. Rows exist only for observed
source views; every observed row spans all ``L`` columns.

This is the reference, object-level path. Training runs the batched
equivalent in :mod:`mvpvae.model`.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .gaussian import LOG_VAR_MAX, LOG_VAR_MIN, DiagonalGaussian, geometric_mean_fusion


@dataclass(frozen=True)
class LatentMatrix:
    entries: dict  # (v, l) -> DiagonalGaussian
    observed: frozenset
    L: int
    d: int
    # source row of each entry in Z0 terms; identity for Z0 itself
    sources: dict = None

    def __post_init__(self):
        object.__setattr__(self, "observed", frozenset(self.observed))
        keys = {(v, l) for v in self.observed for l in range(1, self.L + 1)}
        if set(self.entries) != keys:
            raise ContractViolation("entries must cover exactly observed rows x all columns")
        if self.sources is None:
            object.__setattr__(self, "sources", {key: key[0] for key in keys})

    def __getitem__(self, key):
        return self.entries[key]

    def is_available(self, v):
        return v in self.observed


@dataclass(frozen=True)
class Consensus:
    dist: DiagonalGaussian

    @property
    def k(self):
        return self.dist.dim


def _clamp(lv):
    return np.clip(lv, LOG_VAR_MIN, LOG_VAR_MAX)


def build_latent_matrix(views, mask, encoders, correspondences):
    """Encode one sample into Z0.

    Parameters
    ----------
    views : sequence of array or None
        One feature vector per view; entries at missing views are ignored.
    mask : sequence of bool
        Availability per view.
    encoders : sequence of EncoderNet
    correspondences : mapping
        ``(l, v) -> DenseNet`` for the map from source ``v`` to target ``l``,
        1-based, ``l != v``.
    """
    L = len(mask)
    if len(views) != L or len(encoders) != L:
        raise ContractViolation("views, mask and encoders must all have length L")
    observed = frozenset(v for v in range(1, L + 1) if mask[v - 1])
    if not observed:
        raise ContractViolation("sample has no observed view")
    d = encoders[0].latent_dim
    entries = {}
    for v in sorted(observed):
        x = np.asarray(views[v - 1], dtype=np.float64).reshape(1, -1)
        enc = encoders[v - 1]
        if x.shape[1] != enc.in_dim:
            raise ContractViolation(f"view {v} has dim {x.shape[1]}, encoder expects {enc.in_dim}")
        mu, lv, _ = enc.forward(x)
        mu, lv = mu[0], _clamp(lv[0])
        if mu.size != d:
            raise ContractViolation("encoders disagree on latent dim")
        entries[(v, v)] = DiagonalGaussian(mu, lv)
        for l in range(1, L + 1):
            if l == v:
                continue
            f = correspondences[(l, v)]
            if f.in_dim != d or f.out_dim != d:
                raise ContractViolation(f"correspondence {l}<-{v} must map dim {d} to {d}")
            entries[(v, l)] = DiagonalGaussian(f(mu)[0], _clamp(f(lv)[0]))
    return LatentMatrix(entries, observed, L, d)


def apply_column_permutations(z0, bundle):
    """Z1[i][l] = Z0[sigma_l(i)][l] for every observed row ``i``.

    ``bundle`` is a ``PermutationBundle`` or a sequence of ``L`` 1-based maps
    that permute the observed rows among themselves (used by ablations).
    """
    if hasattr(bundle, "columns"):
        if bundle.observed != z0.observed or bundle.L != z0.L:
            raise ContractViolation("bundle observed set / L does not match the matrix")
        maps = [c.map for c in bundle.columns]
    else:
        maps = [tuple(int(x) for x in m) for m in bundle]
        if len(maps) != z0.L or any(len(m) != z0.L for m in maps):
            raise ContractViolation(f"need {z0.L} maps of length {z0.L}")
        for m in maps:
            if sorted(m[i - 1] for i in z0.observed) != sorted(z0.observed):
                raise ContractViolation(f"{list(m)} does not permute the observed rows")
    entries, sources = {}, {}
    for l in range(1, z0.L + 1):
        sigma = maps[l - 1]
        for i in z0.observed:
            src = sigma[i - 1]
            entries[(i, l)] = z0.entries[(src, l)]
            sources[(i, l)] = z0.sources[(src, l)]
    return LatentMatrix(entries, z0.observed, z0.L, z0.d, sources)


def single_view_cell(z, l):
    """Column ``l`` over observed rows, in ascending row order."""
    if not 1 <= l <= z.L:
        raise ContractViolation(f"column {l} outside 1..{z.L}")
    return [z.entries[(v, l)] for v in sorted(z.observed)]


def complete_view_cell(z, n):
    """Row ``n``: one Gaussian per view ``l = 1..L``."""
    if n not in z.observed:
        raise ContractViolation(f"row {n} is not observed")
    return [z.entries[(n, l)] for l in range(1, z.L + 1)]


def consensus(cell, k):
    return Consensus(geometric_mean_fusion(cell, k))


def diagonal(z):
    return {n: z.entries[(n, n)] for n in sorted(z.observed)}


def column_average(z, l):
    """Geometric mean of column ``l`` over the available sources (full ``d``)."""
    cell = single_view_cell(z, l)
    return geometric_mean_fusion(cell, z.d)


def averaged_latents(z):
    """Per-view averaged latents used at inference time, ``l = 1..L``."""
    return [column_average(z, l) for l in range(1, z.L + 1)]
