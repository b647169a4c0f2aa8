"""
Diagonal-Gaussian algebra used by every latent quantity in the model.

All values are float64. ``log_var`` is clamped to [-30, 30] when a
``DiagonalGaussian`` is built so that ``exp`` never overflows.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

LOG_VAR_MIN = -30.0
LOG_VAR_MAX = 30.0


def _vector(x, name):
    arr = np.array(x, dtype=np.float64).reshape(-1)
    if arr.size < 1:
        raise ContractViolation(f"{name} must have length >= 1")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class DiagonalGaussian:
    """N(mean, diag(exp(log_var))) with equal-length parameter vectors."""

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mean = _vector(self.mean, "mean")
        log_var = _vector(self.log_var, "log_var")
        if mean.shape != log_var.shape:
            raise ContractViolation(
                f"mean has length {mean.size} but log_var has length {log_var.size}"
            )
        log_var = np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)
        mean.setflags(write=False)
        log_var.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", log_var)

    @classmethod
    def standard(cls, dim):
        return cls(np.zeros(dim), np.zeros(dim))

    @property
    def dim(self):
        return self.mean.size

    @property
    def var(self):
        return np.exp(self.log_var)

    @property
    def precision(self):
        return np.exp(-self.log_var)

    def __eq__(self, other):
        if not isinstance(other, DiagonalGaussian):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.log_var, other.log_var)

    def __hash__(self):
        return hash((self.mean.tobytes(), self.log_var.tobytes()))

    def __repr__(self):
        return f"DiagonalGaussian(mean={self.mean.tolist()}, log_var={self.log_var.tolist()})"


def kl_divergence(p, q):
    """KL[p || q] for diagonal Gaussians, summed over dimensions."""
    if p.dim != q.dim:
        raise ContractViolation(f"dimension mismatch: {p.dim} vs {q.dim}")
    per_dim = kl_per_dim(p, q)
    return max(math.fsum(per_dim.tolist()), 0.0)


def kl_per_dim(p, q):
    """Per-dimension terms of ``kl_divergence`` (each a 1-D Gaussian KL)."""
    if p.dim != q.dim:
        raise ContractViolation(f"dimension mismatch: {p.dim} vs {q.dim}")
    diff = p.mean - q.mean
    delta = p.log_var - q.log_var
    # r - 1 - log r with r = var_p / var_q; expm1 makes it exactly 0 at r = 1
    return 0.5 * ((np.expm1(delta) - delta) + diff * diff * np.exp(-q.log_var))


def marginal_first_k(g, k):
    if not 1 <= k <= g.dim:
        raise ContractViolation(f"k={k} outside [1, {g.dim}]")
    return DiagonalGaussian(g.mean[:k], g.log_var[:k])


def geometric_mean_fusion(inputs, k):
    """Precision-weighted fusion of the first-``k`` marginals of ``inputs``.

    The fused precision is the sum of input precisions and the fused mean
    is the precision-weighted average of input means, per dimension. Sums
    use ``math.fsum`` so the result does not depend on input order.
    """
    inputs = list(inputs)
    if not inputs:
        raise ContractViolation("fusion needs at least one input")
    dim = inputs[0].dim
    if any(g.dim != dim for g in inputs):
        raise ContractViolation("all fusion inputs must share a dimension")
    if not 1 <= k <= dim:
        raise ContractViolation(f"k={k} outside [1, {dim}]")
    prec = np.stack([g.precision[:k] for g in inputs])
    weighted = prec * np.stack([g.mean[:k] for g in inputs])
    total_prec = np.array([math.fsum(col) for col in prec.T.tolist()])
    total_weighted = np.array([math.fsum(col) for col in weighted.T.tolist()])
    return DiagonalGaussian(total_weighted / total_prec, -np.log(total_prec))


def sample_reparameterized(g, eps):
    eps = np.asarray(eps, dtype=np.float64).reshape(-1)
    if eps.size != g.dim:
        raise ContractViolation(f"eps has length {eps.size}, expected {g.dim}")
    return g.mean + np.exp(0.5 * g.log_var) * eps
