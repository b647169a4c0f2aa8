"""
Masked ELBO: reconstruction, z-regulariser and consensus regulariser.

Two ELBO variants share one set of column permutations ``sigma``:

* **basic** -- posteriors factorised by the rows of Z0. Each observed view
  ``n`` is rebuilt from its self-encoded latent ``Z0[n][n]`` and the
  consensus of row ``n`` of Z0. Every Z0 entry is regularised towards the
  entry that lands on its position in Z1, and every Z0-row consensus
  towards the Z1-row consensus at the same row.
* **permuted** -- the same with the roles of Z0 and Z1 swapped, so view
  ``n`` is rebuilt from the cross-view latent ``Z1[n][n]``.

The **combined** objective averages the two, which turns both regularisers
into sums of symmetric KL terms. Losses are in minimisation form:
``total = -recon + beta_z * kl_z + beta_omega * kl_omega``.

The first half of this module evaluates one sample with
``DiagonalGaussian`` objects; ``batch_objective`` is the vectorised version
used for training, with hand-derived gradients.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .gaussian import (
    DiagonalGaussian,
    geometric_mean_fusion,
    kl_divergence,
    marginal_first_k,
    sample_reparameterized,
)
from .latent import apply_column_permutations, complete_view_cell, consensus, single_view_cell

PRIOR_MODES = ("cyclic", "standard_normal", "fusion", "diagonal", "random_perm")
RECON_MODES = ("gaussian_unit_variance",)
VARIANTS = ("basic", "permuted", "combined")


@dataclass(frozen=True)
class ObjectiveConfig:
    beta_z: float = 5.0
    beta_omega: float = 2.5
    prior_mode: str = "cyclic"
    recon_mode: str = "gaussian_unit_variance"

    def __post_init__(self):
        for name in ("beta_z", "beta_omega"):
            b = getattr(self, name)
            if not (np.isfinite(b) and b > 0):
                raise ContractViolation(f"{name} must be finite and > 0, got {b}")
        if self.prior_mode not in PRIOR_MODES:
            raise ContractViolation(f"unknown prior mode {self.prior_mode!r}; choose from {PRIOR_MODES}")
        if self.recon_mode not in RECON_MODES:
            raise ContractViolation(f"unknown recon mode {self.recon_mode!r}")


@dataclass
class LossBreakdown:
    recon: float  # log-likelihood (higher is better)
    kl_z: float
    kl_omega: float
    total: float

    @classmethod
    def from_terms(cls, recon, kl_z, kl_omega, config):
        total = -recon + config.beta_z * kl_z + config.beta_omega * kl_omega
        return cls(float(recon), float(kl_z), float(kl_omega), float(total))

    def as_dict(self):
        return {"recon": self.recon, "kl_z": self.kl_z, "kl_omega": self.kl_omega, "total": self.total}


def recon_log_likelihood(x, x_hat):
    """Unit-variance Gaussian log-likelihood without its constant."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    x_hat = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    if x.shape != x_hat.shape:
        raise ContractViolation(f"x has dim {x.size}, x_hat has dim {x_hat.size}")
    r = x - x_hat
    return -0.5 * float(r @ r)


def random_bundle(L, observed, rng):
    """Column maps that shuffle ``observed`` uniformly (fixed points allowed).

    Ablation stand-in for the cyclic bundle; ``rng`` is a numpy Generator.
    Returns ``L`` 1-based maps that fix every missing view.
    """
    obs = sorted(observed)
    maps = []
    for _ in range(L):
        m = list(range(1, L + 1))
        shuffled = list(rng.permutation(obs))
        for v, t in zip(obs, shuffled):
            m[v - 1] = int(t)
        maps.append(tuple(m))
    return maps


# ---------------------------------------------------------------------------
# per-sample reference path


@dataclass
class PriorAssignment:
    z_basic: dict  # prior for each Z0 position (v, l)
    z_permuted: dict  # prior for each Z1 position (i, l)
    omega_basic: dict  # prior for the Z0-row consensus n
    omega_permuted: dict  # prior for the Z1-row consensus n


def row_consensus(z, k):
    return {n: consensus(complete_view_cell(z, n), k).dist for n in sorted(z.observed)}


def apply_prior_mode(mode, z0, z1, k):
    """Priors for both ELBO variants under an ablation mode.

    ``random_perm`` uses the same rule as ``cyclic``; the difference lies in
    how ``z1`` was produced (see ``random_bundle``).
    """
    if mode not in PRIOR_MODES:
        raise ContractViolation(f"unknown prior mode {mode!r}")
    keys = sorted(z0.entries)
    om0, om1 = row_consensus(z0, k), row_consensus(z1, k)
    if mode in ("cyclic", "random_perm"):
        return PriorAssignment(
            {key: z1[key] for key in keys},
            {key: z0[key] for key in keys},
            dict(om1),
            dict(om0),
        )
    if mode == "standard_normal":
        zs, ws = DiagonalGaussian.standard(z0.d), DiagonalGaussian.standard(k)
        return PriorAssignment(
            {key: zs for key in keys}, {key: zs for key in keys},
            {n: ws for n in om0}, {n: ws for n in om1},
        )
    columns = {l: geometric_mean_fusion(single_view_cell(z0, l), z0.d) for l in range(1, z0.L + 1)}
    if mode == "fusion":
        w0 = geometric_mean_fusion(list(om0.values()), k)
        w1 = geometric_mean_fusion(list(om1.values()), k)
        return PriorAssignment(
            {key: columns[key[1]] for key in keys}, {key: columns[key[1]] for key in keys},
            {n: w0 for n in om0}, {n: w1 for n in om1},
        )
    # diagonal: the self-encoded latent of each column; fused column if that view is missing
    col_prior = {l: (z0[(l, l)] if l in z0.observed else columns[l]) for l in range(1, z0.L + 1)}
    wd = geometric_mean_fusion([marginal_first_k(z0[(l, l)], k) for l in sorted(z0.observed)], k)
    return PriorAssignment(
        {key: col_prior[key[1]] for key in keys}, {key: col_prior[key[1]] for key in keys},
        {n: wd for n in om0}, {n: wd for n in om1},
    )


@dataclass
class Noise:
    """Reparameterisation noise per observed view: ``z[n]`` (d,) and ``omega[n]`` (k,)."""

    z: dict
    omega: dict

    @classmethod
    def zeros(cls, observed, d, k):
        return cls({n: np.zeros(d) for n in observed}, {n: np.zeros(k) for n in observed})


def _decode(decoder, omega_sample, z_sample):
    return decoder(np.concatenate([omega_sample, z_sample]))[0]


def _variant_terms(views, post, omegas, z_priors, omega_priors, decoders, noise):
    recon = 0.0
    for n in sorted(post.observed):
        z_s = sample_reparameterized(post[(n, n)], noise.z[n])
        w_s = sample_reparameterized(omegas[n], noise.omega[n])
        recon += recon_log_likelihood(views[n - 1], _decode(decoders[n - 1], w_s, z_s))
    kl_z = sum(kl_divergence(post[key], z_priors[key]) for key in sorted(post.entries))
    kl_w = sum(kl_divergence(omegas[n], omega_priors[n]) for n in sorted(omegas))
    return recon, kl_z, kl_w


def _prepare(z0, bundle, k, config, noise):
    config = config or ObjectiveConfig()
    z1 = apply_column_permutations(z0, bundle)
    priors = apply_prior_mode(config.prior_mode, z0, z1, k)
    if noise is None:
        noise = Noise.zeros(z0.observed, z0.d, k)
    return config, z1, priors, noise


def elbo_basic(views, z0, bundle, decoders, k, config=None, noise=None):
    """Self-view reconstruction from the Z0 diagonal, priors from Z1."""
    config, z1, priors, noise = _prepare(z0, bundle, k, config, noise)
    terms = _variant_terms(views, z0, row_consensus(z0, k), priors.z_basic, priors.omega_basic, decoders, noise)
    return LossBreakdown.from_terms(*terms, config)


def elbo_permuted(views, z0, bundle, decoders, k, config=None, noise=None):
    """Cross-view reconstruction from the Z1 diagonal, priors from Z0."""
    config, z1, priors, noise = _prepare(z0, bundle, k, config, noise)
    terms = _variant_terms(views, z1, row_consensus(z1, k), priors.z_permuted, priors.omega_permuted, decoders, noise)
    return LossBreakdown.from_terms(*terms, config)


def elbo_combined(views, z0, bundle, decoders, k, config=None, noise=None):
    config = config or ObjectiveConfig()
    a = elbo_basic(views, z0, bundle, decoders, k, config, noise)
    b = elbo_permuted(views, z0, bundle, decoders, k, config, noise)
    return LossBreakdown.from_terms(
        0.5 * (a.recon + b.recon), 0.5 * (a.kl_z + b.kl_z), 0.5 * (a.kl_omega + b.kl_omega), config
    )


# ---------------------------------------------------------------------------
# batched path with analytic gradients
#
# Shapes: B samples, L views, latent dim d, shared dim k.
#   MU0, LV0 : (B, L, L, d), indexed [b, source row v, target column l]
#   mask     : (B, L) bool, availability of each source row
#   perms    : (B, L, L) int, 0-based, perms[b, l, i] = sigma_l(i)
# Rows of missing views hold placeholders; every term that reads them is
# multiplied by a zero weight, and so is every gradient flowing back.


def _kl_fwd(mp, lp, mq, lq):
    diff = mp - mq
    delta = lp - lq
    inv_q = np.exp(-lq)
    em1 = np.expm1(delta)
    return 0.5 * ((em1 - delta) + diff * diff * inv_q), (diff, em1, inv_q)


def _kl_bwd(cache, g):
    diff, em1, inv_q = cache
    gmp = g * diff * inv_q
    glp = 0.5 * g * em1
    glq = -0.5 * g * (em1 + diff * diff * inv_q)
    return gmp, glp, -gmp, glq


def _fuse_fwd(mu, lv, weight, axis):
    p = weight * np.exp(-lv)
    s = p.sum(axis=axis, keepdims=True)
    a = (p * mu).sum(axis=axis, keepdims=True) / s
    return np.squeeze(a, axis), np.squeeze(-np.log(s), axis), (p / s, a, mu)


def _fuse_bwd(cache, g_mean, g_lv, axis):
    w, a, mu = cache
    g_mean = np.expand_dims(g_mean, axis)
    g_lv = np.expand_dims(g_lv, axis)
    return w * g_mean, w * (g_lv - (mu - a) * g_mean)


@dataclass
class BatchResult:
    breakdown: LossBreakdown  # batch means
    g_mu: np.ndarray
    g_lv: np.ndarray
    per_sample: dict  # recon / kl_z / kl_omega, each (B,)


def batch_objective(MU0, LV0, mask, perms, xs, eps_z, eps_w, decoders, k, config, variant="combined"):
    """Loss and gradients for one mini-batch.

    ``xs`` holds one (B, d_v) array per view, ``eps_z`` is (B, L, d) and
    ``eps_w`` is (B, L, k); the same noise feeds both variants. Decoder
    parameter gradients are accumulated into the decoders' buffers.
    """
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown variant {variant!r}")
    B, L, _, d = MU0.shape
    if not 1 <= k <= d:
        raise ContractViolation(f"k={k} outside [1, {d}]")
    coef = {"basic": (1.0, 0.0), "permuted": (0.0, 1.0), "combined": (0.5, 0.5)}[variant]
    active = [j for j in (0, 1) if coef[j] > 0]
    W = mask.astype(np.float64)
    Wr = W[:, :, None, None]
    scale = 1.0 / B
    mode = config.prior_mode
    ar = np.arange(L)

    bi = np.arange(B)[:, None, None]
    li = ar[None, None, :]
    src = np.transpose(perms, (0, 2, 1))
    MU = [MU0, MU0[bi, src, li]]
    LV = [LV0, LV0[bi, src, li]]
    gMU = [np.zeros_like(MU0), np.zeros_like(MU0)]
    gLV = [np.zeros_like(LV0), np.zeros_like(LV0)]

    # consensus of every row, first k dims
    OM, OL, ocache = [None, None], [None, None], [None, None]
    for j in (0, 1):
        OM[j], OL[j], ocache[j] = _fuse_fwd(MU[j][..., :k], LV[j][..., :k], 1.0, axis=2)
    gOM = [np.zeros_like(OM[0]), np.zeros_like(OM[0])]
    gOL = [np.zeros_like(OL[0]), np.zeros_like(OL[0])]

    recon_b = np.zeros(B)
    klz_b = np.zeros(B)
    klw_b = np.zeros(B)

    # reconstruction: one decoder pass per view covering both variants
    samples = {}
    for j in active:
        zmu, zlv = MU[j][:, ar, ar], LV[j][:, ar, ar]
        sz = np.exp(0.5 * zlv)
        sw = np.exp(0.5 * OL[j])
        samples[j] = (zmu + sz * eps_z, OM[j] + sw * eps_w, sz, sw)
    for n in range(L):
        rows = np.flatnonzero(mask[:, n])
        if rows.size == 0:
            continue
        x = xs[n][rows]
        inp = np.concatenate(
            [np.concatenate([samples[j][1][rows, n], samples[j][0][rows, n]], axis=1) for j in active]
        )
        out, cache = decoders[n].forward(inp)
        target = np.concatenate([x] * len(active))
        resid = target - out
        ll = -0.5 * np.sum(resid * resid, axis=1)
        g_out = np.empty_like(out)
        for t, j in enumerate(active):
            sl = slice(t * rows.size, (t + 1) * rows.size)
            recon_b[rows] += coef[j] * ll[sl]
            g_out[sl] = scale * coef[j] * (-resid[sl])
        g_in = decoders[n].backward(cache, g_out)
        for t, j in enumerate(active):
            sl = slice(t * rows.size, (t + 1) * rows.size)
            gw, gz = g_in[sl, :k], g_in[sl, k:]
            _, _, sz, sw = samples[j]
            gMU[j][rows, n, n] += gz
            gLV[j][rows, n, n] += gz * eps_z[rows, n] * 0.5 * sz[rows, n]
            gOM[j][rows, n] += gw
            gOL[j][rows, n] += gw * eps_w[rows, n] * 0.5 * sw[rows, n]

    bz = scale * config.beta_z
    bw = scale * config.beta_omega

    # consensus regulariser
    Wn = W[:, :, None]
    if mode in ("cyclic", "random_perm"):
        for j in active:
            o = 1 - j
            kl, c = _kl_fwd(OM[j], OL[j], OM[o], OL[o])
            klw_b += coef[j] * np.sum(kl * Wn, axis=(1, 2))
            gmp, glp, gmq, glq = _kl_bwd(c, bw * coef[j] * Wn)
            gOM[j] += gmp
            gOL[j] += glp
            gOM[o] += gmq
            gOL[o] += glq
    elif mode == "standard_normal":
        zero = np.zeros_like(OM[0])
        for j in active:
            kl, c = _kl_fwd(OM[j], OL[j], zero, zero)
            klw_b += coef[j] * np.sum(kl * Wn, axis=(1, 2))
            gmp, glp, _, _ = _kl_bwd(c, bw * coef[j] * Wn)
            gOM[j] += gmp
            gOL[j] += glp
    elif mode == "fusion":
        for j in active:
            qm, ql, qc = _fuse_fwd(OM[j], OL[j], Wn, axis=1)
            kl, c = _kl_fwd(OM[j], OL[j], qm[:, None, :], ql[:, None, :])
            klw_b += coef[j] * np.sum(kl * Wn, axis=(1, 2))
            gmp, glp, gmq, glq = _kl_bwd(c, bw * coef[j] * Wn)
            gOM[j] += gmp
            gOL[j] += glp
            a, b = _fuse_bwd(qc, gmq.sum(axis=1), glq.sum(axis=1), axis=1)
            gOM[j] += a
            gOL[j] += b
    else:  # diagonal
        dmu, dlv = MU0[:, ar, ar, :k], LV0[:, ar, ar, :k]
        qm, ql, qc = _fuse_fwd(dmu, dlv, Wn, axis=1)
        gqm, gql = np.zeros_like(qm), np.zeros_like(ql)
        for j in active:
            kl, c = _kl_fwd(OM[j], OL[j], qm[:, None, :], ql[:, None, :])
            klw_b += coef[j] * np.sum(kl * Wn, axis=(1, 2))
            gmp, glp, gmq, glq = _kl_bwd(c, bw * coef[j] * Wn)
            gOM[j] += gmp
            gOL[j] += glp
            gqm += gmq.sum(axis=1)
            gql += glq.sum(axis=1)
        a, b = _fuse_bwd(qc, gqm, gql, axis=1)
        gMU[0][:, ar, ar, :k] += a
        gLV[0][:, ar, ar, :k] += b

    # z regulariser
    if mode in ("cyclic", "random_perm"):
        for j in active:
            o = 1 - j
            kl, c = _kl_fwd(MU[j], LV[j], MU[o], LV[o])
            klz_b += coef[j] * np.sum(kl * Wr, axis=(1, 2, 3))
            gmp, glp, gmq, glq = _kl_bwd(c, bz * coef[j] * Wr)
            gMU[j] += gmp
            gLV[j] += glp
            gMU[o] += gmq
            gLV[o] += glq
    elif mode == "standard_normal":
        zero = np.zeros_like(MU0)
        for j in active:
            kl, c = _kl_fwd(MU[j], LV[j], zero, zero)
            klz_b += coef[j] * np.sum(kl * Wr, axis=(1, 2, 3))
            gmp, glp, _, _ = _kl_bwd(c, bz * coef[j] * Wr)
            gMU[j] += gmp
            gLV[j] += glp
    else:  # fusion / diagonal: one prior per column
        cm, cl, cc = _fuse_fwd(MU0, LV0, Wr, axis=1)  # (B, L, d)
        if mode == "diagonal":
            use_diag = mask[:, :, None]
            qm = np.where(use_diag, MU0[:, ar, ar], cm)
            ql = np.where(use_diag, LV0[:, ar, ar], cl)
        else:
            qm, ql = cm, cl
        gqm, gql = np.zeros_like(qm), np.zeros_like(ql)
        for j in active:
            kl, c = _kl_fwd(MU[j], LV[j], qm[:, None], ql[:, None])
            klz_b += coef[j] * np.sum(kl * Wr, axis=(1, 2, 3))
            gmp, glp, gmq, glq = _kl_bwd(c, bz * coef[j] * Wr)
            gMU[j] += gmp
            gLV[j] += glp
            gqm += gmq.sum(axis=1)
            gql += glq.sum(axis=1)
        if mode == "diagonal":
            use_diag = mask[:, :, None]
            gMU[0][:, ar, ar] += np.where(use_diag, gqm, 0.0)
            gLV[0][:, ar, ar] += np.where(use_diag, gql, 0.0)
            gqm = np.where(use_diag, 0.0, gqm)
            gql = np.where(use_diag, 0.0, gql)
        a, b = _fuse_bwd(cc, gqm, gql, axis=1)
        gMU[0] += a
        gLV[0] += b

    # consensus -> latent matrices
    for j in (0, 1):
        a, b = _fuse_bwd(ocache[j], gOM[j], gOL[j], axis=2)
        gMU[j][..., :k] += a
        gLV[j][..., :k] += b

    # Z1 -> Z0; each (b, l) column is a bijection, so no index collides
    gMU[0][bi, src, li] += gMU[1]
    gLV[0][bi, src, li] += gLV[1]

    recon = float(recon_b.mean())
    breakdown = LossBreakdown.from_terms(recon, float(klz_b.mean()), float(klw_b.mean()), config)
    return BatchResult(
        breakdown, gMU[0], gLV[0], {"recon": recon_b, "kl_z": klz_b, "kl_omega": klw_b}
    )
