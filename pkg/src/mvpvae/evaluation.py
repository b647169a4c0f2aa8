"""
Inference-time use of a trained model: consensus embeddings for clustering,
missing-view reconstruction, and the clustering metrics ACC / NMI / ARI.

At inference every distribution is replaced by its mean after fusion; there
is no sampling, so all outputs are deterministic.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractViolation
from .gaussian import geometric_mean_fusion, marginal_first_k
from .latent import averaged_latents
from .model import encode_batch
from .objective import _fuse_fwd

_CHUNK = 256


def _averaged(params, xs, mask):
    """Column-wise fused latents (B, L, d) for one chunk."""
    MU, LV, _ = encode_batch(params, xs, mask)
    cm, cl, _ = _fuse_fwd(MU, LV, mask[:, :, None, None].astype(np.float64), axis=1)
    return cm, cl


def _chunks(n):
    for start in range(0, n, _CHUNK):
        yield np.arange(start, min(start + _CHUNK, n))


def consensus_embedding(dataset, params, k=None):
    """(N, k) matrix of consensus means.

    Per sample: fuse each column of the latent matrix over the observed
    source views, then fuse the first ``k`` dims of the ``L`` column
    averages.
    """
    k = params.k if k is None else k
    if not 1 <= k <= params.d:
        raise ContractViolation(f"k={k} outside [1, {params.d}]")
    xs = dataset.masked_views()
    out = np.empty((dataset.N, k))
    for idx in _chunks(dataset.N):
        cm, cl = _averaged(params, [x[idx] for x in xs], dataset.masks[idx])
        om, _, _ = _fuse_fwd(cm[..., :k], cl[..., :k], 1.0, axis=1)
        out[idx] = om
    return out


def sample_consensus(views, mask, params, k=None):
    """Single-sample version of ``consensus_embedding`` on Gaussian objects."""
    k = params.k if k is None else k
    z0 = params.latent_matrix(views, mask)
    return geometric_mean_fusion(averaged_latents(z0), k)


def infer_missing_views(views, mask, params, k=None):
    """Reconstruct all ``L`` views of one sample from its observed views."""
    k = params.k if k is None else k
    z0 = params.latent_matrix(views, mask)
    zbar = averaged_latents(z0)
    omega = geometric_mean_fusion([marginal_first_k(z, k) for z in zbar], k)
    return [
        dec(np.concatenate([omega.mean, z.mean]))[0]
        for dec, z in zip(params.decoders, zbar)
    ]


def reconstruct_all(dataset, params):
    """Batched ``infer_missing_views``: one (N, d_v) matrix per view."""
    k = params.k
    xs = dataset.masked_views()
    out = [np.empty((dataset.N, dv)) for dv in params.view_dims]
    for idx in _chunks(dataset.N):
        cm, cl = _averaged(params, [x[idx] for x in xs], dataset.masks[idx])
        om, _, _ = _fuse_fwd(cm[..., :k], cl[..., :k], 1.0, axis=1)
        for l, dec in enumerate(params.decoders):
            out[l][idx] = dec(np.concatenate([om, cm[:, l]], axis=1))
    return out


def mean_imputation(dataset):
    """Fill every missing view with the per-feature mean of its observed rows."""
    out = []
    for v, x in enumerate(dataset.views):
        obs = dataset.masks[:, v]
        mean = x[obs].mean(axis=0) if obs.any() else np.zeros(x.shape[1])
        out.append(np.where(obs[:, None], x, mean))
    return out


def missing_view_mse(truth, recon, masks):
    """Mean squared error over every scalar entry of every missing view.

    Returns ``(overall, per_view)``; views with nothing missing report NaN.
    """
    sse, count, per_view = 0.0, 0, []
    for v, (x, xh) in enumerate(zip(truth, recon)):
        miss = ~masks[:, v]
        if not miss.any():
            per_view.append(float("nan"))
            continue
        err = (x[miss] - xh[miss]) ** 2
        sse += float(err.sum())
        count += err.size
        per_view.append(float(err.mean()))
    return (sse / count if count else float("nan")), per_view


def imputation_report(dataset, params):
    """Model vs mean-imputation MSE on the views marked missing in ``dataset``."""
    model_mse, model_views = missing_view_mse(dataset.views, reconstruct_all(dataset, params), dataset.masks)
    base_mse, base_views = missing_view_mse(dataset.views, mean_imputation(dataset), dataset.masks)
    return {
        "model_mse": model_mse,
        "baseline_mse": base_mse,
        "model_mse_per_view": model_views,
        "baseline_mse_per_view": base_views,
    }


# ---------------------------------------------------------------------------
# k-means


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            i = rng.choice(n, p=d2 / total)
        else:
            i = rng.integers(n)
        centers[c] = X[i]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _sq_dists(X, centers):
    return (
        (X * X).sum(axis=1)[:, None]
        - 2.0 * X @ centers.T
        + (centers * centers).sum(axis=1)[None, :]
    )


def _lloyd(X, centers, max_iter, tol):
    for _ in range(max_iter):
        d2 = _sq_dists(X, centers)
        assign = np.argmin(d2, axis=1)
        new = centers.copy()
        for c in range(centers.shape[0]):
            members = assign == c
            if members.any():
                new[c] = X[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point worst served by its centre
                far = int(np.argmax(d2[np.arange(X.shape[0]), assign]))
                new[c] = X[far]
                d2[far] = 0.0
        shift = ((new - centers) ** 2).sum()
        centers = new
        if shift <= tol:
            break
    d2 = _sq_dists(X, centers)
    assign = np.argmin(d2, axis=1)
    inertia = float(np.maximum(d2[np.arange(X.shape[0]), assign], 0.0).sum())
    return assign, centers, inertia


def kmeans(points, k_clusters, restarts=10, max_iter=300, tol=1e-4, seed=0):
    """Lloyd's algorithm with k-means++ seeding; best inertia over restarts.

    ``tol`` bounds the squared centre shift, relative to the mean per-feature
    variance of ``points``.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ContractViolation("points must be a 2-D matrix")
    n = X.shape[0]
    if not 1 <= k_clusters <= n:
        raise ContractViolation(f"k_clusters must be in [1, {n}], got {k_clusters}")
    if restarts < 1:
        raise ContractViolation("restarts must be >= 1")
    abs_tol = tol * float(X.var(axis=0).mean())
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        assign, _, inertia = _lloyd(X, _kmeanspp(X, k_clusters, rng), max_iter, abs_tol)
        if best is None or inertia < best[1]:
            best = (assign, inertia)
    return best[0].astype(np.int64)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class ClusterReport:
    acc: float
    nmi: float
    ari: float
    assignments: np.ndarray

    def as_dict(self):
        return {"acc": self.acc, "nmi": self.nmi, "ari": self.ari}


def contingency(true_labels, pred):
    _, ti = np.unique(true_labels, return_inverse=True)
    _, pi = np.unique(pred, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def clustering_accuracy(true_labels, pred):
    """Best agreement fraction over one-to-one cluster/class matchings."""
    table = contingency(true_labels, pred)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / len(true_labels)


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def normalized_mutual_info(true_labels, pred):
    """Mutual information over the arithmetic mean of the two entropies."""
    table = contingency(true_labels, pred).astype(np.float64)
    n = table.sum()
    a, b = table.sum(axis=1), table.sum(axis=0)
    ha, hb = _entropy(a, n), _entropy(b, n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = table > 0
    outer = np.outer(a, b)
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return float(min(max(mi / (0.5 * (ha + hb)), 0.0), 1.0))


def _pairs(x):
    return x * (x - 1) / 2.0


def adjusted_rand_index(true_labels, pred):
    table = contingency(true_labels, pred).astype(np.float64)
    n = table.sum()
    index = _pairs(table).sum()
    sa, sb = _pairs(table.sum(axis=1)).sum(), _pairs(table.sum(axis=0)).sum()
    expected = sa * sb / _pairs(n) if n > 1 else 0.0
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def clustering_metrics(true_labels, assignments):
    t = np.asarray(true_labels).reshape(-1)
    p = np.asarray(assignments).reshape(-1)
    if t.size != p.size:
        raise ContractViolation(f"{t.size} labels but {p.size} assignments")
    if t.size == 0:
        raise ContractViolation("need at least one sample")
    return ClusterReport(
        clustering_accuracy(t, p), normalized_mutual_info(t, p), adjusted_rand_index(t, p), p.astype(np.int64)
    )


def cluster_dataset(dataset, params, n_clusters=None, seed=0, k=None):
    """K-means on consensus means, scored against ``dataset.labels``."""
    if dataset.labels is None:
        raise ContractViolation("dataset has no labels to evaluate against")
    n_clusters = n_clusters or int(np.unique(dataset.labels).size)
    emb = consensus_embedding(dataset, params, k)
    return clustering_metrics(dataset.labels, kmeans(emb, n_clusters, seed=seed))


def config_digest(config):
    """SHA-256 of the canonical JSON form; independent of key order."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_report(path, report, eta, seed, config):
    out = {**report.as_dict(), "eta": eta, "seed": seed, "config_digest": config_digest(config)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
