"""
Multi-view datasets, missing-view masks and permutation fingerprints.

Masks and fingerprints are drawn from ``Xoshiro256`` so that a seed pins them
down exactly; the fingerprint stream is a jumped copy of the mask stream, so
the two never overlap even when they share a seed.

Fingerprint files are JSON lines. The first line is a header::

    {"version": 1, "L": 5, "eta": 0.5, "seed": 0, "pool": 8}

and every further line is one sample::

    {"mask": [0, 1, 1, 0, 1], "perms": [[...], ...], "more_perms": [[[...], ...], ...]}

``perms`` holds ``L`` 1-based column maps; ``more_perms`` holds the other
``pool - 1`` bundles that training cycles through.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractViolation, DataFormatError, FingerprintError
from .permutation import PermutationBundle, make_bundle
from .rng import Xoshiro256

FINGERPRINT_VERSION = 1


@dataclass
class MultiViewDataset:
    views: list  # one (N, d_v) float array per view
    masks: np.ndarray = None  # (N, L) bool; all observed when omitted
    labels: np.ndarray = None  # (N,) int, evaluation only

    def __post_init__(self):
        self.views = [np.asarray(v, dtype=np.float64) for v in self.views]
        if len(self.views) < 1:
            raise ContractViolation("dataset needs at least one view")
        n = self.views[0].shape[0]
        for i, v in enumerate(self.views, start=1):
            if v.ndim != 2:
                raise ContractViolation(f"view {i} must be a 2-D matrix")
            if v.shape[0] != n:
                raise ContractViolation(f"view {i} has {v.shape[0]} rows, view 1 has {n}")
        if self.masks is None:
            self.masks = np.ones((n, len(self.views)), dtype=bool)
        self.masks = np.asarray(self.masks).astype(bool)
        if self.masks.shape != (n, len(self.views)):
            raise ContractViolation(f"masks must be ({n}, {len(self.views)}), got {self.masks.shape}")
        if n and not self.masks.any(axis=1).all():
            bad = int(np.flatnonzero(~self.masks.any(axis=1))[0])
            raise ContractViolation(f"sample {bad} has no observed view")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.int64).reshape(-1)
            if self.labels.size != n:
                raise ContractViolation(f"{self.labels.size} labels for {n} samples")

    @property
    def N(self):
        return self.views[0].shape[0]

    @property
    def L(self):
        return len(self.views)

    @property
    def view_dims(self):
        return tuple(v.shape[1] for v in self.views)

    def with_masks(self, masks):
        return MultiViewDataset(self.views, masks, self.labels)

    def masked_views(self):
        """Copies of the views with every missing entry set to zero."""
        return [np.where(self.masks[:, [v]], x, 0.0) for v, x in enumerate(self.views)]


def _as_dims(view_dims, L):
    if np.isscalar(view_dims):
        return (int(view_dims),) * L
    dims = tuple(int(x) for x in view_dims)
    if len(dims) != L:
        raise ContractViolation(f"{len(dims)} view dims given for L={L}")
    return dims


def gen_synthetic(n, clusters, L, view_dims, noise_sigma=0.1, seed=0, latent_dim=4,
                  centroid_scale=3.0, jitter=0.5):
    """Clustered samples seen through ``L`` nonlinear views.

    Labels are dealt round-robin (so cluster sizes differ by at most one)
    and then shuffled. Each sample's shared latent is its cluster centroid
    plus N(0, jitter^2) noise; view ``v`` is ``tanh(h @ A_v + b_v)`` plus
    N(0, noise_sigma^2) noise with a fixed random affine map per view.
    """
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    if clusters < 1 or clusters > n:
        raise ContractViolation(f"clusters must be in [1, n], got {clusters}")
    if L < 2:
        raise ContractViolation(f"need L >= 2 views, got {L}")
    if noise_sigma < 0 or jitter < 0:
        raise ContractViolation("noise scales must be >= 0")
    dims = _as_dims(view_dims, L)
    if any(x < 1 for x in dims):
        raise ContractViolation(f"view dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % clusters)
    centroids = rng.normal(scale=centroid_scale, size=(clusters, latent_dim))
    h = centroids[labels] + rng.normal(scale=jitter, size=(n, latent_dim))
    views = []
    for dv in dims:
        A = rng.normal(scale=1.0 / np.sqrt(latent_dim), size=(latent_dim, dv))
        b = rng.normal(scale=0.5, size=dv)
        views.append(np.tanh(h @ A + b) + rng.normal(scale=noise_sigma, size=(n, dv)))
    return MultiViewDataset(views, None, labels)


def incomplete_count(n, eta):
    """floor(eta * n), with ``eta`` read as the decimal it prints as."""
    return math.floor(Fraction(repr(float(eta))) * n)


def _choose(rng, n, m):
    """``m`` distinct indices from ``range(n)`` by a partial Fisher-Yates shuffle."""
    a = list(range(n))
    for i in range(m):
        j = i + rng.below(n - i)
        a[i], a[j] = a[j], a[i]
    return a[:m]


def gen_masks(n, L, eta, seed):
    """(n, L) availability masks with exactly floor(eta * n) incomplete rows.

    Incomplete rows drop a number of views drawn uniformly from 1..L-1,
    then that many distinct views chosen uniformly.
    """
    if L < 2:
        raise ContractViolation(f"need L >= 2, got {L}")
    if n < 0:
        raise ContractViolation(f"n must be >= 0, got {n}")
    if not (0.0 <= eta <= 1.0):
        raise ContractViolation(f"eta must be in [0, 1], got {eta}")
    rng = Xoshiro256(seed)
    masks = np.ones((n, L), dtype=bool)
    for i in sorted(_choose(rng, n, incomplete_count(n, eta))):
        drop = 1 + rng.below(L - 1)
        masks[i, _choose(rng, L, drop)] = False
    return masks


@dataclass
class Fingerprint:
    L: int
    eta: float
    seed: int
    pool: int
    masks: np.ndarray  # (N, L) bool
    bundles: list = field(default_factory=list)  # per sample, ``pool`` PermutationBundles

    @property
    def N(self):
        return self.masks.shape[0]

    def observed(self, i):
        return frozenset(int(v) + 1 for v in np.flatnonzero(self.masks[i]))

    def bundle(self, i, iteration=0):
        """Bundle used for sample ``i`` at a given epoch; cycles through the pool."""
        return self.bundles[i][iteration % self.pool]

    def perms_array(self, indices, iteration=0):
        """0-based maps, shape (len(indices), L, L): ``[b, l, i] = sigma_l(i)``."""
        out = np.empty((len(indices), self.L, self.L), dtype=np.int64)
        for b, i in enumerate(indices):
            out[b] = np.asarray(self.bundle(int(i), iteration).as_lists()) - 1
        return out

    def summary(self):
        incomplete = int((~self.masks.all(axis=1)).sum())
        return {"N": self.N, "L": self.L, "eta": self.eta, "seed": self.seed, "pool": self.pool,
                "incomplete": incomplete}


def build_fingerprint(masks, seed, pool=8, eta=None):
    """Precompute ``pool`` permutation bundles per sample."""
    masks = np.asarray(masks).astype(bool)
    if masks.ndim != 2 or masks.shape[1] < 2:
        raise ContractViolation(f"masks must be (N, L) with L >= 2, got {masks.shape}")
    if pool < 1:
        raise ContractViolation(f"pool must be >= 1, got {pool}")
    if masks.shape[0] and not masks.any(axis=1).all():
        raise ContractViolation("every mask needs at least one observed view")
    N, L = masks.shape
    if eta is None:
        eta = float((~masks.all(axis=1)).mean()) if N else 0.0
    rng = Xoshiro256(seed).jump()
    bundles = []
    for i in range(N):
        obs = frozenset(int(v) + 1 for v in np.flatnonzero(masks[i]))
        bundles.append([make_bundle(L, obs, rng) for _ in range(pool)])
    return Fingerprint(L, float(eta), int(seed), int(pool), masks, bundles)


def _dumps(obj):
    return json.dumps(obj, separators=(", ", ": "))


def write_fingerprint(fp, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = {"version": FINGERPRINT_VERSION, "L": fp.L, "eta": fp.eta, "seed": fp.seed, "pool": fp.pool}
        fh.write(_dumps(header) + "\n")
        for i in range(fp.N):
            pool = fp.bundles[i]
            rec = {
                "mask": [int(b) for b in fp.masks[i]],
                "perms": pool[0].as_lists(),
                "more_perms": [b.as_lists() for b in pool[1:]],
            }
            fh.write(_dumps(rec) + "\n")


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _read_bundle(maps, L, observed, line, sample):
    if not (isinstance(maps, list) and len(maps) == L and all(isinstance(m, list) and len(m) == L for m in maps)):
        raise FingerprintError(f"perms must be {L} lists of {L} integers", line, sample)
    if not all(_is_int(x) for m in maps for x in m):
        raise FingerprintError("perms must contain integers", line, sample)
    try:
        return PermutationBundle.from_lists(maps, observed)
    except ContractViolation as exc:
        raise FingerprintError(str(exc), line, sample) from None


def read_fingerprint(path, expected_eta=None):
    """Parse and validate a fingerprint file.

    Errors name the 1-based line and the 0-based sample index. When
    ``expected_eta`` disagrees with the header a warning is issued and the
    file's value is kept.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FingerprintError("empty fingerprint file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FingerprintError(f"header is not valid JSON ({exc.msg})", 1) from None
    if not isinstance(header, dict):
        raise FingerprintError("header must be a JSON object", 1)
    for key in ("version", "L", "eta", "seed", "pool"):
        if key not in header:
            raise FingerprintError(f"header is missing {key!r}", 1)
    if header["version"] != FINGERPRINT_VERSION:
        raise FingerprintError(f"unsupported version {header['version']!r}", 1)
    L, pool = header["L"], header["pool"]
    if not (_is_int(L) and L >= 2 and _is_int(pool) and pool >= 1):
        raise FingerprintError("header L must be an integer >= 2 and pool >= 1", 1)
    eta = header["eta"]
    if isinstance(eta, bool) or not isinstance(eta, (int, float)) or not 0 <= eta <= 1:
        raise FingerprintError("header eta must be a number in [0, 1]", 1)
    if expected_eta is not None and float(expected_eta) != float(eta):
        warnings.warn(f"fingerprint eta {eta} differs from requested {expected_eta}; using the file's value")
    masks, bundles = [], []
    for sample, text in enumerate(lines[1:]):
        line = sample + 2
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FingerprintError(f"invalid JSON ({exc.msg})", line, sample) from None
        if not isinstance(rec, dict) or "mask" not in rec or "perms" not in rec:
            raise FingerprintError("record needs 'mask' and 'perms'", line, sample)
        mask = rec["mask"]
        if not (isinstance(mask, list) and len(mask) == L and all(_is_int(b) and b in (0, 1) for b in mask)):
            raise FingerprintError(f"mask must be {L} entries of 0/1", line, sample)
        if not any(mask):
            raise FingerprintError("mask has no observed view", line, sample)
        observed = frozenset(v + 1 for v, b in enumerate(mask) if b)
        more = rec.get("more_perms", [])
        if not isinstance(more, list) or len(more) != pool - 1:
            raise FingerprintError(f"expected {pool - 1} entries in more_perms", line, sample)
        pool_bundles = [_read_bundle(m, L, observed, line, sample) for m in [rec["perms"], *more]]
        masks.append(mask)
        bundles.append(pool_bundles)
    mask_arr = np.array(masks, dtype=bool).reshape(len(masks), L)
    return Fingerprint(L, eta, header["seed"], pool, mask_arr, bundles)


def load_csv(paths, label_path=None, header=False, zscore=False):
    """One CSV file per view, optionally a one-column label file.

    With ``zscore`` every feature column is shifted and scaled to mean 0 and
    standard deviation 1 (constant columns are only centred).
    """
    views = [_read_matrix(p, header) for p in paths]
    if len(views) < 2:
        raise ContractViolation("need at least two view files")
    n = views[0].shape[0]
    for p, v in zip(paths, views):
        if v.shape[0] != n:
            raise DataFormatError(f"{p}: {v.shape[0]} rows, expected {n}")
    if zscore:
        scaled = []
        for v in views:
            sd = v.std(axis=0)
            scaled.append((v - v.mean(axis=0)) / np.where(sd > 0, sd, 1.0))
        views = scaled
    labels = None
    if label_path is not None:
        lab = _read_matrix(label_path, header)
        if lab.shape[0] != n or lab.shape[1] != 1:
            raise DataFormatError(f"{label_path}: expected {n} rows of one label")
        if not np.all(lab == np.round(lab)):
            raise DataFormatError(f"{label_path}: labels must be integers")
        labels = lab[:, 0].astype(np.int64)
    return MultiViewDataset(views, None, labels)


def _read_matrix(path, header):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row:
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise DataFormatError(f"{path}, line {lineno}: non-numeric cell") from None
            if len(rows[-1]) != len(rows[0]):
                raise DataFormatError(f"{path}, line {lineno}: {len(rows[-1])} columns, expected {len(rows[0])}")
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def write_csv(path, matrix, fmt="%.17g"):
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt=fmt)
