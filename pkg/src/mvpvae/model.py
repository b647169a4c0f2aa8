"""
Model parameters, the batched latent-matrix pass and checkpoint files.

Parameter declaration order (used by the optimiser, gradient checks and the
checkpoint blob): encoders ``1..L``, then correspondences ``(l, v)`` for
``l = 1..L`` and ``v != l`` ascending, then decoders ``1..L``.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ContractViolation
from .gaussian import LOG_VAR_MAX, LOG_VAR_MIN
from .latent import build_latent_matrix
from .neural import DenseNet, EncoderNet
from .objective import batch_objective

CHECKPOINT_MAGIC = b"MVPVAE\x00\x01"
CHECKPOINT_VERSION = 1
_MAX_HEADER_BYTES = 1 << 24


@dataclass
class ModelParams:
    view_dims: tuple
    d: int
    k: int
    encoders: list
    correspondences: dict  # (l, v) -> DenseNet, 1-based, maps source v to target l
    decoders: list
    arch: dict = field(default_factory=dict)

    @property
    def L(self):
        return len(self.view_dims)

    def correspondence_keys(self):
        return [(l, v) for l in range(1, self.L + 1) for v in range(1, self.L + 1) if v != l]

    def modules(self):
        """``(name, module)`` pairs in declaration order."""
        out = [(f"encoder[{v}]", e) for v, e in enumerate(self.encoders, start=1)]
        out += [(f"corr[{l}<-{v}]", self.correspondences[(l, v)]) for l, v in self.correspondence_keys()]
        out += [(f"decoder[{v}]", dec) for v, dec in enumerate(self.decoders, start=1)]
        return out

    def parameters(self):
        return [p for _, m in self.modules() for p in m.parameters()]

    def grads(self):
        return [g for _, m in self.modules() for g in m.grads()]

    def named_parameters(self):
        names = []
        for name, m in self.modules():
            layers = _layers(m)
            for i, layer in layers:
                names.append((f"{name}.{i}.W", layer.W))
                names.append((f"{name}.{i}.b", layer.b))
        return names

    def zero_grad(self):
        for _, m in self.modules():
            m.zero_grad()

    def n_params(self):
        return int(sum(p.size for p in self.parameters()))

    def latent_matrix(self, views, mask):
        """Z0 for a single sample (object-level reference path)."""
        return build_latent_matrix(views, mask, self.encoders, self.correspondences)

    def copy(self):
        clone = _build(self.view_dims, self.d, self.k, self.arch, rng=None)
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst[...] = src
        return clone


def _layers(m):
    if isinstance(m, EncoderNet):
        named = [(f"trunk{i}", layer) for i, layer in enumerate(m.trunk.layers)]
        return named + [("mu", m.mu_head), ("logvar", m.logvar_head)]
    return [(f"layer{i}", layer) for i, layer in enumerate(m.layers)]


def _build(view_dims, d, k, arch, rng):
    enc_hidden = tuple(arch["enc_hidden"])
    corr_hidden = tuple(arch["corr_hidden"])
    dec_hidden = tuple(arch["dec_hidden"])
    L = len(view_dims)
    encoders = [EncoderNet(dv, enc_hidden, d, rng) for dv in view_dims]
    corr = {}
    for l in range(1, L + 1):
        for v in range(1, L + 1):
            if v == l:
                continue
            if corr_hidden:
                corr[(l, v)] = DenseNet.mlp(d, corr_hidden, d, "leaky_relu", "linear", rng)
            else:
                corr[(l, v)] = DenseNet.identity(d)
    decoders = [DenseNet.mlp(k + d, dec_hidden, dv, "relu", "linear", rng) for dv in view_dims]
    return ModelParams(tuple(int(x) for x in view_dims), d, k, encoders, corr, decoders, dict(arch))


def init_model(view_dims, d=16, k=None, enc_hidden=(256, 256, 1024), corr_hidden=(128, 256, 128),
               dec_hidden=None, seed=0):
    """Randomly initialised model.

    The decoder mirrors the encoder trunk unless ``dec_hidden`` is given.
    An empty ``corr_hidden`` gives single linear correspondences that start
    at the identity map.
    """
    k = d if k is None else k
    view_dims = tuple(int(x) for x in view_dims)
    if len(view_dims) < 2:
        raise ContractViolation(f"need at least 2 views, got {len(view_dims)}")
    if any(x < 1 for x in view_dims):
        raise ContractViolation(f"view dims must be >= 1, got {view_dims}")
    if d < 1 or not 1 <= k <= d:
        raise ContractViolation(f"need 1 <= k <= d, got d={d}, k={k}")
    arch = {
        "enc_hidden": [int(h) for h in enc_hidden],
        "corr_hidden": [int(h) for h in corr_hidden],
        "dec_hidden": [int(h) for h in (tuple(reversed(enc_hidden)) if dec_hidden is None else dec_hidden)],
    }
    return _build(view_dims, d, k, arch, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# batched latent pass


def _clamp(lv):
    return np.clip(lv, LOG_VAR_MIN, LOG_VAR_MAX), (lv > LOG_VAR_MIN) & (lv < LOG_VAR_MAX)


def encode_batch(params, xs, mask):
    """Latent matrices for a batch.

    Returns ``MU, LV`` of shape (B, L, L, d) indexed ``[b, source, target]``
    with zeros in rows of missing views, and a cache for ``backward_latents``.
    Encoders only see rows whose view is observed.
    """
    mask = np.asarray(mask, dtype=bool)
    B, L = mask.shape
    if L != params.L or len(xs) != L:
        raise ContractViolation(f"expected {params.L} views, got mask width {L} and {len(xs)} arrays")
    d = params.d
    MU = np.zeros((B, L, L, d))
    LV = np.zeros((B, L, L, d))
    cache = []
    for v in range(L):
        rows = np.flatnonzero(mask[:, v])
        if rows.size == 0:
            cache.append(None)
            continue
        x = np.asarray(xs[v], dtype=np.float64)[rows]
        mu, lv_raw, ecache = params.encoders[v].forward(x)
        lv, egate = _clamp(lv_raw)
        MU[rows, v, v] = mu
        LV[rows, v, v] = lv
        stacked = np.vstack([mu, lv])
        ccaches = {}
        for l in range(L):
            if l == v:
                continue
            out, c = params.correspondences[(l + 1, v + 1)].forward(stacked)
            clv, cgate = _clamp(out[rows.size:])
            MU[rows, v, l] = out[: rows.size]
            LV[rows, v, l] = clv
            ccaches[l] = (c, cgate)
        cache.append((rows, ecache, egate, ccaches))
    return MU, LV, cache


def backward_latents(params, cache, g_mu, g_lv):
    """Accumulate parameter gradients for upstream (B, L, L, d) gradients."""
    L = params.L
    for v in range(L):
        if cache[v] is None:
            continue
        rows, ecache, egate, ccaches = cache[v]
        n = rows.size
        gm = g_mu[rows, v, v].copy()
        gl = g_lv[rows, v, v].copy()
        for l in range(L):
            if l == v:
                continue
            c, cgate = ccaches[l]
            up = np.vstack([g_mu[rows, v, l], g_lv[rows, v, l] * cgate])
            gin = params.correspondences[(l + 1, v + 1)].backward(c, up)
            gm += gin[:n]
            gl += gin[n:]
        params.encoders[v].backward(ecache, gm, gl * egate)


def loss_and_grad(params, xs, mask, perms, eps_z, eps_w, config, variant="combined"):
    """Zero the gradient buffers, run one batch and fill them again.

    Returns the ``BatchResult`` from ``batch_objective``; gradients are in
    ``params.grads()`` and correspond to ``result.breakdown.total``.
    """
    params.zero_grad()
    MU, LV, cache = encode_batch(params, xs, mask)
    res = batch_objective(MU, LV, mask, perms, xs, eps_z, eps_w, params.decoders, params.k, config, variant)
    backward_latents(params, cache, res.g_mu, res.g_lv)
    return res


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params, path, config=None, seed=None):
    """Write magic, a little-endian u64 header length, a JSON header and the
    float64 parameter blob in declaration order."""
    shapes = [list(p.shape) for p in params.parameters()]
    header = {
        "version": CHECKPOINT_VERSION,
        "L": params.L,
        "d": params.d,
        "k": params.k,
        "view_dims": list(params.view_dims),
        "architecture": params.arch,
        "seed": seed,
        "config": config or {},
        "param_shapes": shapes,
        "n_params": params.n_params(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = np.concatenate([p.reshape(-1) for p in params.parameters()]).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(blob)


def _fail(msg):
    raise CheckpointError(msg)


def load_checkpoint(path, view_dims=None):
    """Read a checkpoint; returns ``(params, header)``.

    The header is validated against the file size before the blob is read.
    ``view_dims``, when given, must match the stored dims view by view.
    """
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            _fail("not a checkpoint file (bad magic)")
        raw = fh.read(8)
        if len(raw) != 8:
            _fail("truncated header length")
        (hlen,) = struct.unpack("<Q", raw)
        if hlen > min(_MAX_HEADER_BYTES, size - len(CHECKPOINT_MAGIC) - 8):
            _fail(f"header length {hlen} exceeds file size")
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            _fail(f"corrupted header: {exc}")
        if not isinstance(header, dict):
            _fail("corrupted header: not an object")
        if header.get("version") != CHECKPOINT_VERSION:
            _fail(f"unsupported checkpoint version {header.get('version')!r}")
        try:
            stored_dims = tuple(int(x) for x in header["view_dims"])
            d, k, arch = int(header["d"]), int(header["k"]), header["architecture"]
            shapes = [tuple(int(s) for s in shp) for shp in header["param_shapes"]]
            n_params = int(header["n_params"])
        except (KeyError, TypeError, ValueError) as exc:
            _fail(f"corrupted header: {exc!r}")
        if view_dims is not None:
            view_dims = tuple(int(x) for x in view_dims)
            if len(view_dims) != len(stored_dims):
                raise ContractViolation(
                    f"checkpoint has {len(stored_dims)} views, data has {len(view_dims)}"
                )
            for v, (a, b) in enumerate(zip(stored_dims, view_dims), start=1):
                if a != b:
                    raise ContractViolation(f"view {v}: checkpoint expects dim {a}, data has dim {b}")
        if sum(int(np.prod(s)) for s in shapes) != n_params:
            _fail("parameter shapes disagree with n_params")
        remaining = size - fh.tell()
        if remaining != 8 * n_params:
            _fail(f"blob has {remaining} bytes, expected {8 * n_params}")
        try:
            params = _build(stored_dims, d, k, arch, rng=None)
        except (KeyError, ContractViolation) as exc:
            _fail(f"invalid architecture in header: {exc!r}")
        if [p.shape for p in params.parameters()] != shapes:
            _fail("parameter shapes do not match the stored architecture")
        blob = np.frombuffer(fh.read(8 * n_params), dtype="<f8")
    offset = 0
    for p in params.parameters():
        p[...] = blob[offset: offset + p.size].reshape(p.shape)
        offset += p.size
    return params, header
