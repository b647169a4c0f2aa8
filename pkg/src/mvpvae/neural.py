"""
Small dense networks with hand-written reverse-mode gradients.

Each net owns its parameter arrays and a parallel set of gradient buffers.
``forward`` returns the output together with a cache; ``backward`` consumes
that cache, *accumulates* parameter gradients into the buffers and returns
the gradient with respect to the input. Accumulation is what lets one net
be applied several times per step (correspondences act on both the mean and
the log-variance) and still end up with the total gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "linear")
LEAKY_SLOPE = 0.01


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "leaky_relu":
        return g * np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


class Dense:
    """Affine map followed by an elementwise activation; ``W`` is (in, out)."""

    def __init__(self, n_in, n_out, activation="linear", rng=None):
        if activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {activation!r}")
        self.activation = activation
        if rng is None:
            self.W = np.zeros((n_in, n_out))
        elif activation in ("relu", "leaky_relu"):
            # He-uniform
            lim = np.sqrt(6.0 / n_in)
            self.W = rng.uniform(-lim, lim, size=(n_in, n_out))
        else:
            # Xavier-uniform
            lim = np.sqrt(6.0 / (n_in + n_out))
            self.W = rng.uniform(-lim, lim, size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)

    @property
    def in_dim(self):
        return self.W.shape[0]

    @property
    def out_dim(self):
        return self.W.shape[1]

    def forward(self, x):
        z = x @ self.W + self.b
        a = _act(self.activation, z)
        return a, (x, z, a)

    def backward(self, cache, g):
        x, z, a = cache
        gz = _act_grad(self.activation, z, a, g)
        self.gW += x.T @ gz
        self.gb += gz.sum(axis=0)
        return gz @ self.W.T

    def parameters(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]


class DenseNet:
    """Chain of ``Dense`` layers.

    Parameters
    ----------
    sizes : sequence of int
        ``[in_dim, hidden..., out_dim]``. A single entry gives the identity
        map on that dimension (no layers).
    activations : sequence of str
        One tag per layer, from ``ACTIVATIONS``.
    rng : numpy.random.Generator, optional
        Used for He/Xavier initialisation; ``None`` leaves weights at zero.
    """

    def __init__(self, sizes, activations, rng=None):
        sizes = [int(s) for s in sizes]
        if len(activations) != len(sizes) - 1:
            raise ContractViolation("need one activation per layer")
        self._dim = sizes[0]
        self.layers = [
            Dense(n_in, n_out, act, rng)
            for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations)
        ]

    @classmethod
    def mlp(cls, in_dim, hidden, out_dim, hidden_act="relu", out_act="linear", rng=None):
        sizes = [in_dim, *hidden, out_dim]
        acts = [hidden_act] * len(hidden) + [out_act]
        return cls(sizes, acts, rng)

    @classmethod
    def identity(cls, dim):
        """Single linear layer initialised to the identity map."""
        net = cls([dim, dim], ["linear"])
        net.layers[0].W[...] = np.eye(dim)
        return net

    @property
    def in_dim(self):
        return self.layers[0].in_dim if self.layers else self._dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim if self.layers else self._dim

    @property
    def architecture(self):
        return {
            "sizes": [self.in_dim] + [layer.out_dim for layer in self.layers],
            "activations": [layer.activation for layer in self.layers],
        }

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.in_dim:
            raise ContractViolation(f"input has dim {x.shape[-1]}, net expects {self.in_dim}")
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, g):
        if cache is None:
            raise ContractViolation("backward called without a forward cache")
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            g = layer.backward(c, g)
        return g

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def zero_grad(self):
        for g in self.grads():
            g[...] = 0.0


class EncoderNet:
    """ReLU trunk with separate affine heads for the mean and log-variance."""

    def __init__(self, in_dim, hidden, latent_dim, rng=None):
        self.trunk = DenseNet([in_dim, *hidden], ["relu"] * len(hidden), rng)
        width = hidden[-1] if hidden else in_dim
        self.mu_head = Dense(width, latent_dim, "linear", rng)
        self.logvar_head = Dense(width, latent_dim, "linear", rng)

    @property
    def in_dim(self):
        return self.trunk.in_dim

    @property
    def latent_dim(self):
        return self.mu_head.out_dim

    @property
    def architecture(self):
        return {"trunk": self.trunk.architecture, "latent_dim": self.latent_dim}

    def forward(self, x):
        h, tcache = self.trunk.forward(x)
        mu, mcache = self.mu_head.forward(h)
        lv, lcache = self.logvar_head.forward(h)
        return mu, lv, (tcache, mcache, lcache)

    def backward(self, cache, g_mu, g_lv):
        if cache is None:
            raise ContractViolation("backward called without a forward cache")
        tcache, mcache, lcache = cache
        gh = self.mu_head.backward(mcache, g_mu) + self.logvar_head.backward(lcache, g_lv)
        return self.trunk.backward(tcache, gh)

    def parameters(self):
        return self.trunk.parameters() + self.mu_head.parameters() + self.logvar_head.parameters()

    def grads(self):
        return self.trunk.grads() + self.mu_head.grads() + self.logvar_head.grads()

    def zero_grad(self):
        for g in self.grads():
            g[...] = 0.0


def forward(net, x):
    """Functional form of ``net.forward``: returns ``(output, cache)``."""
    return net.forward(x)


def backward(net, cache, upstream):
    """Fresh parameter gradients and input gradient for one backward pass.

    Unlike ``net.backward`` this does not touch the net's accumulated
    buffers (they are saved and restored around the call).
    """
    saved = [g.copy() for g in net.grads()]
    net.zero_grad()
    gx = net.backward(cache, upstream)
    grads = [g.copy() for g in net.grads()]
    for g, s in zip(net.grads(), saved):
        g[...] = s
    return grads, gx


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    scratch: list = field(default_factory=list, repr=False)


def adam_step(params, grads, state):
    """Bias-corrected Adam update applied in place to ``params``."""
    if len(params) != len(grads):
        raise ContractViolation(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        state.scratch = [np.empty_like(p) for p in params]
    if len(state.m) != len(params):
        raise ContractViolation("optimizer state does not match parameter list")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractViolation(f"shape mismatch: param {p.shape}, grad {g.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    # lr * (m / bc1) / (sqrt(v / bc2) + eps) rewritten with the corrections
    # folded into two scalars, which saves two passes over every array
    root = np.sqrt(bc2)
    step = state.lr * root / bc1
    eps = state.eps * root
    for p, g, m, v, tmp in zip(params, grads, state.m, state.v, state.scratch):
        np.multiply(g, 1.0 - state.beta1, out=tmp)
        m *= state.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - state.beta2
        v *= state.beta2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp += eps
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p -= tmp
    return params


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple  # (parameter name, flat index)
    per_param: dict
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def relative_error(analytic, numeric, floor=1e-8):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(loss_and_grad, params, h=1e-5, tolerance=1e-4, names=None, max_per_param=None, rng=None):
    """Compare analytic gradients against central differences.

    ``loss_and_grad()`` must read the current values of ``params`` (arrays
    are perturbed in place) and return ``(loss, grads)``. With
    ``max_per_param`` only that many randomly chosen entries per array are
    probed.
    """
    names = names or [f"param{i}" for i in range(len(params))]
    _, analytic = loss_and_grad()
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    per_param = {}
    worst = (None, None)
    worst_err = 0.0
    for name, p, ga in zip(names, params, analytic):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_per_param, replace=False)
        errs = []
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_and_grad()[0]
            flat[i] = orig - h
            lm = loss_and_grad()[0]
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            e = float(relative_error(ga.reshape(-1)[i], num))
            errs.append(e)
            if e > worst_err:
                worst_err, worst = e, (name, int(i))
        per_param[name] = max(errs) if errs else 0.0
    return GradCheckReport(worst_err, worst, per_param, tolerance)
