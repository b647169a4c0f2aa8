"""
Training loop: warm-up on the basic ELBO, then the combined ELBO.

Every mini-batch draws fresh reparameterisation noise; every sample uses the
permutation bundle ``epoch % pool`` from its fingerprint, so the column
permutations it sees change from epoch to epoch while staying fixed in
advance.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractViolation, NumericalAbort
from .model import init_model, loss_and_grad
from .neural import AdamState, adam_step
from .objective import PRIOR_MODES, ObjectiveConfig, random_bundle


@dataclass
class TrainConfig:
    d: int = 16
    k: int = None  # defaults to d
    beta_z: float = 5.0
    beta_omega: float = 2.5
    warmup_epochs: int = 100
    epochs: int = 300
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    prior_mode: str = "cyclic"
    enc_hidden: tuple = (256, 256, 1024)
    corr_hidden: tuple = (128, 256, 128)
    dec_hidden: tuple = None  # mirrors enc_hidden
    beta_in_warmup: bool = True

    def __post_init__(self):
        if self.k is None:
            self.k = self.d
        self.enc_hidden = tuple(int(h) for h in self.enc_hidden)
        self.corr_hidden = tuple(int(h) for h in self.corr_hidden)
        if self.dec_hidden is not None:
            self.dec_hidden = tuple(int(h) for h in self.dec_hidden)
        self.validate()

    def validate(self):
        if self.d < 1 or not 1 <= self.k <= self.d:
            raise ContractViolation(f"need 1 <= k <= d, got d={self.d}, k={self.k}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ContractViolation("epochs and warmup_epochs must be >= 0")
        # epochs == 0 is allowed with any warm-up length: nothing is trained
        if self.epochs > 0 and self.warmup_epochs > self.epochs:
            raise ContractViolation(
                f"warmup_epochs ({self.warmup_epochs}) exceeds epochs ({self.epochs})"
            )
        if self.batch_size < 1:
            raise ContractViolation(f"batch_size must be >= 1, got {self.batch_size}")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ContractViolation(f"lr must be > 0, got {self.lr}")
        if self.prior_mode not in PRIOR_MODES:
            raise ContractViolation(f"unknown prior mode {self.prior_mode!r}; choose from {PRIOR_MODES}")
        ObjectiveConfig(self.beta_z, self.beta_omega, self.prior_mode)

    def objective(self, phase):
        if phase == "warmup" and not self.beta_in_warmup:
            return ObjectiveConfig(1.0, 1.0, self.prior_mode)
        return ObjectiveConfig(self.beta_z, self.beta_omega, self.prior_mode)

    def as_dict(self):
        out = asdict(self)
        for key in ("enc_hidden", "corr_hidden", "dec_hidden"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpochRecord:
    epoch: int  # 1-based
    phase: str  # "warmup" or "main"
    recon_loss: float  # negative log-likelihood, averaged over samples
    kl_z: float
    kl_omega: float
    total: float

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def phase_changes(self):
        """Epochs (1-based) at which the phase label differs from the previous epoch."""
        return [b.epoch for a, b in zip(self.records, self.records[1:]) if a.phase != b.phase]

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in self.records:
                fh.write(json.dumps(r.as_dict()) + "\n")


def model_for(dataset, config):
    return init_model(
        dataset.view_dims, config.d, config.k, config.enc_hidden, config.corr_hidden,
        config.dec_hidden, seed=config.seed,
    )


def _random_perms(fp, idx, rng):
    out = np.empty((len(idx), fp.L, fp.L), dtype=np.int64)
    for b, i in enumerate(idx):
        out[b] = np.asarray(random_bundle(fp.L, fp.observed(int(i)), rng)) - 1
    return out


def _check_finite(res, epoch, step):
    br = res.breakdown
    for term, value in (("recon", br.recon), ("kl_z", br.kl_z), ("kl_omega", br.kl_omega), ("total", br.total)):
        if not np.isfinite(value):
            raise NumericalAbort(term, epoch, step)


def train(dataset, fingerprint, config=None, params=None, callback=None):
    """Fit the model; returns ``(params, TrainingLog)``.

    The fingerprint's masks decide which views are available; feature
    content at missing positions is zeroed before training and never read.
    ``callback(record)`` is called after every epoch.
    """
    config = config or TrainConfig()
    config.validate()
    if fingerprint.N != dataset.N or fingerprint.L != dataset.L:
        raise ContractViolation(
            f"fingerprint covers {fingerprint.N} samples x {fingerprint.L} views, "
            f"dataset has {dataset.N} x {dataset.L}"
        )
    data = dataset.with_masks(fingerprint.masks)
    xs = data.masked_views()
    mask = data.masks
    if params is None:
        params = model_for(dataset, config)
    rng = np.random.default_rng([config.seed, 1])
    opt = AdamState(lr=config.lr)
    weights = params.parameters()
    log = TrainingLog()
    N, L, d, k = data.N, data.L, config.d, config.k
    step = 0
    for epoch in range(config.epochs):
        phase = "warmup" if epoch < config.warmup_epochs else "main"
        variant = "basic" if phase == "warmup" else "combined"
        obj = config.objective(phase)
        order = rng.permutation(N)
        sums = np.zeros(3)
        for start in range(0, N, config.batch_size):
            idx = order[start: start + config.batch_size]
            if config.prior_mode == "random_perm":
                perms = _random_perms(fingerprint, idx, rng)
            else:
                perms = fingerprint.perms_array(idx, epoch)
            eps_z = rng.standard_normal((idx.size, L, d))
            eps_w = rng.standard_normal((idx.size, L, k))
            res = loss_and_grad(
                params, [x[idx] for x in xs], mask[idx], perms, eps_z, eps_w, obj, variant
            )
            _check_finite(res, epoch + 1, step)
            adam_step(weights, params.grads(), opt)
            step += 1
            ps = res.per_sample
            sums += [ps["recon"].sum(), ps["kl_z"].sum(), ps["kl_omega"].sum()]
        recon, kz, kw = sums / N
        rec = EpochRecord(
            epoch + 1, phase, float(-recon), float(kz), float(kw),
            float(-recon + obj.beta_z * kz + obj.beta_omega * kw),
        )
        log.records.append(rec)
        if callback is not None:
            callback(rec)
    return params, log
