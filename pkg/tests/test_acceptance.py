"""Acceptance suite: one test (or a small group) per numbered criterion.

Each test records a ``PASS``/``FAIL criterion N: ...`` line, listed together
at the end of the pytest run. Criteria 8 and 9 train full-size models and
take roughly 4 minutes per run on one CPU core.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from mvpvae.cli import gradcheck_toy, write_ablation_csv
from mvpvae.dataset import (
    build_fingerprint,
    gen_masks,
    gen_synthetic,
    read_fingerprint,
    write_fingerprint,
)
from mvpvae.divergence import permutation_divergence, symmetric_permutation_divergence
from mvpvae.evaluation import cluster_dataset, imputation_report
from mvpvae.gaussian import DiagonalGaussian, geometric_mean_fusion, kl_divergence
from mvpvae.latent import LatentMatrix, single_view_cell
from mvpvae.neural import DenseNet
from mvpvae.objective import elbo_combined
from mvpvae.permutation import is_cyclic, make_bundle, sattolo
from mvpvae.rng import ScriptedChoices, Xoshiro256
from mvpvae.trainer import TrainConfig, train


def G(mean, log_var):
    return DiagonalGaussian(np.atleast_1d(mean), np.atleast_1d(log_var))


def random_tuple(rng, n, dim):
    return [G(rng.normal(size=dim), rng.normal(scale=0.7, size=dim)) for _ in range(n)]


# ---------------------------------------------------------------------------
# 1. dissimilarity-coefficient axioms


def test_criterion_1_dissimilarity_axioms(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240501)
    xr = Xoshiro256(20240501)
    worst_neg, worst_equal, worst_conj = 0.0, 0.0, 0.0
    min_distinct = math.inf
    for trial in range(1000):
        n, dim = int(rng.integers(2, 7)), int(rng.integers(1, 9))
        sigma = sattolo(n, xr)
        kind = trial % 3
        if kind == 0:  # all members fieldwise equal
            ps = [random_tuple(rng, 1, dim)[0]] * n
        elif kind == 1:  # all distinct
            ps = random_tuple(rng, n, dim)
        else:  # some repeated members, not all equal
            base = random_tuple(rng, n, dim)
            idx = rng.integers(0, n, size=n)
            if (idx == idx[0]).all():
                idx[0] = (idx[0] + 1) % n
            ps = [base[i] for i in idx]
        d = permutation_divergence(ps, sigma).total
        worst_neg = min(worst_neg, d)
        all_equal = all(p == ps[0] for p in ps)
        if all_equal:
            worst_equal = max(worst_equal, abs(d))
        else:
            min_distinct = min(min_distinct, d)
        phi = rng.permutation(n) + 1
        phi_inv = np.empty(n, dtype=int)
        phi_inv[phi - 1] = np.arange(1, n + 1)
        ps_phi = [ps[phi[i] - 1] for i in range(n)]
        conj = [int(phi_inv[sigma(int(phi[i])) - 1]) for i in range(n)]
        worst_conj = max(worst_conj, abs(permutation_divergence(ps_phi, conj).total - d))
    elapsed = time.perf_counter() - t0
    ok = (worst_neg >= -1e-12 and worst_equal <= 1e-9 and min_distinct > 1e-9
          and worst_conj <= 1e-10 and elapsed < 10)
    criterion(1, ok, f"min d={worst_neg:.2e}, max |d| on equal tuples={worst_equal:.1e}, "
                     f"min d on unequal={min_distinct:.2e}, conj err={worst_conj:.1e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Sattolo correctness


def test_criterion_2_sattolo_draws_and_enumeration(criterion):
    t0 = time.perf_counter()
    rng = Xoshiro256(7)
    bad = 0
    for n in range(2, 8):
        full = set(range(1, n + 1))
        for _ in range(10_000):
            bad += not is_cyclic(sattolo(n, rng).map, full)
    # every swap sequence for n=4: below(3), below(2), below(1) in call order
    outputs = {
        sattolo(4, ScriptedChoices(c)).map
        for c in itertools.product(range(3), range(2), range(1))
    }
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and len(outputs) == 6 and elapsed < 5
    criterion(2, ok, f"{bad} non-cyclic draws in 6x10^4, {len(outputs)} distinct outputs for n=4, {elapsed:.1f}s")


def test_criterion_2_trace_cycle(criterion):
    # swaps 3, 1, 2, 1 in 1-based slots are below() results 2, 0, 1, 0
    p = sattolo(5, ScriptedChoices([2, 0, 1, 0]))
    seq, cur = [1], p(1)
    while cur != 1:
        seq.append(cur)
        cur = p(cur)
    criterion(2, seq == [1, 5, 3, 2, 4], f"traced cycle {'->'.join(map(str, seq + [1]))}, map {list(p.map)}")


def test_criterion_2_trace_map_listing(criterion):
    # The required listing [5,1,2,4,3] is not the map of the cycle
    # 1->5->3->2->4->1 (that map is [5,4,2,1,3]); kept as stated.
    p = sattolo(5, ScriptedChoices([2, 0, 1, 0]))
    criterion(2, list(p.map) == [5, 1, 2, 4, 3], f"map {list(p.map)} vs required [5, 1, 2, 4, 3]")


# ---------------------------------------------------------------------------
# 3. fusion oracle


def test_criterion_3_fusion_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    x = np.linspace(-12.0, 12.0, 100_000)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 6))
        means = rng.uniform(-3, 3, size=m)
        log_vars = rng.uniform(-1.0, 1.5, size=m)
        fused = geometric_mean_fusion([G(mu, lv) for mu, lv in zip(means, log_vars)], 1)
        logd = sum(-0.5 * (x - mu) ** 2 / math.exp(lv) for mu, lv in zip(means, log_vars))
        w = np.exp(logd - logd.max())
        w /= integrate.trapezoid(w, x)
        mean = integrate.trapezoid(w * x, x)
        var = integrate.trapezoid(w * (x - mean) ** 2, x)
        worst = max(worst, abs(fused.mean[0] - mean), abs(fused.var[0] - var))
    elapsed = time.perf_counter() - t0
    criterion(3, worst < 1e-6 and elapsed < 10, f"max abs error {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. KL oracle


def test_criterion_4_kl_oracle(criterion):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        m1, m2 = rng.uniform(-3, 3, size=2)
        v1, v2 = np.exp(rng.uniform(-1.5, 1.5, size=2))
        p, q = stats.norm(m1, math.sqrt(v1)), stats.norm(m2, math.sqrt(v2))
        lo = min(m1 - 12 * math.sqrt(v1), m2 - 12 * math.sqrt(v2))
        hi = max(m1 + 12 * math.sqrt(v1), m2 + 12 * math.sqrt(v2))
        ref, _ = integrate.quad(lambda t: p.pdf(t) * (p.logpdf(t) - q.logpdf(t)), lo, hi,
                                epsabs=1e-12, epsrel=1e-12, limit=200, points=[m1, m2])
        worst = max(worst, abs(kl_divergence(G(m1, math.log(v1)), G(m2, math.log(v2))) - ref))
    chain = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 9))
        a = G(rng.normal(size=dim), rng.normal(size=dim))
        b = G(rng.normal(size=dim), rng.normal(size=dim))
        parts = math.fsum(kl_divergence(G(a.mean[j], a.log_var[j]), G(b.mean[j], b.log_var[j])) for j in range(dim))
        chain = max(chain, abs(kl_divergence(a, b) - parts))
    criterion(4, worst < 1e-6 and chain < 1e-10, f"quadrature error {worst:.2e}, chain-rule error {chain:.1e}")


# ---------------------------------------------------------------------------
# 5. regularizer code-path equivalence


def test_criterion_5_regularizer_equivalence(criterion):
    rng = np.random.default_rng(5)
    xr = Xoshiro256(5)
    worst = 0.0
    for _ in range(200):
        L = int(rng.integers(2, 6))
        observed = {v for v in range(1, L + 1) if rng.random() < 0.6} or {int(rng.integers(1, L + 1))}
        d = int(rng.integers(1, 5))
        entries = {
            (v, l): G(rng.normal(size=d), rng.normal(scale=0.5, size=d))
            for v in observed for l in range(1, L + 1)
        }
        z0 = LatentMatrix(entries, frozenset(observed), L, d)
        bundle = make_bundle(L, observed, xr)
        decs = [DenseNet.mlp(1 + d, (), 1, rng=None) for _ in range(L)]
        res = elbo_combined([np.zeros(1)] * L, z0, bundle, decs, 1)
        obs = sorted(observed)
        pos = {v: i + 1 for i, v in enumerate(obs)}
        sym = 0.0
        for l in range(1, L + 1):
            sigma = [pos[bundle[l](v)] for v in obs]
            sym += symmetric_permutation_divergence(single_view_cell(z0, l), sigma).total
        worst = max(worst, abs(res.kl_z - 0.5 * sym))
    criterion(5, worst <= 1e-12, f"max |kl_z - half symmetric divergence| = {worst:.1e} over 200 cases")


# ---------------------------------------------------------------------------
# 6. end-to-end gradient check


def test_criterion_6_gradient_check(criterion):
    t0 = time.perf_counter()
    rep = gradcheck_toy(d=4, k=2, views=2, seed=0, hidden=8)
    elapsed = time.perf_counter() - t0
    ok = rep.max_rel_error < 1e-4 and elapsed < 30
    criterion(6, ok, f"max relative error {rep.max_rel_error:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 7. mask / fingerprint contract


def test_criterion_7_masks_and_fingerprints(criterion, tmp_path):
    problems = []
    for eta in (0.1, 0.3, 0.5, 0.7):
        masks = gen_masks(1000, 5, eta, 11)
        incomplete = ~masks.all(axis=1)
        if incomplete.sum() != math.floor(eta * 1000 + 1e-9):
            problems.append(f"eta={eta}: {incomplete.sum()} incomplete rows")
        if not masks.any(axis=1).all():
            problems.append(f"eta={eta}: empty mask")
        fp = build_fingerprint(masks, 11, eta=eta)
        for i in range(fp.N):
            obs = fp.observed(i)
            for bundle in fp.bundles[i]:
                if not all(is_cyclic(m, obs) for m in bundle.as_lists()):
                    problems.append(f"eta={eta}: sample {i} non-cyclic")
        a, b = tmp_path / f"a{eta}.jsonl", tmp_path / f"b{eta}.jsonl"
        write_fingerprint(fp, a)
        write_fingerprint(read_fingerprint(a), b)
        if a.read_bytes() != b.read_bytes():
            problems.append(f"eta={eta}: round trip differs")
    criterion(7, not problems, "; ".join(problems) or "counts exact, masks valid, bundles cyclic, round trip byte-identical")


# ---------------------------------------------------------------------------
# 8 and 9. calibrated training runs on the synthetic benchmark


@pytest.fixture(scope="module")
def benchmark():
    ds = gen_synthetic(600, 3, 3, 10, seed=0)
    fp = build_fingerprint(gen_masks(600, 3, 0.5, 0), 0, eta=0.5)
    return ds, fp


@pytest.fixture(scope="module")
def cyclic_seed0(benchmark):
    ds, fp = benchmark
    t0 = time.perf_counter()
    params, log = train(ds, fp, TrainConfig(seed=0))
    masked = ds.with_masks(fp.masks)
    report = cluster_dataset(masked, params, 3, seed=0)
    imputation = imputation_report(masked, params)
    return params, log, report, imputation, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_8_synthetic_benchmark(criterion, cyclic_seed0):
    _, log, report, imp, elapsed = cyclic_seed0
    first, last = log[0].recon_loss, log[-1].recon_loss
    ok = (last < 0.5 * first and report.acc >= 0.90 and report.nmi >= 0.70
          and imp["model_mse"] < imp["baseline_mse"] and elapsed < 300)
    criterion(8, ok, f"recon {first:.3f} -> {last:.3f}, ACC {report.acc:.3f}, NMI {report.nmi:.3f}, "
                     f"MSE {imp['model_mse']:.4f} vs baseline {imp['baseline_mse']:.4f}, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_9_ablation_ordering(criterion, benchmark, cyclic_seed0, tmp_path):
    ds, fp = benchmark
    masked = ds.with_masks(fp.masks)
    seeds = range(5)
    results = {}
    for mode in ("cyclic", "standard_normal", "random_perm"):
        results[mode] = []
        for seed in seeds:
            if mode == "cyclic" and seed == 0:
                results[mode].append(cyclic_seed0[2])
                continue
            params, _ = train(ds, fp, TrainConfig(seed=seed, prior_mode=mode))
            results[mode].append(cluster_dataset(masked, params, 3, seed=seed))
    path = tmp_path / "ablation.csv"
    write_ablation_csv(path, results)
    header = path.read_text().splitlines()[0]
    mean = {m: float(np.mean([r.acc for r in rs])) for m, rs in results.items()}
    ok = (mean["cyclic"] >= mean["standard_normal"] and mean["cyclic"] >= mean["random_perm"]
          and header == "Model,Reconstruction,Regularization,ACC,NMI,ARI")
    accs = {m: [round(r.acc, 3) for r in rs] for m, rs in results.items()}
    criterion(9, ok, "mean ACC " + ", ".join(f"{m} {v:.3f}" for m, v in mean.items()) + f"; per seed {accs}")


@pytest.mark.skip(reason="optional data-dependent criterion; needs the public Handwritten CSV export")
def test_criterion_10_handwritten():
    pass
