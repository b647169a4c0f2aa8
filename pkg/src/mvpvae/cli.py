"""
Command-line entry point: ``python -m mvpvae <command> ...``.

Every option may also come from a JSON file passed with ``--config``; flags
given on the command line override the file, and the file overrides the
built-in defaults. Exit codes: 0 success, 1 configuration or validation
error, 2 numerical abort during training, 3 gradient-check failure.
"""

import argparse
import csv
import json
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .dataset import (
    build_fingerprint,
    gen_masks,
    gen_synthetic,
    load_csv,
    read_fingerprint,
    write_csv,
    write_fingerprint,
)
from .errors import ContractViolation, NumericalAbort
from .evaluation import (
    cluster_dataset,
    config_digest,
    imputation_report,
    reconstruct_all,
    write_report,
)
from .model import init_model, load_checkpoint, loss_and_grad, save_checkpoint
from .neural import grad_check
from .objective import PRIOR_MODES, ObjectiveConfig
from .trainer import TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_NAN, EXIT_GRADCHECK = 0, 1, 2, 3

ABLATION_LABELS = {
    "cyclic": ("Cyclic Perm.", "Cyclic"),
    "standard_normal": ("Cyclic Perm.", "N(0,1)"),
    "fusion": ("Cyclic Perm.", "Fusion"),
    "diagonal": ("Cyclic Perm.", "Diagonal"),
    "random_perm": ("Random Perm.", "Random"),
}


class CliError(Exception):
    pass


def _int_list(text):
    return [int(x) for x in str(text).replace(" ", "").split(",") if x != ""]


# defaults per command; parser defaults are suppressed so that a missing flag
# can be told apart from one set to its default value
DEFAULTS = {
    "gen-data": {"n": 600, "clusters": 3, "views": 3, "dims": "10", "noise": 0.1, "seed": 0, "out": "data"},
    "gen-masks": {"data": "data", "eta": 0.5, "seed": 0, "pool": 8, "out": "fingerprint.jsonl"},
    "train": {
        "data": "data", "fingerprint": "fingerprint.jsonl", "d": 16, "k": None, "beta_z": 5.0,
        "beta_omega": 2.5, "warmup": 100, "epochs": 300, "batch": 64, "lr": 1e-3, "seed": 0,
        "prior_mode": "cyclic", "enc_hidden": "256,256,1024", "corr_hidden": "128,256,128",
        "eta": None, "out": "run",
    },
    "eval": {"checkpoint": "run/checkpoint.bin", "data": "data", "fingerprint": "fingerprint.jsonl",
             "labels": None, "clusters": None, "seed": 0, "out": "report.json"},
    "infer": {"checkpoint": "run/checkpoint.bin", "data": "data", "fingerprint": "fingerprint.jsonl",
              "out": "inferred"},
    "gradcheck": {"d": 4, "k": 2, "views": 2, "seed": 0, "hidden": 8, "tolerance": 1e-4},
    "ablate": {
        "data": "data", "fingerprint": "fingerprint.jsonl", "modes": ["cyclic", "standard_normal", "random_perm"],
        "seeds": [0], "d": 16, "k": None, "beta_z": 5.0, "beta_omega": 2.5, "warmup": 100, "epochs": 300,
        "batch": 64, "lr": 1e-3, "enc_hidden": "256,256,1024", "corr_hidden": "128,256,128",
        "clusters": None, "out": "ablation.csv",
    },
}


def build_parser():
    sup = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="mvpvae", description="Multi-view permutation VAE tools")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=sup)
        p.add_argument("--config", help="JSON file with option values (flags take precedence)")
        return p

    p = cmd("gen-data", "write a synthetic clustered multi-view dataset as CSV files")
    p.add_argument("--n", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--dims", help="one dim for all views or a comma list")
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = cmd("gen-masks", "draw missing-view masks and write the permutation fingerprint")
    p.add_argument("--data")
    p.add_argument("--eta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--pool", type=int, help="bundles stored per sample")
    p.add_argument("--out")

    def train_flags(p):
        p.add_argument("--data")
        p.add_argument("--fingerprint")
        p.add_argument("--d", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--beta-z", dest="beta_z", type=float)
        p.add_argument("--beta-omega", dest="beta_omega", type=float)
        p.add_argument("--warmup", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--enc-hidden", dest="enc_hidden")
        p.add_argument("--corr-hidden", dest="corr_hidden")

    p = cmd("train", "train a model and write checkpoint + log")
    train_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--prior-mode", dest="prior_mode", choices=PRIOR_MODES)
    p.add_argument("--eta", type=float, help="expected missing rate; the fingerprint's value wins")
    p.add_argument("--out")

    p = cmd("eval", "cluster consensus embeddings and report ACC/NMI/ARI")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--fingerprint")
    p.add_argument("--labels")
    p.add_argument("--clusters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = cmd("infer", "reconstruct every view of every sample")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--fingerprint")
    p.add_argument("--out")

    p = cmd("gradcheck", "finite-difference check of the full loss on a tiny model")
    p.add_argument("--d", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--tolerance", type=float)

    p = cmd("ablate", "train several prior modes over several seeds and tabulate clustering")
    train_flags(p)
    p.add_argument("--modes", nargs="+")
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--out")
    return parser


def resolve(args):
    """Merge defaults < config file < explicit flags."""
    command = args.command
    opts = dict(DEFAULTS[command])
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_opts = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_opts, dict):
            raise CliError("config file must hold a JSON object")
        file_opts = {k.replace("-", "_"): v for k, v in file_opts.items()}
        unknown = set(file_opts) - set(opts)
        if unknown:
            raise CliError(f"unknown option(s) in config file: {sorted(unknown)}")
        opts.update(file_opts)
    opts.update(given)
    return opts


def _write_manifest(out_dir, command, opts, files):
    manifest = {
        "command": command,
        "config": opts,
        "config_digest": config_digest(opts),
        "seed": opts.get("seed"),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "files": files,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _view_files(data_dir):
    files = []
    v = 1
    while os.path.exists(os.path.join(data_dir, f"view{v}.csv")):
        files.append(os.path.join(data_dir, f"view{v}.csv"))
        v += 1
    if len(files) < 2:
        raise CliError(f"{data_dir}: expected view1.csv, view2.csv, ...")
    return files


def _load_data(data_dir, labels=None):
    lab = labels if labels is not None else os.path.join(data_dir, "labels.csv")
    if labels is None and not os.path.exists(lab):
        lab = None
    return load_csv(_view_files(data_dir), lab)


def _load_fingerprint(path, dataset, eta=None):
    fp = read_fingerprint(path, expected_eta=eta)
    if fp.N != dataset.N or fp.L != dataset.L:
        raise CliError(f"fingerprint covers {fp.N} x {fp.L}, data is {dataset.N} x {dataset.L}")
    return fp


def _train_config(opts, seed, mode):
    return TrainConfig(
        d=opts["d"], k=opts["k"], beta_z=opts["beta_z"], beta_omega=opts["beta_omega"],
        warmup_epochs=opts["warmup"], epochs=opts["epochs"], batch_size=opts["batch"], lr=opts["lr"],
        seed=seed, prior_mode=mode, enc_hidden=_int_list(opts["enc_hidden"]),
        corr_hidden=_int_list(opts["corr_hidden"]),
    )


def cmd_gen_data(opts):
    if opts["views"] < 2:
        raise CliError(f"--views must be >= 2, got {opts['views']}")
    dims = _int_list(opts["dims"])
    dims = dims[0] if len(dims) == 1 else dims
    ds = gen_synthetic(opts["n"], opts["clusters"], opts["views"], dims, opts["noise"], opts["seed"])
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    files = []
    for v, x in enumerate(ds.views, start=1):
        path = os.path.join(out, f"view{v}.csv")
        write_csv(path, x)
        files.append(path)
    path = os.path.join(out, "labels.csv")
    write_csv(path, ds.labels[:, None], fmt="%d")
    files.append(path)
    _write_manifest(out, "gen-data", opts, files)
    print(f"wrote {ds.N} samples x {ds.L} views to {out}")
    return EXIT_OK


def cmd_gen_masks(opts):
    if not 0.0 <= opts["eta"] <= 1.0:
        raise CliError(f"--eta must be in [0, 1], got {opts['eta']}")
    ds = _load_data(opts["data"])
    masks = gen_masks(ds.N, ds.L, opts["eta"], opts["seed"])
    fp = build_fingerprint(masks, opts["seed"], opts["pool"], eta=opts["eta"])
    write_fingerprint(fp, opts["out"])
    print(json.dumps(fp.summary()))
    return EXIT_OK


def cmd_train(opts):
    ds = _load_data(opts["data"])
    fp = _load_fingerprint(opts["fingerprint"], ds, opts["eta"])
    cfg = _train_config(opts, opts["seed"], opts["prior_mode"])
    out = opts["out"]
    os.makedirs(out, exist_ok=True)

    def progress(rec):
        print(json.dumps(rec.as_dict()), flush=True)

    params, log = train(ds, fp, cfg, callback=progress)
    ckpt = os.path.join(out, "checkpoint.bin")
    save_checkpoint(params, ckpt, cfg.as_dict(), cfg.seed)
    log_path = os.path.join(out, "train_log.jsonl")
    log.write_jsonl(log_path)
    _write_manifest(out, "train", opts, [ckpt, log_path])
    return EXIT_OK


def cmd_eval(opts):
    ds = _load_data(opts["data"], opts["labels"])
    if ds.labels is None:
        raise CliError("no labels found; pass --labels")
    fp = _load_fingerprint(opts["fingerprint"], ds)
    params, header = load_checkpoint(opts["checkpoint"], ds.view_dims)
    report = cluster_dataset(ds.with_masks(fp.masks), params, opts["clusters"], opts["seed"])
    out = write_report(opts["out"], report, fp.eta, opts["seed"], header.get("config", {}))
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_infer(opts):
    ds = _load_data(opts["data"])
    fp = _load_fingerprint(opts["fingerprint"], ds)
    params, _ = load_checkpoint(opts["checkpoint"], ds.view_dims)
    masked = ds.with_masks(fp.masks)
    recon = reconstruct_all(masked, params)
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    for v, x in enumerate(recon, start=1):
        write_csv(os.path.join(out, f"recon_view{v}.csv"), x)
    rep = imputation_report(masked, params)
    rep["all_entries_mse_per_view"] = [float(np.mean((x - xh) ** 2)) for x, xh in zip(ds.views, recon)]
    with open(os.path.join(out, "mse.json"), "w", encoding="utf-8") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps({"model_mse": rep["model_mse"], "baseline_mse": rep["baseline_mse"]}))
    return EXIT_OK


def gradcheck_toy(d=4, k=2, views=2, seed=0, hidden=8, batch=3, tolerance=1e-4):
    """Finite-difference check of the combined loss on a small random model.

    The batch mixes complete and incomplete samples and the noise is frozen.
    Returns the ``GradCheckReport`` with parameter names attached.
    """
    if views < 2:
        raise ContractViolation("need at least 2 views")
    k = min(k, d)
    rng = np.random.default_rng(seed)
    dims = [3 + v for v in range(views)]
    params = init_model(dims, d, k, (hidden,), (hidden,), (hidden,), seed=seed)
    xs = [rng.normal(size=(batch, dv)) for dv in dims]
    mask = np.ones((batch, views), dtype=bool)
    if batch > 1:
        mask[1, 0] = False
    fp = build_fingerprint(mask, seed, pool=1)
    perms = fp.perms_array(range(batch))
    eps_z = rng.normal(size=(batch, views, d))
    eps_w = rng.normal(size=(batch, views, k))
    cfg = ObjectiveConfig()
    plist = params.parameters()
    names = [n for n, _ in params.named_parameters()]

    def f():
        res = loss_and_grad(params, xs, mask, perms, eps_z, eps_w, cfg, "combined")
        return res.breakdown.total, [g.copy() for g in params.grads()]

    return grad_check(f, plist, tolerance=tolerance, names=names)


def cmd_gradcheck(opts):
    rep = gradcheck_toy(opts["d"], opts["k"], opts["views"], opts["seed"], opts["hidden"],
                        tolerance=opts["tolerance"])
    print(f"max relative error {rep.max_rel_error:.3e} (tolerance {rep.tolerance:g})")
    if not rep.passed:
        name, idx = rep.worst
        print(f"gradient check failed; worst parameter {name}[{idx}]", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def _mean_sd(values):
    a = np.asarray(values, dtype=np.float64) * 100.0
    sd = a.std(ddof=1) if a.size > 1 else 0.0
    return f"{a.mean():.2f}±{sd:.2f}"


def run_ablation(dataset, fingerprint, modes, seeds, base_opts, n_clusters=None):
    """Train every (mode, seed) pair; returns per-mode lists of ClusterReports."""
    for m in modes:
        if m not in PRIOR_MODES:
            raise ContractViolation(f"unknown prior mode {m!r}; choose from {PRIOR_MODES}")
    results = {}
    masked = dataset.with_masks(fingerprint.masks)
    for mode in modes:
        results[mode] = []
        for seed in seeds:
            cfg = _train_config(base_opts, seed, mode)
            params, _ = train(dataset, fingerprint, cfg)
            results[mode].append(cluster_dataset(masked, params, n_clusters, seed))
    return results


def write_ablation_csv(path, results):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Model", "Reconstruction", "Regularization", "ACC", "NMI", "ARI"])
        for mode, reports in results.items():
            recon, reg = ABLATION_LABELS[mode]
            w.writerow([
                mode, recon, reg,
                _mean_sd([r.acc for r in reports]),
                _mean_sd([r.nmi for r in reports]),
                _mean_sd([r.ari for r in reports]),
            ])


def cmd_ablate(opts):
    ds = _load_data(opts["data"])
    if ds.labels is None:
        raise CliError("ablation needs labels.csv in the data directory")
    fp = _load_fingerprint(opts["fingerprint"], ds)
    results = run_ablation(ds, fp, opts["modes"], opts["seeds"], opts, opts["clusters"])
    write_ablation_csv(opts["out"], results)
    with open(opts["out"], encoding="utf-8") as fh:
        print(fh.read(), end="")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "gen-masks": cmd_gen_masks,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **kw: print(f"warning: {msg}", file=sys.stderr)
            return COMMANDS[args.command](opts)
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
