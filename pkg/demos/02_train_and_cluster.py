# coding: utf-8

# # Training on incomplete synthetic data
#
# Three clusters, three views, half the samples missing at least one view.
# Default layer widths with a shortened schedule, about a minute on one core.
# Much narrower encoders tend to collapse to a constant reconstruction on
# this data, so the widths are left alone.

import numpy as np

from mvpvae.dataset import build_fingerprint, gen_masks, gen_synthetic
from mvpvae.evaluation import cluster_dataset, imputation_report
from mvpvae.trainer import TrainConfig, train


ds = gen_synthetic(300, 3, 3, 10, seed=0)
masks = gen_masks(ds.N, ds.L, 0.5, seed=0)
fp = build_fingerprint(masks, seed=0, eta=0.5)
print(fp.summary())


# ## Train
#
# The first `warmup_epochs` use the basic objective, after which the average
# of the basic and the permuted objective takes over.

cfg = TrainConfig(epochs=100, warmup_epochs=30)
params, log = train(ds, fp, cfg, callback=lambda r: r.epoch % 10 or print(r.epoch, r.phase, round(r.recon_loss, 3)))
print("phase change at epoch", log.phase_changes())


# ## Cluster the consensus means and impute the missing views

masked = ds.with_masks(fp.masks)
report = cluster_dataset(masked, params, 3)
print("ACC %.3f  NMI %.3f  ARI %.3f" % (report.acc, report.nmi, report.ari))

imp = imputation_report(masked, params)
print("missing-view MSE: model %.4f, column means %.4f" % (imp["model_mse"], imp["baseline_mse"]))
