"""
Teacher-student recovery at desk scale
======================================

A fixed aggregate of material points (the teacher) generates stress data
for Gaussian-process strain paths; a small PRNN3 student learns it.

Raise the path counts to 192/200 and the sizes to 44+11 for the full
experiment (about 15 minutes on one core).
"""

import numpy as np

from prnn.loadpaths import GpConfig, gp_samples
from prnn.network import LayerSizes
from prnn.oracle import gen_dataset, teacher_build
from prnn.training import TrainConfig, evaluate, train

teacher = teacher_build()
print("teacher", teacher.hash()[:12], f"{teacher.n_bulk}+{teacher.n_cohesive} points")

train_set = gen_dataset(gp_samples(GpConfig(rng_seed=1), 32), teacher)
val_set = gen_dataset(gp_samples(GpConfig(rng_seed=100_000), 16), teacher)
test_set = gen_dataset(gp_samples(GpConfig(rng_seed=200_000), 16), teacher)
std = np.concatenate(train_set.stresses).std()

ck, history = train(train_set, val_set, TrainConfig(max_epochs=20), "prnn3", LayerSizes(8, 2))
for row in history[::5]:
    print(f"epoch {row['epoch']:3d}  train {row['train_mse']:10.3f}  val {row['val_mse']:10.3f}")

report, _ = evaluate(ck.params, test_set.strains, test_set.stresses)
print(f"test rmse {report.rmse:.2f} MPa = {report.rmse / std:.1%} of the stress std")
