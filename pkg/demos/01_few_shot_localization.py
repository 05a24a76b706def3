"""Few-shot localization in an unseen environment.

Four simulated environments provide training tasks; the fifth is new.  We
meta-learn prior particles on the four, adapt them with 30 labelled
fingerprints from the new environment, and compare the ensemble error with
a nearest-neighbour lookup on the same 30 samples.

Run:  python3 demos/01_few_shot_localization.py   (about a minute)
"""

import numpy as np

from pacmeta import envsim
from pacmeta.baselines import knn_predict
from pacmeta.experiment import synthetic_meta_config
from pacmeta.net import Architecture
from pacmeta.pipeline import TaskPool, evaluate, fine_tune, meta_train
from pacmeta.prob import spawn

SEED = 0
HELD_OUT = 4

# Five "days" of the same room.  Geometry is shared; multipath, per-anchor
# offsets and shadowing differ from day to day.
suite = envsim.make_suite(5)
rng = spawn(SEED, 100)
train_envs = [i for i in range(len(suite)) if i != HELD_OUT]
pool = TaskPool([suite.sample_task(train_envs[i % 4], 50, rng) for i in range(100)])
s0 = suite.sample_task(HELD_OUT, 30, rng)  # few-shot set in the new environment
s_test = suite.sample_task(HELD_OUT, 50, rng)

arch = Architecture(suite.feature_dim)
cfg = synthetic_meta_config(seed=SEED, max_iters=300)
print(f"network with {arch.param_count} weights; {cfg.K} prior particles")


def progress(step, pset, tasks):
    r = evaluate(arch, pset, s_test, cfg.n_networks, cfg.seed)
    print(f"  meta-iteration {step:4d}: zero-shot error {r.mean_error:.2f} m")


print("meta-training on the four known environments ...")
cfg = cfg.resolved(len(pool))
particles = meta_train(cfg, pool, arch, callback=progress)

print("adapting to the new environment with 30 samples ...")
tuned = fine_tune(particles, s0, cfg, arch)
report = evaluate(arch, tuned, s_test, cfg.n_networks, cfg.seed)

knn = knn_predict(s0, s_test.X, 3)
knn_error = np.linalg.norm(knn - s_test.Y, axis=1).mean()

print(f"meta-learned ensemble: {report.mean_error:.2f} m "
      f"(std {report.std_error:.2f} m, predictive spread {report.mean_uncertainty:.2f} m)")
print(f"3-NN on the same 30 samples: {knn_error:.2f} m")
