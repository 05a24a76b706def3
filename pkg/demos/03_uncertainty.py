"""Does the ensemble know when it is wrong?

After meta-training and fine-tuning, each test point gets an error (distance
of the ensemble's predictions to the truth) and an uncertainty (spread of
the sampled networks).  We sort points by uncertainty and compare the error
of the most and least certain halves, then show how the spread responds to
the width of the weight distribution.

Run:  python3 demos/03_uncertainty.py   (about a minute)
"""

import numpy as np

from pacmeta import envsim
from pacmeta.experiment import ExperimentConfig, rotation_data, synthetic_meta_config
from pacmeta.net import Architecture
from pacmeta.pipeline import evaluate, fine_tune, meta_train
from pacmeta.prob import PriorParticle
from pacmeta.svgd import ParticleSet

suite = envsim.make_suite(5, los=False)  # the harder non-line-of-sight setting
cfg = synthetic_meta_config(seed=3, max_iters=300)
data = rotation_data(suite, 0, cfg, ExperimentConfig(test_size=200))
cfg = cfg.resolved(len(data.pool))
arch = Architecture(suite.feature_dim)

tuned = fine_tune(meta_train(cfg, data.pool, arch), data.s0, cfg, arch)
report = evaluate(arch, tuned, data.s_test, cfg.n_networks, cfg.seed)

order = np.argsort(report.per_point_uncertainty)
half = len(order) // 2
confident, doubtful = report.per_point_error[order[:half]], report.per_point_error[order[half:]]
ranks = [np.argsort(np.argsort(v)) for v in (report.per_point_uncertainty, report.per_point_error)]
rho = np.corrcoef(*ranks)[0, 1]
print(f"mean error {report.mean_error:.2f} m, mean uncertainty {report.mean_uncertainty:.2f} m")
print(f"most certain half: {confident.mean():.2f} m, least certain half: {doubtful.mean():.2f} m")
print(f"rank correlation between uncertainty and error: {rho:.2f}")

print("\nscaling every weight standard deviation of the tuned particles:")
for shift in (-3.0, -1.0, 0.0, 0.5):
    scaled = ParticleSet(tuple(PriorParticle(p.mu, p.log_sigma + shift) for p in tuned))
    r = evaluate(arch, scaled, data.s_test, cfg.n_networks, cfg.seed)
    print(f"  sigma x {np.exp(shift):6.3f}: error {r.mean_error:6.2f} m, uncertainty {r.mean_uncertainty:6.2f} m")
