"""Test error while fine-tuning: meta-learned priors, random priors and MAML.

One leave-one-environment-out rotation of the comparison experiment.  The
table shows held-out error every 20 fine-tuning steps for

* boml      -- particles meta-learned on the other environments,
* randinit  -- particles drawn from the hyper-prior, no meta-learning,
* maml      -- a first-order MAML initialisation fine-tuned by gradient descent.

Run:  python3 demos/02_fine_tuning_curves.py   (about two minutes)
"""

from pacmeta import envsim
from pacmeta.experiment import ExperimentConfig, run_experiment, synthetic_meta_config

ROTATION = 1

suite = envsim.make_suite(5)
exp = ExperimentConfig(methods=("boml", "randinit", "maml"), rotations=(ROTATION,))
result = run_experiment(synthetic_meta_config(seed=ROTATION), suite, exp=exp)

curves = {m: dict(result.curve(m, ROTATION)) for m in exp.methods}
print("step  " + "  ".join(f"{m:>9s}" for m in exp.methods))
for step in range(0, 201, 20):
    print(f"{step:4d}  " + "  ".join(f"{curves[m][step]:8.2f}m" for m in exp.methods))

for m in exp.methods:
    errors = list(curves[m].values())
    print(f"{m:9s} final error is {errors[-1] / min(errors) - 1:6.1%} above its best checkpoint")
