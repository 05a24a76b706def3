"""Bayesian meta-learning for few-shot indoor localization.

PAC-Bayesian hyper-posterior learning over Gaussian priors of a small
regression network, approximated with Stein variational gradient descent,
followed by few-shot fine-tuning and ensemble localization with
per-point uncertainty.
"""

from pacmeta.errors import ConfigError, DataError, InputError, NumericError
from pacmeta.net import Architecture, Task
from pacmeta.prob import HyperPrior, PriorParticle
from pacmeta.pacoh import TemperatureConfig
from pacmeta.svgd import ParticleSet
from pacmeta.pipeline import EvalReport, MetaConfig, evaluate, fine_tune, meta_train

__all__ = [
    "Architecture",
    "ConfigError",
    "DataError",
    "EvalReport",
    "HyperPrior",
    "InputError",
    "MetaConfig",
    "NumericError",
    "ParticleSet",
    "PriorParticle",
    "Task",
    "TemperatureConfig",
    "evaluate",
    "fine_tune",
    "meta_train",
]
