"""Nuclear-norm regularized ERM for domain generalization: samplers, linear
models, trainers, Monte-Carlo verification and experiment recipes."""

__version__ = "0.1.0"
