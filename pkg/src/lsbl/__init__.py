"""Learned sparse Bayesian learning: SBL solvers, baselines and an unrolled, trainable network."""

__version__ = "0.1.0"
