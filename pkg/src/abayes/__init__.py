"""Approximate Bayesian inference: ABC, synthetic likelihood, variational Bayes,
pseudo-marginal MCMC and nested Laplace approximations behind one model interface."""

__version__ = "0.1.0"
