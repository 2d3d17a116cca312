"""Bayesian joint models of longitudinal and survival outcomes with
time-varying association coefficients, penalized-spline smoothing, MCMC
estimation, dynamic individualized predictions and censoring-aware
predictive-accuracy metrics."""

__version__ = "0.1.0"
