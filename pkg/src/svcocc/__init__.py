"""Spatially-varying coefficient occupancy models.

Bayesian single-species and multi-species occupancy models whose
regression effects may vary smoothly over space, fitted by Polya-Gamma
augmented Gibbs samplers with sparse nearest-neighbor Gaussian process
priors. Includes a simulation harness, posterior prediction, and model
comparison metrics (WAIC, cross-validation deviance, AUC, R-hat/ESS).
"""

__version__ = "0.1.0"
