"""Budgeted Bayesian experimental design for targeted causal discovery."""

__version__ = "0.1.0"
