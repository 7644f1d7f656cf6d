"""Stochastic pruning masks, PAC-Bayes self-bounded pruning and linear-model analytics."""

__version__ = "0.1.0"
