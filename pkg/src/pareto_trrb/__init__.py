"""Pareto fronts of PDE-constrained parameter optimization problems via a
hierarchical Pascoletti-Serafini method with a trust-region reduced-basis
solver."""

__version__ = "0.1.0"
