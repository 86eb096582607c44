"""Numerical laboratory for the p-Laplace and evolutionary p-Laplace equations."""

__version__ = "0.1.0"
