"""Calculus via regularizations for window processes and path-dependent Kolmogorov equations."""

__version__ = "0.1.0"
