"""Optimized coarse propagators for the parareal algorithm."""

__version__ = "0.1.0"
