"""Exact moments and Monte Carlo laboratory for restricted sums of random multiplicative functions."""

__version__ = "0.1.0"
