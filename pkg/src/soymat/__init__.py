"""Soybean relative-maturity estimation from time series of UAV plot images."""

__version__ = "0.1.0"
