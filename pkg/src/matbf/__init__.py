"""Sequential Bayesian outlier detection for matrix-valued time series."""

__version__ = "0.1.0"
