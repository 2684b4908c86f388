"""Anomaly detection for multivariate RAN KPI time series with a transformer GAN."""

__version__ = "0.1.0"
