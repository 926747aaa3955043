"""Constrained unsupervised text attribute transfer with cooperative latent losses."""

__version__ = "0.1.0"
