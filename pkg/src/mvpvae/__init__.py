"""Multi-view permutation VAE for incomplete multi-view data."""

__version__ = "0.1.0"
