"""Bootstrapped minimum robust semi-constrained Wasserstein-2 inference."""
__version__ = "0.1.0"
