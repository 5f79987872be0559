"""Discrete energy-based models trained with a learned local-search sampler."""

__version__ = "0.1.0"
