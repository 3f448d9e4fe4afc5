"""Spherical pixel embeddings with a differentiable mean-shift grouping module."""

__version__ = "0.1.0"
