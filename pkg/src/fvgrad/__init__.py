"""Differentiable structured-mesh finite-volume solver with trainable
residual corrections."""

__version__ = "0.1.0"
