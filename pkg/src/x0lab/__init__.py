"""Parameterizations, loss weightings, samplers and convergence metrics for diffusion and flow models."""

__version__ = "0.1.0"
