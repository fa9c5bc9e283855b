"""Numerics for the space-time fractional stochastic heat equation."""

__version__ = "0.1.0"
