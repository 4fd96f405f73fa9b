"""Hybrid particle-graph / grid-convolution surrogate for Lagrangian fluid simulation."""

__version__ = "0.1.0"
