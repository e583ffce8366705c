"""Simulation and verification tools for gradient-type SDEs with decaying diffusivity."""

__version__ = "0.1.0"
