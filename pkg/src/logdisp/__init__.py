"""Simulation and large-deviation tools for the logarithmic Schrodinger
equation with white-noise dispersion."""

__version__ = "0.1.0"
