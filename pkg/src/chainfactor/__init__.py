"""Gibbs states of 1D spin chains, BS divergences, recovery maps and tomography."""

__version__ = "0.1.0"
