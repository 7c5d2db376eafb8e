"""Neutral point-vortex gas on the unit-area disk.

Closed-form disk kernels, a truncated Dirichlet-Laplacian eigenbasis,
canonical Gibbs sampling, Hamiltonian dynamics with conservation
diagnostics, fluctuation-field statistics, and spectral Gaussian-field
machinery (energy-enstrophy measure, regularized free field, chaos
integrals), plus a CLI harness for reproducible experiments.
"""

from vortexgas.geometry import RADIUS, DiskDomain

__all__ = ["RADIUS", "DiskDomain"]
__version__ = "0.1.0"
