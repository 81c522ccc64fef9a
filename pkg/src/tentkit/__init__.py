"""Desk-scale laboratory for tent-space estimates of rough parabolic
operators on the torus: critical-exponent arithmetic, discrete function
space norms, divergence-form generators and their semigroups, Duhamel
solution operators, and scripted verification experiments."""

__version__ = "0.1.0"

from . import cauchy, exponents, funcspaces, grid, operator, spectral, verify
from .exponents import ExponentProfile, SpaceParams
from .grid import GridSpec, SpaceTimeField, SpatialField
from .verify import EquivalenceReport, ExperimentSpec

__all__ = [
    "EquivalenceReport", "ExperimentSpec", "ExponentProfile", "GridSpec",
    "SpaceParams", "SpaceTimeField", "SpatialField", "cauchy", "exponents",
    "funcspaces", "grid", "operator", "spectral", "verify", "__version__",
]
