"""Numerical toolkit for harmonic maps between asymptotically hyperbolic slab models."""

from .errors import (AHError, CertificationError, ConfigError, ResolutionError,  # noqa: F401
                     SolverError)

__version__ = "0.1.0"
