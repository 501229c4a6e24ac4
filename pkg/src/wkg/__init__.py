"""
Wave / Klein-Gordon system in 3+1 dimensions: forward evolution,
asymptotic profiles, scattering from prescribed data and the energy
diagnostics used to certify them.
"""
from . import diagnostics, evolve, geometry, profiles, scattering
from .errors import (CapabilityError, ConfigError, DataError, DivergenceError,
                     DomainError, PrecisionError, RangeError, WKGError)

__version__ = "0.1.0"

__all__ = [
    "geometry", "evolve", "profiles", "scattering", "diagnostics",
    "WKGError", "DomainError", "ConfigError", "RangeError", "DataError",
    "CapabilityError", "PrecisionError", "DivergenceError",
]
