"""Exception types raised across the package."""


class WKGError(Exception):
    """Base class for all package errors."""


class DomainError(WKGError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ConfigError(WKGError, ValueError):
    """Inconsistent grid, configuration file or missing coverage."""


class RangeError(WKGError, ValueError):
    """Requested slice, ray or characteristic not covered by the data."""


class DataError(WKGError, ValueError):
    """Scattering data violating the required decay."""


class CapabilityError(WKGError, ValueError):
    """Request exceeding a documented capability (e.g. word length)."""


class PrecisionError(WKGError, RuntimeError):
    """Quadrature failed to reach the requested tolerance."""

    def __init__(self, msg, achieved=None):
        super().__init__(msg)
        self.achieved = achieved


class DivergenceError(WKGError, RuntimeError):
    """Numerical blow-up detected during time stepping."""

    def __init__(self, msg, time=None):
        super().__init__(msg)
        self.time = time
