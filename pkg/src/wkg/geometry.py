"""
Hyperboloidal coordinates, the truncated foliation and smooth cutoffs.

All functions are pure and accept scalars or numpy arrays.  Points inside
the light cone are described by ``rho = sqrt(t**2 - r**2)`` and the
radial slope ``y = r / t``; ``q = r - t`` is the retarded coordinate.
The truncated slices follow the hyperboloid up to ``t - r = sqrt(r)``
and continue along the constant-time plane through the junction.
"""
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import DomainError

__all__ = [
    "HyperPoint", "FoliationSlice", "CutoffChi",
    "to_hyperboloidal", "from_hyperboloidal", "junction_radius",
    "foliation_junction", "slice_times", "smoothstep", "chi", "japanese",
    "rho_anchor", "SIGMA",
]

SIGMA = 0.5

# coefficients of the C^4 smoothstep x^5 (126 - 420x + 540x^2 - 315x^3 + 70x^4)
_STEP = np.array([0, 0, 0, 0, 0, 126, -420, 540, -315, 70], dtype=float)
_STEP_D = [_STEP]
for _k in range(4):
    _STEP_D.append(P.polyder(_STEP_D[-1]))


@dataclass(frozen=True)
class HyperPoint:
    t: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    y_abs: np.ndarray
    q: np.ndarray

    @property
    def defined(self):
        return np.isfinite(self.rho)


@dataclass(frozen=True)
class FoliationSlice:
    rho: float
    r_junction: float
    t_junction: float
    sigma: float = SIGMA


@dataclass(frozen=True)
class CutoffChi:
    s_one: float = 0.125
    s_zero: float = 0.25
    degree: int = 4

    def __call__(self, s, deriv=0):
        return chi(s, deriv)


def _finite(*args):
    for a in args:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite coordinate")


def to_hyperboloidal(t, r):
    """
    Map (t, r) to hyperboloidal data.

    Parameters
    ----------
    t, r : array_like
        Time and radius, ``t > 0`` and ``r >= 0``.

    Returns
    -------
    HyperPoint
        ``rho`` and ``y_abs`` are NaN where ``t <= r``.
    """
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    _finite(t, r)
    if np.any(t <= 0) or np.any(r < 0):
        raise DomainError("need t > 0 and r >= 0")
    inside = t > r
    rho = np.where(inside, np.sqrt(np.abs((t - r) * (t + r))), np.nan)
    y = np.where(inside, r / t, np.nan)
    return HyperPoint(t, r, rho, y, r - t)


def from_hyperboloidal(rho, y_abs):
    """Inverse of `to_hyperboloidal` inside the cone; returns (t, r)."""
    rho = np.asarray(rho, dtype=float)
    y = np.asarray(y_abs, dtype=float)
    _finite(rho, y)
    if np.any(rho <= 0) or np.any((y < 0) | (y >= 1)):
        raise DomainError("need rho > 0 and 0 <= y < 1")
    t = rho / np.sqrt((1 - y) * (1 + y))
    return t, y * t


def junction_radius(rho, tol=1e-13, maxiter=100):
    """
    Solve ``rho**2 = 2 r**1.5 + r`` for r (any rho > 0).

    Safeguarded Newton on s = sqrt(r), falling back to bisection whenever
    a step leaves the current bracket.
    """
    rho = np.asarray(rho, dtype=float)
    _finite(rho)
    if np.any(rho <= 0):
        raise DomainError("rho must be positive")
    target = rho * rho
    lo = np.zeros_like(target)
    hi = np.minimum(np.cbrt(target / 2), rho) + 1.0
    s = 0.5 * (lo + hi)
    for _ in range(maxiter):
        g = 2 * s**3 + s * s - target
        lo = np.where(g < 0, s, lo)
        hi = np.where(g > 0, s, hi)
        dg = 6 * s * s + 2 * s
        with np.errstate(divide="ignore", invalid="ignore"):
            s_new = s - g / dg
        bad = ~np.isfinite(s_new) | (s_new <= lo) | (s_new >= hi)
        s_new = np.where(bad, 0.5 * (lo + hi), s_new)
        done = np.abs(s_new - s) <= tol * np.maximum(s, 1.0)
        s = s_new
        if np.all(done):
            break
    return s * s


def foliation_junction(rho):
    """
    Junction of the truncated slice Sigma_rho.

    Parameters
    ----------
    rho : float
        Slice parameter, ``rho >= 2``.

    Returns
    -------
    FoliationSlice
    """
    rho = float(rho)
    if not np.isfinite(rho) or rho < 2:
        raise DomainError(f"rho={rho} < 2: slice not in the foliation")
    r = float(junction_radius(rho))
    return FoliationSlice(rho, r, r + np.sqrt(r))


def slice_times(rho, r):
    """
    Time coordinate of Sigma_rho above each radius.

    Returns ``(t, interior)`` with ``interior`` marking the hyperboloid
    part ``r <= r_junction``.
    """
    sl = foliation_junction(rho)
    r = np.asarray(r, dtype=float)
    interior = r <= sl.r_junction
    t = np.where(interior, np.sqrt(rho * rho + r * r), sl.t_junction)
    return t, interior


def smoothstep(x, deriv=0):
    """C^4 ramp from 0 (x <= 0) to 1 (x >= 1), or its derivatives."""
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, 0.0, 1.0)
    val = P.polyval(xc, _STEP_D[deriv])
    if deriv == 0:
        # the ramp is odd about 1/2; using 1 - S(1 - x) on the upper half
        # keeps the result in [0, 1] and monotone to the last bit
        val = np.where(xc > 0.5, 1.0 - P.polyval(1.0 - xc, _STEP_D[0]), val)
        return np.where(x >= 1, 1.0, np.where(x <= 0, 0.0, val))
    return np.where((x >= 1) | (x <= 0), 0.0, val)


def chi(s, deriv=0):
    """
    Cutoff equal to 1 for s <= 1/8 and 0 for s >= 1/4.

    The transition is the degree-9 polynomial with four continuous
    derivatives at both ends; ``deriv`` selects a derivative in s.
    """
    s = np.asarray(s, dtype=float)
    val = smoothstep(8.0 * (s - 0.125), deriv)
    if deriv == 0:
        return 1.0 - val
    return -(8.0**deriv) * val


def japanese(x):
    """<x> = sqrt(1 + x^2)."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + x * x)


def rho_anchor(y_abs):
    """Lower limit of phase integrals: the larger of 2 and the t - r = 1 surface."""
    y = np.asarray(y_abs, dtype=float)
    if np.any((y < 0) | (y >= 1)):
        raise DomainError("need 0 <= y < 1")
    return np.maximum(2.0, np.sqrt((1 + y) / (1 - y)))
