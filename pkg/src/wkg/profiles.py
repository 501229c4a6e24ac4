"""
Asymptotic profiles of the wave / Klein-Gordon system.

The Klein-Gordon field is described on hyperboloids through
``Phi = rho**1.5 * phi`` and the pair ``Phi_pm = exp(-+ i rho)(d_rho Phi
+- i Phi)``; its scattering amplitude ``a_+(y)`` is read off after
removing the logarithmic phase ``int u d rho``.  The wave field has an
interior profile ``U(y) / rho`` given by a kernel integral of the
quadratic source density ``P(y)`` and a radiation field ``F(q)`` at null
infinity.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .diagnostics import RateFit, fit_rate
from .errors import DataError, DomainError, PrecisionError, RangeError
from .geometry import rho_anchor

__all__ = [
    "PhiPair", "KGProfile", "InteriorProfile", "RadiationField",
    "KernelParams", "PhaseFunction", "PhaseTable",
    "compute_Phi_pm", "accumulate_phase", "phase_table", "extract_a_pm",
    "eval_source_P", "compute_U_kernel", "u_tilde", "radiation_limit_A",
    "extract_radiation_field", "verify_kernel_lemma", "kernel_integral",
    "predicted_exponent", "write_profile_csv", "write_radiation_csv",
    "sample_kernel_params",
]


@dataclass
class PhiPair:
    rho: float
    y_grid: np.ndarray
    phi_plus: np.ndarray
    phi_minus: np.ndarray

    def reconstruct(self):
        """Phi = (e^{i rho} Phi_+ - e^{-i rho} Phi_-) / (2i)."""
        return (np.exp(1j * self.rho) * self.phi_plus
                - np.exp(-1j * self.rho) * self.phi_minus) / 2j


@dataclass
class KGProfile:
    y_grid: np.ndarray
    a_plus: np.ndarray
    a_minus: np.ndarray
    residual_rate: float = np.nan
    decay_order: float = np.nan
    converged: bool = True
    rho_list: tuple = ()
    residuals: np.ndarray = field(default=None, repr=False)


@dataclass
class InteriorProfile:
    y_grid: np.ndarray
    U: np.ndarray
    U_tilde: np.ndarray
    A: float

    def u_tilde_at(self, y):
        """Cubic interpolation of U_tilde (even in y)."""
        cs = CubicSpline(self.y_grid, self.U_tilde, bc_type=((1, 0.0), "not-a-knot"))
        return cs(np.asarray(y, dtype=float))


@dataclass
class RadiationField:
    q_grid: np.ndarray
    F: np.ndarray
    A_interior: float
    tail_rate: tuple = (np.nan, np.nan)
    correction: np.ndarray = field(default=None, repr=False)


@dataclass
class KernelParams:
    alpha_k: float
    beta_k: float
    gamma_k: float
    mu_k: float
    nu_k: float
    Q: object = None

    def admissible(self):
        a, b, g, m, n = (self.alpha_k, self.beta_k, self.gamma_k,
                         self.mu_k, self.nu_k)
        return (-0.75 <= a <= 1 and min(b, g, m, n) >= 0
                and b + m / 2 < a + g + 1 and a + b + 1 > 0)

    @property
    def predicted(self):
        return predicted_exponent(self)


# ---------------------------------------------------------------- Phi_pm

def _ray_points(rho, y):
    t = rho / np.sqrt((1 - y) * (1 + y))
    return t, y * t


def compute_Phi_pm(traj_phi, traj_u=None, rho=None, y_grid=None, n_y=256):
    """
    Sample Phi_pm on the hyperboloid H_rho.

    Parameters
    ----------
    traj_phi : Trajectory
        Klein-Gordon field.
    traj_u : Trajectory, optional
        Unused; accepted for symmetry with `extract_a_pm`.
    rho : float
    y_grid : array_like, optional
        Values of |y|; defaults to ``n_y`` points on the part of H_rho
        with t - r >= 1.

    Returns
    -------
    PhiPair
    """
    if rho is None:
        raise DomainError("rho is required")
    rho = float(rho)
    y_edge = (rho * rho - 1) / (rho * rho + 1)
    if y_grid is None:
        y_grid = np.linspace(0.0, y_edge, n_y)
    y = np.asarray(y_grid, dtype=float)
    if np.any(y < 0) or np.any(y > y_edge + 1e-12):
        raise RangeError("y outside the interior part t - r >= 1 of H_rho")
    t, r = _ray_points(rho, y)
    if rho < traj_phi.t_min - 1e-12 or np.any(t > traj_phi.t_max + 1e-9) \
            or np.any(r > traj_phi.r[-1]):
        raise RangeError(f"H_{rho:.4g} not covered by the trajectory")
    t = np.clip(t, traj_phi.t_min, traj_phi.t_max)
    f = traj_phi.sample(t, r, "u")
    ft = traj_phi.sample(t, r, "ut")
    fr = traj_phi.sample(t, r, "ur")
    drho_f = (t * ft + r * fr) / rho
    Phi = rho**1.5 * f
    dPhi = 1.5 * np.sqrt(rho) * f + rho**1.5 * drho_f
    plus = np.exp(-1j * rho) * (dPhi + 1j * Phi)
    minus = np.exp(1j * rho) * (dPhi - 1j * Phi)
    return PhiPair(rho, y, plus, minus)


# ---------------------------------------------------------------- phases

def _u_along(u, rho, y):
    t, r = _ray_points(rho, y)
    if callable(u) and not hasattr(u, "sample"):
        return np.asarray(u(t, r), dtype=float) * np.ones_like(t)
    if np.any(t > u.t_max + 1e-9) or np.any(r > u.r[-1]) or np.any(t < u.t_min - 1e-9):
        raise RangeError("ray leaves the trajectory domain")
    return u.sample(np.clip(t, u.t_min, u.t_max), r, "u")


class PhaseFunction:
    """Callable rho -> int_{rho_anchor}^{rho} u d rho along one ray."""

    def __init__(self, y, rhos, values):
        self.y = y
        self.anchor = float(rho_anchor(y))
        self.rho_max = rhos[-1]
        self._cs = CubicSpline(rhos, values)

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        if np.any(rho > self.rho_max + 1e-9) or np.any(rho < 2 - 1e-12):
            raise RangeError("rho outside the accumulated range")
        return self._cs(rho)


def _rho_cover(u, y):
    if hasattr(u, "t_max"):
        return min(u.t_max * np.sqrt((1 - y) * (1 + y)),
                   u.r[-1] * np.sqrt((1 - y) * (1 + y)) / max(y, 1e-300))
    return np.inf


def accumulate_phase(traj_u, y_abs, rho_max=None, h=0.02):
    """
    Phase integral of u along the hyperboloidal ray |y| = y_abs.

    Simpson accumulation from rho = 2 with the value at
    rho_anchor(y) subtracted, so that the phase vanishes on the surface
    t - r = 1 (or on H_2 for |y| <= 3/5).

    Parameters
    ----------
    traj_u : Trajectory or callable
        Wave field, or ``u(t, r)`` in closed form.
    y_abs : float
    rho_max : float, optional
        Upper end; defaults to the trajectory coverage.
    """
    y = float(y_abs)
    if not 0 <= y < 1:
        raise RangeError("ray must satisfy 0 <= |y| < 1")
    cover = _rho_cover(traj_u, y)
    if rho_max is None:
        rho_max = cover
        if not np.isfinite(rho_max):
            raise DomainError("rho_max required for closed-form u")
    if rho_max > cover + 1e-9:
        raise RangeError("ray leaves the trajectory domain")
    anchor = float(rho_anchor(y))
    if rho_max < anchor:
        raise RangeError("ray does not reach the anchor surface")
    n = max(8, int(np.ceil((rho_max - 2.0) / h)))
    n += n % 2
    rhos = np.linspace(2.0, rho_max, n + 1)
    uv = _u_along(traj_u, rhos, np.full_like(rhos, y))
    cum = integrate.cumulative_simpson(uv, x=rhos, initial=0.0)
    cs = CubicSpline(rhos, cum)
    vals = cum - cs(anchor)
    return PhaseFunction(y, rhos, vals)


class PhaseTable:
    """
    Phase int u d rho tabulated on (log rho, artanh |y|) for pointwise
    evaluation anywhere inside the light cone with rho >= 2.
    """

    def __init__(self, logr, zeta, table):
        self.logr = logr
        self.zeta = zeta
        self._spl = RectBivariateSpline(logr, zeta, table, kx=3, ky=3)
        self.rho_max = float(np.exp(logr[-1]))
        self.y_max = float(np.tanh(zeta[-1]))

    def __call__(self, rho, y):
        rho, y = np.broadcast_arrays(np.asarray(rho, float), np.asarray(y, float))
        lr = np.clip(np.log(np.maximum(rho, 1e-300)), self.logr[0], self.logr[-1])
        z = np.clip(np.arctanh(np.minimum(y, 1 - 1e-16)), 0.0, self.zeta[-1])
        return self._spl.ev(lr.ravel(), z.ravel()).reshape(rho.shape)

    def derivs(self, rho, zeta):
        """Phase and its first two derivatives in zeta = artanh|y| at fixed rho."""
        lr = np.clip(np.log(rho), self.logr[0], self.logr[-1])
        z = np.clip(zeta, 0.0, self.zeta[-1])
        return (self._spl.ev(lr, z), self._spl.ev(lr, z, dy=1),
                self._spl.ev(lr, z, dy=2))

    @classmethod
    def zero(cls):
        lr = np.linspace(np.log(2), np.log(1e6), 4)
        z = np.linspace(0, 10, 4)
        return cls(lr, z, np.zeros((4, 4)))


def phase_table(u, t_max, n_rho=1200, n_zeta=400, zeta_max=None, t_min=2.0):
    """
    Build a `PhaseTable` from a wave field covering t <= t_max.

    The table spans sqrt(3) <= rho <= t_max (every point with t >= 2 and
    t - r >= 1 lies above rho = sqrt(3)) and 0 <= artanh|y| <= zeta_max,
    by default reaching the surface t - r = 1 at t_max.  The field is
    taken as 0 before ``t_min``.
    """
    if zeta_max is None:
        zeta_max = 0.5 * np.log(2 * t_max - 1)
    logr = np.linspace(np.log(1.7), np.log(t_max), n_rho)
    zeta = np.linspace(0.0, zeta_max, n_zeta)
    rho = np.exp(logr)[:, None]
    t = rho * np.cosh(zeta)[None, :]
    r = rho * np.sinh(zeta)[None, :]
    inside = (t <= t_max) & (t >= t_min)
    if hasattr(u, "sample"):
        inside &= (r <= u.r[-1]) & (t >= u.t_min) & (t <= u.t_max)
        vals = np.zeros_like(t)
        vals[inside] = u.sample(t[inside], r[inside], "u")
    else:
        vals = np.where(inside, np.asarray(u(np.where(inside, t, 2.0),
                                              np.where(inside, r, 0.0))), 0.0)
    # d/d(log rho) of the phase is rho u
    integrand = rho * vals
    cum = integrate.cumulative_simpson(integrand, x=logr, axis=0, initial=0.0)
    anchor = rho_anchor(np.tanh(zeta))
    base = np.array([CubicSpline(logr, cum[:, j])(np.log(anchor[j]))
                     for j in range(n_zeta)])
    return PhaseTable(logr, zeta, cum - base[None, :])


# ---------------------------------------------------------------- a_pm

def _richardson(rho1, e1, rho2, e2):
    """Two-point limit assuming a rho^{-1} leading residual."""
    return (rho2 * e2 - rho1 * e1) / (rho2 - rho1)


def extract_a_pm(traj_phi, traj_u, rho_list, y_grid=None, phase=None,
                 n_y=256):
    """
    Scattering amplitude a_+(y) from a Klein-Gordon trajectory.

    On each slice the combination
    ``E = e^{(i/2) theta} (Phi_+ + (u/4) e^{-2 i rho} Phi_-) / (2i)`` is
    formed, with theta the phase integral of u; E tends to a_+ with a
    rho^{-1} residual, which two-point Richardson extrapolation over the
    two largest slices removes.

    Parameters
    ----------
    traj_phi : Trajectory
    traj_u : Trajectory, callable or None
        Wave field driving the phase (None means u = 0).
    rho_list : sequence of float
        At least 4 slices spanning a factor >= 4.
    y_grid : array_like, optional
        Defaults to the interior of the smallest slice.
    phase : callable, optional
        ``phase(rho, y)`` overriding the accumulation (e.g. a
        `PhaseTable`).

    Returns
    -------
    KGProfile
    """
    rl = np.sort(np.asarray(rho_list, dtype=float))
    if rl.size < 4 or rl[-1] < 4 * rl[0]:
        raise DomainError("need >= 4 slices spanning a factor >= 4")
    if y_grid is None:
        r0 = rl[0]
        y_grid = np.linspace(0.0, (r0 * r0 - 1) / (r0 * r0 + 1), n_y)
    y = np.asarray(y_grid, dtype=float)
    if traj_u is None:
        theta = lambda rho, yy: np.zeros_like(yy)  # noqa: E731
        uval = lambda rho, yy: np.zeros_like(yy)  # noqa: E731
    else:
        if phase is None:
            funcs = [accumulate_phase(traj_u, yy, rho_max=rl[-1]) for yy in y]
            theta = lambda rho, yy: np.array([f(rho) for f in funcs])  # noqa: E731
        else:
            theta = phase
        uval = lambda rho, yy: _u_along(traj_u, np.full_like(yy, rho), yy)  # noqa: E731
    E = []
    for rho in rl:
        pp = compute_Phi_pm(traj_phi, None, rho, y)
        u = uval(rho, y)
        e = np.exp(0.5j * theta(rho, y)) * (
            pp.phi_plus + 0.25 * u * np.exp(-2j * rho) * pp.phi_minus) / 2j
        E.append(e)
    E = np.array(E)
    a = _richardson(rl[-2], E[-2], rl[-1], E[-1])
    res = np.max(np.abs(E - a[None, :]), axis=1)
    converged = True
    rate = np.nan
    if np.any(res > 0):
        pos = res > 0
        if pos.sum() >= 3:
            rate = fit_rate(rl[pos], res[pos]).exponent
            converged = bool(rate < 0)
        else:
            converged = False
    decay = _decay_order(y, a)
    return KGProfile(y, a, np.conj(a), rate, decay, converged, tuple(rl), res)


def _decay_order(y, a):
    """Local power of (1 - y^2) in |a| over the outer fifth of the grid."""
    m = np.abs(a)
    sel = (y >= y[0] + 0.8 * (y[-1] - y[0])) & (m > 0) & (y < 1)
    if sel.sum() < 3:
        return np.nan
    x = 1 - y[sel] ** 2
    return float(np.polyfit(np.log(x), np.log(m[sel]), 1)[0])


# ---------------------------------------------------------------- source P

def eval_source_P(a_plus, y_grid=None, normalization="forward",
                  a_minus=None):
    """
    Non-oscillating source density P(y) with -box u_1 = t^{-3} P(y).

    ``normalization='forward'`` gives 2 (1-|y|^2)^{-3/2} a_+ a_-;
    ``'scattering'`` multiplies by 1 + (1-|y|^2)^{-1}, which also
    accounts for (d_t phi)^2.

    Parameters
    ----------
    a_plus : KGProfile or array_like
    y_grid : array_like, required when ``a_plus`` is an array
    """
    if isinstance(a_plus, KGProfile):
        y = np.asarray(a_plus.y_grid, dtype=float)
        ap, am = a_plus.a_plus, a_plus.a_minus
    else:
        if y_grid is None:
            raise DomainError("y_grid required with raw samples")
        y = np.asarray(y_grid, dtype=float)
        ap = np.asarray(a_plus, dtype=complex)
        am = np.conj(ap) if a_minus is None else np.asarray(a_minus, complex)
    prod = ap * am
    if np.max(np.abs(prod.imag), initial=0.0) > 1e-12 * max(np.max(np.abs(prod), initial=0), 1e-300):
        raise DomainError("a_minus must be the conjugate of a_plus")
    prod = prod.real
    inside = y < 1
    w = np.zeros_like(y)
    w[inside] = 1 - y[inside] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(inside, 2 * w ** -1.5, 0.0)
        if normalization == "scattering":
            fac = fac * np.where(inside, 1 + 1 / w, 0.0)
        elif normalization != "forward":
            raise DomainError(f"unknown normalization {normalization!r}")
        P = np.where(inside & (np.abs(prod) >= 1e-300), fac * prod, 0.0)
    if not np.all(np.isfinite(P)):
        raise DataError("source density not finite on the grid")
    _check_decay(y, prod, 2.5 if normalization == "scattering" else 1.5)
    return P


def _check_decay(y, prod, power):
    sel = (y > 0.9) & (y < 1) & (np.abs(prod) > 1e-300)
    if sel.sum() < 4:
        return
    x = 1 - y[sel] ** 2
    k = np.polyfit(np.log(x), np.log(np.abs(prod[sel])), 1)[0]
    if k < power - 0.05:
        raise DataError(f"a_+ a_- decays like (1-|y|^2)^{k:.3g}; "
                        f"need more than {power} for a bounded source")


# ---------------------------------------------------------------- U kernel

def _as_callable(P, y_grid):
    if callable(P):
        return P
    y = np.asarray(y_grid, dtype=float)
    p = np.asarray(P, dtype=float)
    cs = CubicSpline(y, p, bc_type=((1, 0.0), "not-a-knot"))
    y_end = y[-1]

    def f(z):
        z = np.abs(np.asarray(z, dtype=float))
        return np.where(z < min(y_end, 1.0), cs(np.minimum(z, y_end)), 0.0)
    f.breaks = (y_end,) if y_end < 1 else ()
    return f


class _Cumulative:
    """G(z) = int_0^min(z,1) zeta P(zeta) d zeta from a fine tabulation.

    The tabulation is split at the breakpoints of P (and at 1), each
    piece sampled with one-sided limits so a jump does not ring.
    """

    def __init__(self, P, n=4097):
        knots = sorted({0.0, 1.0, *(b for b in getattr(P, "breaks", ()) if 0 < b < 1)})
        m = max(16, n // (len(knots) - 1))
        self.knots = np.array(knots)
        self.pieces = []
        base = 0.0
        for a, b in zip(knots[:-1], knots[1:]):
            z = np.linspace(a, b, m)
            zs = z.copy()
            zs[-1] = b - 1e-13 * (b - a)
            cs = CubicSpline(z, zs * P(zs)).antiderivative()
            self.pieces.append((base, cs))
            base += float(cs(b))
        self.total = base

    def __call__(self, z):
        z = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
        k = np.clip(np.searchsorted(self.knots, z, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.empty(z.shape)
        for i, (base, cs) in enumerate(self.pieces):
            sel = k == i
            out[sel] = base + cs(z[sel])
        return out if out.ndim else float(out)


def u_tilde(P, s, rel_tol=1e-8, G=None):
    """
    Kernel integral for the interior profile at |y| = s in [0, 1).

    Reduces the sphere integral exactly, leaving::

        U_tilde(s) = 1/(2s) int_0^1 [G((s+1-l)/l) - G(|s-1+l|/l)] dl / l

    with G the cumulative of zeta P(zeta) (saturated at 1).  The
    integrand vanishes for l < (1-s)/2.
    """
    if G is None:
        G = _Cumulative(P)
    s = float(s)
    if not 0 <= s < 1:
        raise DomainError("need 0 <= |y| < 1")
    lo = 0.5 * (1 - s)
    # a jump of P at z = b (sampled P ends there) kinks the integrand
    breaks = getattr(P, "breaks", ())
    if s < 1e-6:
        def f(lam):
            z = (1 - lam) / lam
            return z * float(P(z)) / (lam * lam)
        pts = sorted({1 / (1 + b) for b in breaks if lo < 1 / (1 + b) < 1}) or None
    else:
        def f(lam):
            return (G((s + 1 - lam) / lam) - G(abs(s - 1 + lam) / lam)) / lam
        geo = lo * np.array([1.5, 2, 3, 5, 10, 30, 100, 300, 1e3, 1e4])
        kinks = [x for b in breaks for x in ((1 + s) / (1 + b), (1 - s) / (1 + b),
                                             (1 - s) / (1 - b) if b < 1 else 0.0)]
        pts = sorted({p for p in (1 - s, 0.5 * (1 + s), *geo, *kinks) if lo < p < 1})
    val, err = integrate.quad(f, lo, 1.0, points=pts, limit=400,
                              epsabs=0.0, epsrel=rel_tol * 0.1)
    if s >= 1e-6:
        val /= 2 * s
        err /= 2 * s
    if err > rel_tol * max(abs(val), 1e-14):
        raise PrecisionError(f"U kernel at |y|={s} reached {err:.3g}", achieved=err)
    return val


def radiation_limit_A(P, rel_tol=1e-8, G=None):
    """
    Limit of the kernel integral as |y| -> 1::

        A = 1/2 int_0^2 [G(1) - G(|1 - v|)] dv / v
    """
    if G is None:
        G = _Cumulative(P)
    f = lambda v: (G.total - G(abs(1 - v))) / v  # noqa: E731
    val, err = integrate.quad(f, 0.0, 2.0, points=[1.0], limit=400,
                              epsabs=0.0, epsrel=rel_tol * 0.1)
    if err > rel_tol * max(abs(val), 1e-14):
        raise PrecisionError("limit integral did not converge", achieved=err)
    return 0.5 * val


def compute_U_kernel(P, y_grid=None, rel_tol=1e-8, p_grid=None):
    """
    Interior profile U(y) from the source density P.

    Parameters
    ----------
    P : callable or array_like
        P(|y|) as a function, or samples on ``y_grid`` (P is taken as 0
        for |y| >= 1 and beyond the last sample).
    y_grid : array_like
        Evaluation points in [0, 1); also the sample points of P when P
        is an array and ``p_grid`` is not given.
    p_grid : array_like, optional
        Sample points of P.

    Returns
    -------
    InteriorProfile
    """
    if y_grid is None:
        y_grid = np.linspace(0.0, 0.99, 100)
    y = np.asarray(y_grid, dtype=float)
    if np.any(y < 0) or np.any(y >= 1):
        raise DomainError("y grid must lie in [0, 1)")
    Pf = _as_callable(P, y if p_grid is None else p_grid)
    G = _Cumulative(Pf)
    if G.total == 0.0 and not np.any(Pf(np.linspace(0, 1, 257))):
        z = np.zeros_like(y)
        return InteriorProfile(y, z, z.copy(), 0.0)
    Ut = np.array([u_tilde(Pf, s, rel_tol, G) for s in y])
    A = radiation_limit_A(Pf, rel_tol, G)
    return InteriorProfile(y, np.sqrt(1 - y * y) * Ut, Ut, float(A))


# ---------------------------------------------------------------- radiation

def extract_radiation_field(traj_u, q_grid=None, n_times=4, A=None,
                            n_q=401, q_min=None):
    """
    Radiation field F(q) = lim r u(r - q, r) along outgoing rays.

    r u is read on snapshots spread over [t_end/2, t_end] (radial
    interpolation only) and extrapolated to 1/r -> 0 with a quadratic
    least-squares fit in 1/r, which removes the O(1/r) and O(q^2/r^2)
    corrections.

    Parameters
    ----------
    traj_u : Trajectory
        Wave field with r_max >= t_end.
    q_grid : array_like, optional
    A : float, optional
        Interior limit to compare with; defaults to the mean of F over
        the most negative tenth of the q grid.

    Returns
    -------
    RadiationField
    """
    t_end = traj_u.t_max
    r_max = traj_u.r[-1]
    if r_max < t_end - 1e-9 * t_end:
        raise RangeError("need r_max >= t_end for characteristic coverage")
    idx = np.unique(np.searchsorted(
        traj_u.times, np.linspace(0.5 * t_end, t_end, n_times)).clip(0, len(traj_u.times) - 1))
    if idx.size < 3:
        raise RangeError("need at least 3 snapshots in [t_end/2, t_end]")
    ts = traj_u.times[idx]
    q_hi = r_max - ts[-1]
    q_lo_cov = -0.5 * ts[0]
    if q_grid is None:
        lo = max(q_lo_cov, -100.0) if q_min is None else q_min
        q_grid = np.linspace(lo, min(q_hi, 100.0), n_q)
    q = np.asarray(q_grid, dtype=float)
    if np.any(q < q_lo_cov - 1e-9) or np.any(q > q_hi + 1e-9):
        raise RangeError("q grid exceeds the characteristic coverage")
    W = np.empty((idx.size, q.size))
    X = np.empty_like(W)
    for k, n in enumerate(idx):
        r = np.clip(ts[k] + q, 0.0, r_max)
        W[k] = traj_u.sample_at_snapshot(n, r, "w")
        X[k] = 1.0 / r
    F = np.empty(q.size)
    corr = np.empty(q.size)
    for j in range(q.size):
        c = np.polyfit(X[:, j], W[:, j], 2)
        F[j] = c[-1]
        corr[j] = abs(W[-1, j] - F[j])
    if A is None:
        sel = q <= q[0] + 0.1 * (q[-1] - q[0])
        A = float(np.mean(F[sel]))
    minus = _tail(q < -1, -q, np.abs(F - A))
    plus = _tail(q > 1, q, np.abs(F))
    return RadiationField(q, F, float(A), (minus, plus), corr)


def _tail(sel, x, v):
    sel = sel & (v > 0)
    if sel.sum() < 3:
        return np.nan
    return fit_rate(x[sel], v[sel]).exponent


# ---------------------------------------------------------------- kernel lemma

def predicted_exponent(params):
    """Growth exponent -gamma - nu + 2 beta + mu of the weighted kernel bound."""
    return -params.gamma_k - params.nu_k + 2 * params.beta_k + params.mu_k


def kernel_integral(params, s, rel_tol=1e-10):
    """
    Weighted kernel integral at r/t = s with Q(z) = (1 - |z|^2)^alpha.

    With y = (s, 0, 0) one has
    ``l^2 - |y - (1-l) eta|^2 = 2 (1 - s eta_1)(l - c)`` where
    ``c = |y - eta|^2 / (2 (1 - s eta_1))``, so the l-integral is an
    incomplete beta function and only the eta_1 integral remains.
    A custom ``params.Q`` is integrated over (l, eta_1) directly.
    """
    a, b, g, m, n = (params.alpha_k, params.beta_k, params.gamma_k,
                     params.mu_k, params.nu_k)
    if params.Q is not None:
        return _kernel_integral_2d(params, s, rel_tol)
    p = 3 + g + 2 * a
    qq = a + b
    A_ = p - qq - 1
    B_ = qq + 1
    beta = special.beta(A_, B_)

    def f(x):
        e1 = 1 - x
        d2 = s * s - 2 * s * e1 + 1
        om = 1 - s * e1
        c = d2 / (2 * om)
        lam = c ** (1 - p + qq) * beta * special.betaincc(A_, B_, c)
        return (2 * om) ** qq * d2 ** (m / 2) * om ** (-n) * lam

    e = 1 - s
    pts = sorted({e * e, e, 2 * e, min(1.0, 10 * e)})
    # the returned error estimate is judged below; quad's own advisory is noise
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, 0.0, 2.0, points=pts, limit=400,
                                  epsabs=0.0, epsrel=rel_tol)
    if err > max(1e3 * rel_tol, 1e-5) * abs(val):
        raise PrecisionError("kernel integral did not converge", achieved=err)
    return 2 * np.pi * val


def _kernel_integral_2d(params, s, rel_tol):
    a, b, g, m, n = (params.alpha_k, params.beta_k, params.gamma_k,
                     params.mu_k, params.nu_k)
    Q = params.Q

    def inner(lam, e1):
        z2 = (s * s - 2 * s * (1 - lam) * e1 + (1 - lam) ** 2) / lam**2
        if z2 >= 1:
            return 0.0
        d2 = s * s - 2 * s * e1 + 1
        return (lam ** (-3 - g) * Q(np.sqrt(z2)) * (lam * lam * (1 - z2)) ** b
                * d2 ** (m / 2) * (1 - s * e1) ** (-n))

    lo = lambda e1: (s * s - 2 * s * e1 + 1) / (2 * (1 - s * e1))  # noqa: E731
    val, err = integrate.dblquad(inner, -1, 1, lo, lambda e1: 1.0,
                                 epsrel=max(rel_tol, 1e-9))
    return 2 * np.pi * val


def verify_kernel_lemma(params, ratios=(0.9, 0.95, 0.975, 0.99)):
    """
    Fit the growth exponent of the weighted kernel integral as r/t -> 1.

    Returns
    -------
    RateFit
        Slope of log I against log(1 - r/t); compare with
        `predicted_exponent`.
    """
    if not params.admissible():
        raise DomainError("kernel parameters violate the admissibility conditions")
    s = np.asarray(ratios, dtype=float)
    vals = np.array([kernel_integral(params, si) for si in s])
    return fit_rate(1 - s, vals)


def sample_kernel_params(rng, n):
    """
    Draw ``n`` admissible tuples: alpha ~ U[-3/4, 1] and
    beta, gamma, mu, nu ~ U[0, 1], rejecting inadmissible draws.
    """
    out = []
    while len(out) < n:
        a = rng.uniform(-0.75, 1.0)
        b, g, m, nu = rng.uniform(0.0, 1.0, 4)
        kp = KernelParams(a, b, g, m, nu)
        if kp.admissible():
            out.append(kp)
    return out


# ---------------------------------------------------------------- output

def write_profile_csv(path, kg, interior=None):
    """CSV ``y,re_a_plus,im_a_plus,U,U_tilde`` on the a_+ grid (NaN where U is not known)."""
    y = kg.y_grid
    if interior is not None:
        U = np.interp(y, interior.y_grid, interior.U, right=np.nan)
        Ut = np.interp(y, interior.y_grid, interior.U_tilde, right=np.nan)
    else:
        U = Ut = np.full_like(y, np.nan)
    rows = np.column_stack([y, kg.a_plus.real, kg.a_plus.imag, U, Ut])
    np.savetxt(path, rows, delimiter=",", header="y,re_a_plus,im_a_plus,U,U_tilde",
               comments="", fmt="%.17g")


def write_radiation_csv(path, rad):
    rows = np.column_stack([rad.q_grid, rad.F])
    np.savetxt(path, rows, delimiter=",", header="q,F", comments="", fmt="%.17g")
