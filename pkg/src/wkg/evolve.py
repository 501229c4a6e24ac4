"""
Radial finite-difference evolution of the wave / Klein-Gordon system.

Fields are evolved through w = r f, for which the radial operator becomes
``w_rr - l(l+1) w / r**2`` and w vanishes at the origin.  Time stepping is
the explicit three-level leapfrog scheme; nonlinear couplings are
evaluated at the centre level, with the Klein-Gordon field advanced first
so that its centred time derivative is available to the wave equation.

Equations (sources ``S`` are functions of (t, r) and the fields)::

    -box u = S_u            (wave,          u_tt = lap u + S_u)
    -box phi + phi = S_phi  (Klein-Gordon,  phi_tt = lap phi - phi + S_phi)
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError, RangeError

__all__ = [
    "GridSpec", "Trajectory", "InitialData", "make_initial_data",
    "solve_forward", "solve_wave_source", "solve_backward_remainder",
    "evolve_linear", "zero_trajectory", "closed_form_trajectory",
    "ManufacturedPair", "mms_errors",
]

WAVE = "wave"
KG = "klein_gordon"


@dataclass(frozen=True)
class GridSpec:
    """Uniform radial grid and time interval."""

    r_max: float
    n_r: int
    t0: float = 2.0
    t_end: float = 10.0
    cfl: float = 0.5
    mode_l: int = 0
    max_snapshots: int = 2000

    def __post_init__(self):
        if not (0 < self.cfl <= 1):
            raise ConfigError(f"cfl={self.cfl} violates 0 < cfl <= 1")
        if self.n_r < 8 or self.r_max <= 0:
            raise ConfigError("need n_r >= 8 and r_max > 0")
        if not self.t_end > self.t0:
            raise ConfigError("need t_end > t0")
        if self.mode_l < 0 or int(self.mode_l) != self.mode_l:
            raise ConfigError("mode_l must be a non-negative integer")
        if self.max_snapshots < 4:
            raise ConfigError("need at least 4 snapshots")

    @property
    def dr(self):
        return self.r_max / self.n_r

    @property
    def r(self):
        return np.linspace(0.0, self.r_max, self.n_r + 1)

    @property
    def dt(self):
        return self.schedule()[1]

    def causal(self):
        """True when the outer boundary cannot influence the run."""
        return self.r_max >= self.t_end - self.t0 + 1

    def schedule(self):
        """Return (n_steps, dt, stride) with n_steps a multiple of stride."""
        span = self.t_end - self.t0
        n = math.ceil(span / (self.cfl * self.dr) - 1e-9)
        k = max(1, math.ceil(n / (self.max_snapshots - 1)))
        n = k * math.ceil(n / k)
        return n, span / n, k

    def with_(self, **kw):
        d = dict(self.__dict__)
        d.update(kw)
        return GridSpec(**d)


def _regular(w, r, dr):
    """f = w / r with the origin value from the odd expansion of w."""
    f = np.empty_like(w)
    f[..., 1:] = w[..., 1:] / r[1:]
    f[..., 0] = (8.0 * w[..., 1] - w[..., 2]) / (6.0 * dr)
    return f


def _lagrange4(x):
    """Cubic Lagrange weights on nodes -1, 0, 1, 2 at offset x in [0, 1]."""
    return np.stack([
        -x * (x - 1) * (x - 2) / 6,
        (x + 1) * (x - 1) * (x - 2) / 2,
        -(x + 1) * x * (x - 2) / 2,
        (x + 1) * x * (x - 1) / 6,
    ], axis=-1)


def _stencil_index(x, x0, h, n):
    """Left node index (clamped) and offset for 4-point stencils."""
    s = (x - x0) / h
    i = np.floor(s).astype(int)
    i = np.clip(i, 1, n - 3)
    return i - 1, s - i


class Trajectory:
    """
    Snapshots of a radial field f and its time derivative.

    Internally the samples are kept as w = r f and w_t; ``u_snaps`` and
    ``ut_snaps`` give f and f_t (origin values by L'Hopital).  Sampling
    at arbitrary (t, r) is cubic in both t and r.
    """

    def __init__(self, grid, times, w, wt, field_kind=WAVE, mode_l=0):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.wt = np.asarray(wt, dtype=float)
        self.field_kind = field_kind
        self.mode_l = mode_l
        self.r = grid.r
        self.dr = grid.dr
        self._cache = {}
        if self.w.shape != (len(self.times), grid.n_r + 1):
            raise ValueError("snapshot array shape mismatch")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must increase")

    @property
    def mass(self):
        return 1.0 if self.field_kind == KG else 0.0

    @property
    def t_min(self):
        return self.times[0]

    @property
    def t_max(self):
        return self.times[-1]

    @property
    def u_snaps(self):
        if "u" not in self._cache:
            self._cache["u"] = _regular(self.w, self.r, self.dr)
        return self._cache["u"]

    @property
    def ut_snaps(self):
        if "ut" not in self._cache:
            self._cache["ut"] = _regular(self.wt, self.r, self.dr)
        return self._cache["ut"]

    def ur_snaps(self):
        """Centred radial derivative of f (even extension at r = 0)."""
        if "ur" not in self._cache:
            self._cache["ur"] = _dr_even(self.u_snaps, self.dr)
        return self._cache["ur"]

    def urt_snaps(self):
        if "urt" not in self._cache:
            self._cache["urt"] = _dr_even(self.ut_snaps, self.dr)
        return self._cache["urt"]

    def _array(self, which):
        if which == "u":
            return self.u_snaps
        if which == "ut":
            return self.ut_snaps
        if which == "ur":
            return self.ur_snaps()
        if which == "w":
            return self.w
        raise ValueError(which)

    def covers(self, t, r, slack=1e-9):
        t = np.asarray(t)
        r = np.asarray(r)
        return ((t >= self.t_min - slack) & (t <= self.t_max + slack)
                & (r >= 0) & (r <= self.r[-1] + slack))

    def sample(self, t, r, which="u"):
        """
        Cubic interpolation of a stored quantity at points (t, r).

        ``which`` is one of 'u', 'ut', 'ur', 'w'.
        """
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        t, r = np.broadcast_arrays(t, r)
        if not np.all(self.covers(t, r)):
            raise RangeError("sample point outside trajectory coverage")
        arr = self._array(which)
        nt = len(self.times)
        if nt < 4:
            raise RangeError("need at least 4 snapshots to interpolate")
        ht = (self.times[-1] - self.times[0]) / (nt - 1)
        it, xt = _stencil_index(t.ravel(), self.times[0], ht, nt)
        ir, xr = _stencil_index(r.ravel(), 0.0, self.dr, len(self.r))
        wt = _lagrange4(xt)
        wr = _lagrange4(xr)
        out = np.zeros(t.size)
        for a in range(4):
            acc = np.zeros(t.size)
            for b in range(4):
                acc += wr[:, b] * arr[it + a, ir + b]
            out += wt[:, a] * acc
        return out.reshape(t.shape)

    def sample_at_snapshot(self, n, r, which="u"):
        """Cubic interpolation in r on snapshot ``n`` only (no time error)."""
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(r > self.r[-1] + 1e-9):
            raise RangeError("radius outside grid")
        arr = self._array(which)[n]
        ir, xr = _stencil_index(r.ravel(), 0.0, self.dr, len(self.r))
        wr = _lagrange4(xr)
        out = sum(wr[:, b] * arr[ir + b] for b in range(4))
        return out.reshape(r.shape)

    def snapshot_index(self, t):
        n = int(np.argmin(np.abs(self.times - t)))
        return n

    def to_csv(self, path):
        """Write rows ``t,r,value,dt_value`` snapshot by snapshot."""
        u = self.u_snaps
        ut = self.ut_snaps
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "r", "value", "dt_value"])
            for n, t in enumerate(self.times):
                for j, rj in enumerate(self.r):
                    wr.writerow([repr(float(t)), repr(float(rj)),
                                 repr(float(u[n, j])), repr(float(ut[n, j]))])

    @classmethod
    def from_csv(cls, path, grid, field_kind=WAVE):
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        times = np.unique(data[:, 0])
        nr = grid.n_r + 1
        u = data[:, 2].reshape(len(times), nr)
        ut = data[:, 3].reshape(len(times), nr)
        r = grid.r
        return cls(grid, times, u * r, ut * r, field_kind)

    def __add__(self, other):
        if self.grid != other.grid or not np.array_equal(self.times, other.times):
            raise ValueError("trajectories on different grids")
        return Trajectory(self.grid, self.times, self.w + other.w,
                          self.wt + other.wt, self.field_kind, self.mode_l)


def _dr_even(f, dr):
    """Centred d/dr with f even at r = 0 and one-sided at the outer end."""
    g = np.empty_like(f)
    g[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2 * dr)
    g[..., 0] = 0.0
    g[..., -1] = (3 * f[..., -1] - 4 * f[..., -2] + f[..., -3]) / (2 * dr)
    return g


def zero_trajectory(grid, field_kind=WAVE, times=None):
    n, dt, k = grid.schedule()
    if times is None:
        times = grid.t0 + dt * np.arange(0, n + 1, k)
    z = np.zeros((len(times), grid.n_r + 1))
    return Trajectory(grid, times, z, z.copy(), field_kind, grid.mode_l)


def closed_form_trajectory(grid, func, field_kind=KG, times=None):
    """
    Tabulate a closed-form field on the grid.

    ``func(t, r)`` returns ``(f, f_t)`` for a scalar time and radius array.
    """
    n, dt, k = grid.schedule()
    if times is None:
        times = grid.t0 + dt * np.arange(0, n + 1, k)
    r = grid.r
    w = np.empty((len(times), len(r)))
    wt = np.empty_like(w)
    for i, t in enumerate(times):
        f, ft = func(t, r)
        w[i] = r * f
        wt[i] = r * ft
    return Trajectory(grid, times, w, wt, field_kind, grid.mode_l)


@dataclass
class InitialData:
    """
    Compactly supported data at t = t0.

    Every component is ``amplitude * coeff * shape(r)`` with a C^4 shape
    supported in r <= 1 and normalised to maximum 1.
    """

    amplitude: float
    seed: int
    coeffs: dict = field(default_factory=dict)

    @staticmethod
    def shape(r, kind=0):
        r = np.asarray(r, dtype=float)
        b = np.where(r < 1, (1 - np.minimum(r, 1) ** 2) ** 5, 0.0)
        if kind == 1:
            # second bump with a node, still max 1 (attained at r = 0)
            b = b * (1 - 3 * np.minimum(r, 1) ** 2)
        return b

    def profile_max(self, comp):
        return abs(self.coeffs[comp])

    def evaluate(self, r):
        """Return (u, u_t, phi, phi_t) sampled at radii r."""
        e = self.amplitude
        c = self.coeffs
        return (e * c["u"] * self.shape(r, 0), e * c["ut"] * self.shape(r, 1),
                e * c["phi"] * self.shape(r, 0), e * c["phit"] * self.shape(r, 1))


def make_initial_data(amplitude, seed=0):
    """
    Reproducible C^4 bump data supported in r <= 1.

    Parameters
    ----------
    amplitude : float
        Overall size; 0 gives identically zero data.
    seed : int
        Seeds the O(1) coefficients of the four components.
    """
    if not np.isfinite(amplitude) or amplitude < 0:
        raise DomainError("amplitude must be >= 0")
    rng = np.random.default_rng(seed)
    mag = rng.uniform(0.5, 1.0, 4)
    sgn = rng.choice([-1.0, 1.0], 4)
    c = dict(zip(("u", "ut", "phi", "phit"), mag * sgn))
    return InitialData(float(amplitude), int(seed), c)


class _Field:
    """Mutable leapfrog state for one field."""

    def __init__(self, grid, mass, w0, wt0):
        self.mass = mass
        self.w_old = None
        self.w = w0.copy()
        self.wt = wt0.copy()
        self.w_new = np.empty_like(w0)


def _laplace_w(w, r, dr, ell, out):
    """Interior values of w_rr - l(l+1) w / r^2 (endpoints untouched)."""
    out[1:-1] = (w[2:] - 2 * w[1:-1] + w[:-2]) / (dr * dr)
    if ell:
        out[1:-1] -= ell * (ell + 1) * w[1:-1] / (r[1:-1] ** 2)
    return out


def evolve_linear(grid, t_start, t_stop, kg_source=None, wave_source=None,
                  init=None, kinds=(KG, WAVE), check_every=8):
    """
    Core leapfrog driver for an optional Klein-Gordon/wave pair.

    Parameters
    ----------
    grid : GridSpec
    t_start, t_stop : float
        Evolution interval; ``t_stop < t_start`` runs backward.
    kg_source : callable or None
        ``kg_source(t, u, p)`` returning S_phi on the grid, where u and p
        are the current field values (not multiplied by r).
    wave_source : callable or None
        ``wave_source(t, u, p, p_t)`` returning S_u.
    init : tuple or None
        ``(u, u_t, p, p_t)`` at t_start (zero if None).
    kinds : tuple
        Which fields are evolved; a missing field stays zero.

    Returns
    -------
    dict of Trajectory keyed by 'p' (Klein-Gordon) and 'u' (wave).
    """
    r = grid.r
    dr = grid.dr
    ell = grid.mode_l
    span = abs(t_stop - t_start)
    sched = grid.with_(t0=0.0, t_end=span).schedule()
    n_steps, dt_abs, stride = sched
    sign = 1.0 if t_stop > t_start else -1.0
    dt = sign * dt_abs
    nr = len(r)
    z = np.zeros(nr)
    if init is None:
        init = (z, z, z, z)
    u0, ut0, p0, pt0 = (np.asarray(a, dtype=float) * np.ones(nr) for a in init)
    use_p = KG in kinds
    use_u = WAVE in kinds
    P = _Field(grid, 1.0, r * p0, r * pt0)
    U = _Field(grid, 0.0, r * u0, r * ut0)
    fields = [(P, use_p), (U, use_u)]
    acc_p = np.zeros(nr)
    acc_u = np.zeros(nr)
    lap = np.zeros(nr)
    nsnap = n_steps // stride + 1
    snaps = {key: (np.empty((nsnap, nr)), np.empty((nsnap, nr)))
             for key, used in (("p", use_p), ("u", use_u)) if used}
    times = t_start + dt * stride * np.arange(nsnap)
    limit = 1.0 / dr

    def vals(F):
        return _regular(F.w, r, dr)

    def accel(F, src, out):
        _laplace_w(F.w, r, dr, ell, lap)
        out[:] = lap
        if F.mass:
            out -= F.w
        if src is not None:
            out += r * src
        out[0] = 0.0
        return out

    def boundary(F, first):
        # upwind outgoing condition in the direction of evolution
        c = dt_abs / dr
        F.w_new[-1] = F.w[-1] - c * (F.w[-1] - F.w[-2])
        F.w_new[0] = 0.0

    def record(idx, F, key):
        snaps[key][0][idx] = F.w
        snaps[key][1][idx] = F.wt

    t = t_start
    for n in range(n_steps + 1):
        uv = vals(U)
        pv = vals(P)
        if use_p:
            s = kg_source(t, uv, pv) if kg_source is not None else None
            accel(P, s, acc_p)
            if n == 0:
                P.w_new[:] = P.w + dt * P.wt + 0.5 * dt * dt * acc_p
            elif n < n_steps:
                P.w_new[:] = 2 * P.w - P.w_old + dt * dt * acc_p
            if n < n_steps:
                boundary(P, n == 0)
                if n > 0:
                    P.wt = (P.w_new - P.w_old) / (2 * dt)
            else:
                P.wt = (P.w - P.w_old) / dt + 0.5 * dt * acc_p
        ptv = _regular(P.wt, r, dr)
        if use_u:
            s = wave_source(t, uv, pv, ptv) if wave_source is not None else None
            accel(U, s, acc_u)
            if n == 0:
                U.w_new[:] = U.w + dt * U.wt + 0.5 * dt * dt * acc_u
            elif n < n_steps:
                U.w_new[:] = 2 * U.w - U.w_old + dt * dt * acc_u
            if n < n_steps:
                boundary(U, n == 0)
                if n > 0:
                    U.wt = (U.w_new - U.w_old) / (2 * dt)
            else:
                U.wt = (U.w - U.w_old) / dt + 0.5 * dt * acc_u
        if n % stride == 0:
            idx = n // stride
            if use_p:
                record(idx, P, "p")
            if use_u:
                record(idx, U, "u")
        if n % check_every == 0 or n == n_steps:
            for F, used in fields:
                if not used:
                    continue
                m = np.max(np.abs(F.w[1:] / r[1:]))
                if not np.isfinite(m) or m > limit:
                    raise DivergenceError(f"blow-up at t={t:.6g}", time=t)
        if n == n_steps:
            break
        for F, used in fields:
            if used:
                F.w_old, F.w, F.w_new = F.w, F.w_new, (F.w_old if F.w_old is not None
                                                      else np.empty(nr))
        t = t_start + (n + 1) * dt

    out = {}
    order = slice(None) if sign > 0 else slice(None, None, -1)
    tt = times[order]
    kind_of = {"p": KG, "u": WAVE}
    for key, (w, wt) in snaps.items():
        out[key] = Trajectory(grid.with_(t0=min(t_start, t_stop),
                                         t_end=max(t_start, t_stop)),
                              tt, w[order], wt[order], kind_of[key], ell)
    return out


def solve_forward(grid, data, forcing=None):
    """
    Evolve the coupled system -box u = phi_t^2 + phi^2, -box phi + phi = u phi.

    Parameters
    ----------
    grid : GridSpec
        Must have ``mode_l == 0``.
    data : InitialData or object with ``evaluate(r)``
    forcing : tuple of callables, optional
        Extra sources ``(f_u(t, r), f_phi(t, r))`` added to the right-hand
        sides (used for manufactured solutions).

    Returns
    -------
    (Trajectory, Trajectory)
        The wave field u and the Klein-Gordon field phi.
    """
    if grid.mode_l != 0:
        raise ConfigError("nonlinear system is radial: mode_l must be 0")
    r = grid.r
    fu, fp = forcing if forcing is not None else (None, None)

    def kg_src(t, u, p):
        s = u * p
        if fp is not None:
            s = s + fp(t, r)
        return s

    def wave_src(t, u, p, pt):
        s = pt * pt + p * p
        if fu is not None:
            s = s + fu(t, r)
        return s

    out = evolve_linear(grid, grid.t0, grid.t_end, kg_src, wave_src,
                        init=data.evaluate(r))
    return out["u"], out["p"]


def solve_wave_source(grid, source, mode_l=None):
    """
    Solve -box u = F with vanishing data at t0 for one angular mode.

    ``source(t, r)`` returns F on the radial grid.  For the mode l the
    evolved variable obeys ``w_tt = w_rr - l(l+1) w / r^2 + r F``.
    """
    if mode_l is not None and mode_l != grid.mode_l:
        grid = grid.with_(mode_l=int(mode_l))
    r = grid.r
    src = (lambda t, u, p, pt: source(t, r)) if source is not None else None
    return evolve_linear(grid, grid.t0, grid.t_end, None, src,
                         kinds=(WAVE,))["u"]


def solve_backward_remainder(T, approx, grid):
    """
    Remainder system with vanishing data at t = T, evolved back to t0.

    ``approx`` supplies ``remainder_terms(t, r)`` returning a dict with
    keys 'phi0', 'phi0_t', 'u_rest' (u2+u3+psi01), 'u0', 'box_psi01' and
    'R0'.  The sources carry the time cutoff chi(t/T)::

        -box v     = chi (2 phi0_t w_t + w_t^2 + 2 phi0 w + w^2 + box psi01)
        -box w + w = chi (u_rest phi0 + u0 w + phi0 v + v w + R0)
    """
    from .geometry import chi

    if T > grid.t_end + 1e-12 or T <= grid.t0:
        raise ConfigError("need t0 < T <= grid.t_end")
    r = grid.r
    g = grid.with_(t_end=T)
    terms = {}

    def get(t):
        if terms.get("t") != t:
            terms.clear()
            terms.update(approx.remainder_terms(t, r))
            terms["t"] = t
        return terms

    def kg_src(t, v, w):
        c = float(chi(t / T))
        if c == 0.0:
            return None
        a = get(t)
        return c * (a["u_rest"] * a["phi0"] + a["u0"] * w + a["phi0"] * v
                    + v * w + a["R0"])

    def wave_src(t, v, w, wt):
        c = float(chi(t / T))
        if c == 0.0:
            return None
        a = get(t)
        return c * (2 * a["phi0_t"] * wt + wt * wt + 2 * a["phi0"] * w
                    + w * w + a["box_psi01"])

    out = evolve_linear(g, T, grid.t0, kg_src, wave_src)
    return out["u"], out["p"]


# ---------------------------------------------------------------- manufactured solutions

@dataclass(frozen=True)
class ManufacturedPair:
    """
    Exact pair u* = A cos(t) B(r), phi* = C sin(t) B(r) with the compact
    bump B = (1 - r^2/R^2)^k for r < R, and the forcings that make it
    solve the coupled system.
    """

    R: float = 3.0
    k: int = 8
    A: float = 0.5
    C: float = 0.5

    def bump(self, r, deriv=0):
        """B (deriv=0) or its flat Laplacian B'' + 2B'/r (deriv=2)."""
        r = np.asarray(r, dtype=float)
        x = np.minimum(r * r / self.R**2, 1.0)
        k, R2 = self.k, self.R**2
        if deriv == 0:
            return (1 - x) ** k
        if deriv == 2:
            return (-6 * k / R2 * (1 - x) ** (k - 1)
                    + 4 * k * (k - 1) * r * r / R2**2 * (1 - x) ** (k - 2))
        raise ValueError("deriv must be 0 or 2")

    def u(self, t, r):
        return self.A * np.cos(t) * self.bump(r), -self.A * np.sin(t) * self.bump(r)

    def phi(self, t, r):
        return self.C * np.sin(t) * self.bump(r), self.C * np.cos(t) * self.bump(r)

    def forcing(self):
        """(f_u, f_phi) as callables of (t, r)."""
        def fu(t, r):
            B, L = self.bump(r), self.bump(r, 2)
            u_tt_minus_lap = -self.A * np.cos(t) * (B + L)
            p, pt = self.phi(t, r)
            return u_tt_minus_lap - pt * pt - p * p

        def fp(t, r):
            L = self.bump(r, 2)
            u, _ = self.u(t, r)
            p, _ = self.phi(t, r)
            return -self.C * np.sin(t) * L - u * p
        return fu, fp

    def evaluate(self, r):
        """Initial data (u, u_t, phi, phi_t) at t0 = 2, as `InitialData.evaluate`."""
        return (*self.u(2.0, r), *self.phi(2.0, r))


def mms_errors(n_list=(100, 200, 400), r_max=6.0, t_end=5.0, pair=None):
    """
    L-infinity errors of `solve_forward` against a manufactured pair.

    Returns
    -------
    (errors, orders)
        ``errors[i]`` is the max over snapshots of |u - u*| and
        |phi - phi*| at ``n_list[i]`` cells; ``orders`` are the base-2
        logarithms of successive error ratios.
    """
    pair = pair or ManufacturedPair()
    errs = []
    for n in n_list:
        g = GridSpec(r_max=r_max, n_r=int(n), t0=2.0, t_end=t_end)
        u, p = solve_forward(g, pair, forcing=pair.forcing())
        T = u.times[:, None]
        eu = np.max(np.abs(u.u_snaps - pair.u(T, g.r[None, :])[0]))
        ep = np.max(np.abs(p.u_snaps - pair.phi(T, g.r[None, :])[0]))
        errs.append(max(eu, ep))
    errs = np.asarray(errs)
    ratios = np.asarray(n_list[1:], float) / np.asarray(n_list[:-1], float)
    orders = np.log(errs[:-1] / errs[1:]) / np.log(ratios)
    return errs, orders
