"""
Scattering from infinity: approximate solutions built from prescribed
asymptotic data, the cutoff remainder system solved backward from a
ladder of final times, and the measurements certifying convergence.

Approximate solution::

    u0   = u1 + u2 + u3 + psi01
    phi0 = tau(t - r) rho^{-3/2} (e^{i rho - i theta/2} a_+(y) + c.c.)

with theta = int u1 d rho along hyperboloidal rays, tau a C^4 taper from
0 at t - r = 1 to 1 at t - r = 2, and psi01 the near-cone ansatz for the
free radiation field F0.
"""
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import diagnostics as dg
from .errors import ConfigError, DataError, DomainError, RangeError
from .evolve import (GridSpec, Trajectory, closed_form_trajectory,
                     solve_backward_remainder, solve_wave_source,
                     zero_trajectory)
from .geometry import chi, foliation_junction, japanese, smoothstep
from .profiles import (InteriorProfile, PhaseTable, compute_U_kernel,
                       phase_table)

__all__ = [
    "ScatteringData", "ApproximateSolution", "ConvergenceLadder", "Phi0Field",
    "Psi01", "ExactTrajectory", "default_data", "build_u1", "build_phi0",
    "build_u2", "build_u3", "build_F1", "build_psi01", "compute_R0", "build_approximation",
    "run_ladder", "interior_identity_error", "source_density",
    "load_scattering_data", "save_scattering_data", "write_ladder_csv",
    "remainder_bound_constants", "bound_growth", "psi01_probe",
    "remainder_decay", "u3_decay",
]


# ---------------------------------------------------------------- data

@dataclass
class ScatteringData:
    """
    Prescribed asymptotic data: amplitude a_+ on a |y| grid (a_- is its
    conjugate) and the free radiation field F0 on a q grid.
    """

    y_grid: np.ndarray
    a_plus: np.ndarray
    q_grid: np.ndarray
    F0: np.ndarray
    alpha: float = 0.1
    epsilon: float = 0.01
    delta: float = 0.025
    decay_l: int = 8
    N1: int = 8
    mode_l: int = 0
    validate: bool = True

    def __post_init__(self):
        self.y_grid = np.asarray(self.y_grid, dtype=float)
        self.a_plus = np.asarray(self.a_plus, dtype=complex)
        self.q_grid = np.asarray(self.q_grid, dtype=float)
        self.F0 = np.asarray(self.F0, dtype=float)
        if self.y_grid.shape != self.a_plus.shape or self.q_grid.shape != self.F0.shape:
            raise DataError("sample arrays do not match their grids")
        if np.any(np.diff(self.y_grid) <= 0) or np.any(np.diff(self.q_grid) <= 0):
            raise DataError("grids must be strictly increasing")
        if self.y_grid[0] != 0.0 or self.y_grid[-1] > 1.0:
            raise DataError("y grid must start at 0 and stay within [0, 1]")
        ya = self.y_grid
        bc = ((1, 0.0), "not-a-knot")
        self._re = CubicSpline(ya, self.a_plus.real, bc_type=bc)
        self._im = CubicSpline(ya, self.a_plus.imag, bc_type=bc)
        self._f0 = CubicSpline(self.q_grid, self.F0)
        if self.validate:
            self.check()

    # ---- validation
    def check(self):
        """Raise DataError if the data violate the required decay."""
        if not 0 < self.alpha < 1.0 / 6:
            raise DataError(f"alpha={self.alpha} outside (0, 1/6)")
        if self.N1 < 8:
            raise DataError("regularity order N1 must be >= 8")
        if self.decay_l < self.N1:
            raise DataError(f"decay_l={self.decay_l} < N1={self.N1}")
        if self.epsilon < 0:
            raise DataError("epsilon must be >= 0")
        self._check_a_decay()
        self._check_F0_decay()

    def _check_a_decay(self):
        y = self.y_grid
        m = np.abs(self.a_plus)
        sel = (y >= 0.9) & (y < 1) & (m > 0)
        if sel.sum() < 4:
            return
        k = np.polyfit(np.log(1 - y[sel] ** 2), np.log(m[sel]), 1)[0]
        if k < self.decay_l - 0.05:
            raise DataError(f"a_+ decays like (1-|y|^2)^{k:.3g}; need {self.decay_l}")

    def F0_weighted(self):
        """Max over k <= 2 of |(q d_q)^k F0| <q>^{1-alpha} on the grid."""
        q = self.q_grid
        f, f1, f2 = self._f0(q), self._f0(q, 1), self._f0(q, 2)
        w = japanese(q) ** (1 - self.alpha)
        return np.max(np.abs(np.vstack([f, q * f1, q * f1 + q * q * f2])) * w, axis=0)

    def _check_F0_decay(self):
        if not np.any(self.F0):
            return
        env = self.F0_weighted()
        q = np.abs(self.q_grid)
        scale = max(self.epsilon, 1e-300)
        if np.max(env) > 1e3 * scale:
            raise DataError("F0 exceeds C eps <q>^{alpha-1} with C = 1000")
        sel = q >= 10
        if sel.sum() >= 4 and np.all(env[sel] > 0):
            k = np.polyfit(np.log(q[sel]), np.log(env[sel]), 1)[0]
            if k > 0.05:
                raise DataError(f"weighted F0 grows like <q>^{k:.3g}")

    # ---- evaluation
    def a(self, y, deriv=0):
        """Complex a_+ (or its y-derivatives), zero for |y| >= y_grid[-1]."""
        y = np.asarray(y, dtype=float)
        inside = y < self.y_grid[-1]
        yc = np.clip(y, 0.0, self.y_grid[-1])
        v = self._re(yc, deriv) + 1j * self._im(yc, deriv)
        return np.where(inside, v, 0.0)

    def F0_at(self, q, deriv=0):
        q = np.asarray(q, dtype=float)
        lo, hi = self.q_grid[0], self.q_grid[-1]
        out = (q < lo) | (q > hi)
        if np.any(out & (self._f0(np.clip(q, lo, hi)) != 0)):
            warnings.warn("F0 evaluated outside its q grid; extended by zero",
                          RuntimeWarning, stacklevel=2)
        return np.where(out, 0.0, self._f0(np.clip(q, lo, hi), deriv))

    @property
    def is_zero(self):
        return not np.any(self.a_plus) and not np.any(self.F0)

    def manifest(self):
        return {"alpha": self.alpha, "epsilon": self.epsilon,
                "decay_l": self.decay_l, "N1": self.N1, "mode_l": self.mode_l,
                "delta": self.delta}


def default_data(epsilon=0.01, alpha=0.1, delta=0.025, decay_l=8, N1=8,
                 n_y=512, n_q=2048, q_range=100.0, F0="template", power=8,
                 mode_l=0):
    """
    Default scattering data: a_+ = eps (1 - |y|^2)^power and
    F0 = eps <q>^{alpha - 1} (``F0='template'``) or 0 (``F0='zero'``).
    """
    y = np.linspace(0.0, 1.0, n_y)
    a = epsilon * (1 - y * y) ** power
    q = np.linspace(-q_range, q_range, n_q)
    if F0 == "template":
        f0 = epsilon * japanese(q) ** (alpha - 1)
    elif F0 == "zero":
        f0 = np.zeros_like(q)
    elif F0 == "gaussian":
        f0 = epsilon * np.exp(-q * q)
    else:
        raise ConfigError(f"unknown F0 kind {F0!r}")
    return ScatteringData(y, a.astype(complex), q, f0, alpha, epsilon, delta,
                          decay_l, N1, mode_l)


def load_scattering_data(a_csv, f0_csv, manifest_json):
    """Read ``y,re_a_plus,im_a_plus`` and ``q,F0`` CSVs plus a JSON manifest."""
    with open(manifest_json) as fh:
        man = json.load(fh)
    allowed = {"alpha", "epsilon", "decay_l", "N1", "mode_l", "delta"}
    extra = set(man) - allowed
    if extra:
        raise ConfigError(f"unknown manifest keys: {sorted(extra)}")
    A = np.loadtxt(a_csv, delimiter=",", skiprows=1, ndmin=2)
    F = np.loadtxt(f0_csv, delimiter=",", skiprows=1, ndmin=2)
    return ScatteringData(A[:, 0], A[:, 1] + 1j * A[:, 2], F[:, 0], F[:, 1],
                          alpha=float(man.get("alpha", 0.1)),
                          epsilon=float(man.get("epsilon", 0.01)),
                          delta=float(man.get("delta", 0.025)),
                          decay_l=int(man.get("decay_l", 8)),
                          N1=int(man.get("N1", 8)),
                          mode_l=int(man.get("mode_l", 0)))


def save_scattering_data(data, a_csv, f0_csv, manifest_json):
    np.savetxt(a_csv, np.column_stack([data.y_grid, data.a_plus.real, data.a_plus.imag]),
               delimiter=",", header="y,re_a_plus,im_a_plus", comments="", fmt="%.17g")
    np.savetxt(f0_csv, np.column_stack([data.q_grid, data.F0]), delimiter=",",
               header="q,F0", comments="", fmt="%.17g")
    with open(manifest_json, "w") as fh:
        json.dump(data.manifest(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------- sources

def source_density(data, normalization="scattering"):
    """
    P(|y|) with -box u1 = t^{-3} P(y)::

        P = 2 (1-|y|^2)^{-3/2} (1 + (1-|y|^2)^{-1}) |a_+|^2

    (without the bracket for ``normalization='forward'``).
    """
    def P(z):
        z = np.abs(np.asarray(z, dtype=float))
        inside = z < 1
        w = np.where(inside, 1 - z * z, 1.0)
        a2 = np.abs(data.a(z)) ** 2
        fac = 2 * w ** -1.5
        if normalization == "scattering":
            fac = fac * (1 + 1 / w)
        return np.where(inside & (a2 >= 1e-300), fac * a2, 0.0)
    return P


def _s1(P):
    def S1(t, r):
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        return np.where(r < t, t ** -3.0 * P(r / t), 0.0)
    return S1


def _tau(x, deriv=0):
    """Interior taper: 0 for t - r <= 1, 1 for t - r >= 2."""
    return smoothstep(np.asarray(x, dtype=float) - 1.0, deriv)


# ---------------------------------------------------------------- phi0

class Phi0Field:
    """
    Closed-form Klein-Gordon approximation with modified phase.

    Evaluates phi0, its first derivatives and the residual R0 defined by
    ``-box phi0 + phi0 = u1 phi0 - R0`` at arbitrary points (t, r).
    """

    def __init__(self, data, u1=None, table=None):
        self.data = data
        self.u1 = u1
        if table is None:
            table = PhaseTable.zero() if u1 is None else phase_table(u1, u1.t_max)
        self.table = table

    def _u1(self, t, r):
        if self.u1 is None:
            z = np.zeros_like(t)
            return z, z, z
        if np.any(t > self.u1.t_max + 1e-9):
            raise RangeError("phi0 requested beyond the u1 coverage")
        tc = np.clip(t, self.u1.t_min, self.u1.t_max)
        early = t < self.u1.t_min
        vals = [np.where(early, 0.0, self.u1.sample(tc, r, k)) for k in ("u", "ut", "ur")]
        return tuple(vals)

    def evaluate(self, t, r, want=("phi", "phi_t")):
        """
        Return a dict with any of 'phi', 'phi_t', 'phi_r', 'R0', 'u1'.
        """
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        shape = t.shape
        t = t.ravel()
        r = r.ravel()
        out = {k: np.zeros(t.size) for k in want}
        m = (t - r) > 1.0
        if not np.any(m) or not np.any(self.data.a_plus):
            if "u1" in want and self.u1 is not None:
                out["u1"] = self._u1(t, r)[0]
            return {k: v.reshape(shape) for k, v in out.items()}
        tm, rm = t[m], r[m]
        rho = np.sqrt((tm - rm) * (tm + rm))
        s = rm / tm
        zeta = np.arctanh(s)
        th, th_z, th_zz = self.table.derivs(rho, zeta)
        a = self.data.a(s)
        a_s = self.data.a(s, 1)
        w = 1 - s * s
        a_z = w * a_s
        u1, u1t, u1r = self._u1(tm, rm)
        ph = np.exp(1j * (rho - 0.5 * th))
        Bz = a_z - 0.5j * th_z * a
        Psi = 2 * np.real(ph * a)
        Psi_rho = 2 * np.real(ph * (1j - 0.5j * u1) * a)
        Psi_z = 2 * np.real(ph * Bz)
        f = rho ** -1.5 * Psi
        f_rho = -1.5 * rho ** -2.5 * Psi + rho ** -1.5 * Psi_rho
        f_z = rho ** -1.5 * Psi_z
        f_t = (tm / rho) * f_rho - (rm / rho**2) * f_z
        f_r = -(rm / rho) * f_rho + (tm / rho**2) * f_z
        x = tm - rm
        tau = _tau(x)
        tau1 = _tau(x, 1)
        if "phi" in want:
            out["phi"][m] = tau * f
        if "phi_t" in want:
            out["phi_t"][m] = tau1 * f + tau * f_t
        if "phi_r" in want:
            out["phi_r"][m] = -tau1 * f + tau * f_r
        if "u1" in want:
            out["u1"][m] = u1
            if self.u1 is not None and np.any(~m):
                out["u1"][~m] = self._u1(t[~m], r[~m])[0]
        if "R0" in want:
            a_ss = self.data.a(s, 2)
            a_zz = w * w * a_ss - 2 * s * w * a_s
            Bzz = a_zz - 1j * th_z * a_z - 0.5j * th_zz * a - 0.25 * th_z**2 * a
            small = zeta < 1e-6
            coth = np.where(small, 0.0, 1.0 / np.where(small, 1.0, np.tanh(zeta)))
            lapB = np.where(small, 3 * Bzz, Bzz + 2 * coth * Bz)
            drho_u1 = (tm * u1t + rm * u1r) / rho
            core = lapB + 0.75 * a + rho**2 * (0.5j * drho_u1 + 0.25 * u1**2) * a
            R0t = rho ** -3.5 * 2 * np.real(ph * core)
            edge = np.where(tau1 != 0, f / np.where(rm > 0, rm, 1.0), 0.0)
            out["R0"][m] = tau * R0t - 2 * tau1 * edge - 2 * tau1 * (f_t + f_r)
        return {k: v.reshape(shape) for k, v in out.items()}

    def __call__(self, t, r):
        d = self.evaluate(t, r, ("phi", "phi_t"))
        return d["phi"], d["phi_t"]

    def oscillating_source(self, t, r):
        """
        Source of u2::

            rho^{-3} (e^{2i rho - i theta}(1 - (1-|y|^2)^{-1}) a_+^2 + c.c.)
        """
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        out = np.zeros(t.shape)
        m = (r < t) & (t - r > 1e-12)
        if not np.any(m) or not np.any(self.data.a_plus):
            return out
        tm, rm = t[m], r[m]
        s = rm / tm
        w = 1 - s * s
        rho = tm * np.sqrt(w)
        a = self.data.a(s)
        th = self.table(rho, s) if self.u1 is not None else 0.0
        val = rho ** -3.0 * 2 * np.real(np.exp(2j * rho - 1j * th) * (1 - 1 / w) * a * a)
        out[m] = np.where(np.abs(a) > 0, val, 0.0)
        return out


def build_phi0(data, u1=None, grid=None, table=None, times=None):
    """
    Tabulate phi0 on a grid (defaults to the grid and times of ``u1``).

    ``u1=None`` drops the phase correction: phi0 = 2 rho^{-3/2} Re(e^{i rho} a_+)
    inside t - r >= 2.
    """
    field_ = Phi0Field(data, u1, table)
    if grid is None:
        if u1 is None:
            raise ConfigError("grid required when u1 is None")
        grid = u1.grid
        times = u1.times if times is None else times
    tab = closed_form_trajectory(grid, field_, "klein_gordon", times)
    return ExactTrajectory(field_, tab)


class ExactTrajectory(Trajectory):
    """
    Tabulated closed-form Klein-Gordon field whose point samples are
    evaluated exactly rather than interpolated from the snapshots.
    """

    _KEYS = {"u": "phi", "ut": "phi_t", "ur": "phi_r"}

    def __init__(self, field_, tab):
        super().__init__(tab.grid, tab.times, tab.w, tab.wt, tab.field_kind,
                         tab.mode_l)
        self.closed_form = field_

    def sample(self, t, r, which="u"):
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        if not np.all(self.covers(t, r)):
            raise RangeError("sample point outside trajectory coverage")
        if which == "w":
            return r * self.closed_form.evaluate(t, r, ("phi",))["phi"]
        key = self._KEYS[which]
        return self.closed_form.evaluate(t, r, (key,))[key]


def compute_R0(data, u1=None, table=None):
    """Callable (t, r) -> R0 with -box phi0 + phi0 = u1 phi0 - R0 exactly."""
    f = Phi0Field(data, u1, table)
    return lambda t, r: f.evaluate(t, r, ("R0",))["R0"]


# ---------------------------------------------------------------- u1, u2, u3

def interior_identity_error(u1, profile, y_max=0.9, q_gap=4.0):
    """
    Relative L-infinity error of t u1 against U_tilde(|y|) on
    {t - r > q_gap, |y| <= y_max}, measured on the stored snapshots.
    """
    r = u1.r
    num = 0.0
    den = 0.0
    Ut = CubicSpline(profile.y_grid, profile.U_tilde, bc_type=((1, 0.0), "not-a-knot"))
    for n, t in enumerate(u1.times):
        sel = (t - r > q_gap) & (r <= y_max * t)
        if not np.any(sel):
            continue
        ref = Ut(r[sel] / t)
        num = max(num, np.max(np.abs(t * u1.u_snaps[n, sel] - ref)))
        den = max(den, np.max(np.abs(ref)))
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den


def build_u1(data, grid, n_profile=400, y_profile_max=0.999):
    """
    Solve -box u1 = 2 rho^{-3}(1 + (1-|y|^2)^{-1}) a_+ a_- with vanishing
    data, and compute the matching interior profile.

    Returns
    -------
    (Trajectory, InteriorProfile)
        The profile carries ``identity_error``, the measured relative
        error of t u1 against U_tilde on {t - r > 4, |y| <= 0.9}.
    """
    P = source_density(data, "scattering")
    yp = np.linspace(0.0, y_profile_max, n_profile)
    if not np.any(data.a_plus):
        traj = zero_trajectory(grid.with_(mode_l=0), "wave")
        z = np.zeros_like(yp)
        prof = InteriorProfile(yp, z, z.copy(), 0.0)
        prof.identity_error = 0.0
        return traj, prof
    traj = solve_wave_source(grid, _s1(P), 0)
    prof = compute_U_kernel(P, yp)
    prof.identity_error = interior_identity_error(traj, prof)
    return traj, prof


def build_u2(data, u1, grid, phi0=None):
    """Solve -box u2 = oscillatory quadratic source with vanishing data."""
    if not np.any(data.a_plus):
        return zero_trajectory(grid, "wave")
    f = phi0 if phi0 is not None else Phi0Field(data, u1)
    return solve_wave_source(grid, f.oscillating_source, 0)


def build_u3(data, phi0, u1, u2, grid):
    """
    Solve -box u3 = phi0^2 + (d_t phi0)^2 - S1 - S2 with vanishing data,
    so that -box(u1 + u2 + u3) = phi0^2 + (d_t phi0)^2.

    ``phi0`` is a `Phi0Field`; S1 and S2 are the closed-form sources of
    u1 and u2.
    """
    if not np.any(data.a_plus):
        return zero_trajectory(grid, "wave")
    S1 = _s1(source_density(data, "scattering"))

    def src(t, r):
        d = phi0.evaluate(np.full_like(r, t), r, ("phi", "phi_t"))
        return d["phi"] ** 2 + d["phi_t"] ** 2 - S1(t, r) - phi0.oscillating_source(t, r)
    return solve_wave_source(grid, src, 0)


# ---------------------------------------------------------------- free field

def build_F1(F0, q_grid, mode_l=0):
    """
    Corrector with 2 F1' = -l(l+1) F0 and F1(0) = 0, by the trapezoid rule
    outward from q = 0.
    """
    q = np.asarray(q_grid, dtype=float)
    f = np.asarray(F0, dtype=float)
    L = mode_l * (mode_l + 1)
    if L == 0 or not np.any(f):
        return np.zeros_like(q)
    if not q[0] <= 0 <= q[-1]:
        raise DomainError("q grid must contain 0")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(q))])
    k = int(np.clip(np.searchsorted(q, 0.0) - 1, 0, q.size - 2))
    f_zero = f[k] + (f[k + 1] - f[k]) * (0.0 - q[k]) / (q[k + 1] - q[k])
    c0 = cum[k] + 0.5 * (f[k] + f_zero) * (0.0 - q[k])
    return -0.5 * L * (cum - c0)


class Psi01:
    """
    Near-cone ansatz psi01 = chi(<q>/r) (F0(q)/r + F1(q)/r^2), q = r - t,
    for the angular mode l, with closed-form and stencil evaluations of
    box psi01 (the box acting on psi01 times the spherical harmonic,
    divided by it).
    """

    def __init__(self, q_grid, F0, F1=None, mode_l=0):
        self.q_grid = np.asarray(q_grid, dtype=float)
        self.F0s = np.asarray(F0, dtype=float)
        if F1 is None:
            F1 = build_F1(F0, q_grid, mode_l)
        self.F1s = np.asarray(F1, dtype=float)
        self.mode_l = mode_l
        self.L = mode_l * (mode_l + 1)
        self._f0 = CubicSpline(self.q_grid, self.F0s)
        self._f1 = CubicSpline(self.q_grid, self.F1s)
        self.zero = not np.any(self.F0s) and not np.any(self.F1s)

    def _F(self, q):
        lo, hi = self.q_grid[0], self.q_grid[-1]
        out = (q < lo) | (q > hi)
        qc = np.clip(q, lo, hi)
        F0, dF0 = self._f0(qc), self._f0(qc, 1)
        F1 = self._f1(qc)
        dF1 = -0.5 * self.L * F0
        if np.any(out):
            warnings.warn("psi01 evaluated outside the q grid; F0 extended by zero",
                          RuntimeWarning, stacklevel=3)
        return [np.where(out, 0.0, v) for v in (F0, dF0, F1, dF1)]

    def _chi_parts(self, t, r):
        q = r - t
        jq = japanese(q)
        rr = np.where(r > 0, r, 1.0)
        s = np.where(r > 0, jq / rr, np.inf)
        return q, jq, rr, s

    def __call__(self, t, r, with_dt=False):
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        if self.zero:
            z = np.zeros(t.shape)
            return (z, z.copy()) if with_dt else z
        q, jq, rr, s = self._chi_parts(t, r)
        live = s < 0.25
        F0, dF0, F1, dF1 = self._F(np.where(live, q, 0.0))
        c = np.where(live, chi(np.where(live, s, 1.0)), 0.0)
        val = c * (F0 / rr + F1 / rr**2)
        if not with_dt:
            return val
        # d/dt at fixed r: q_t = -1, s_t = -q / (<q> r)
        c1 = np.where(live, chi(np.where(live, s, 1.0), 1), 0.0)
        s_t = -q / (jq * rr)
        dt = c1 * s_t * (F0 / rr + F1 / rr**2) - c * (dF0 / rr + dF1 / rr**2)
        return val, dt

    def box(self, t, r):
        """Closed-form box psi01 in the (q, r) variables."""
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        if self.zero:
            return np.zeros(t.shape)
        q, jq, rr, s = self._chi_parts(t, r)
        live = s < 0.25
        F0, dF0, F1, dF1 = self._F(np.where(live, q, 0.0))
        sl = np.where(live, s, 1.0)
        c0, c1, c2 = (np.where(live, chi(sl, k), 0.0) for k in range(3))
        s = np.where(live, s, 1.0)
        s_r = -s / rr
        s_q = q / (jq * rr)
        s_rr = 2 * s / rr**2
        s_qr = -q / (jq * rr**2)
        G = F0 + F1 / rr
        G_r = -F1 / rr**2
        G_rr = 2 * F1 / rr**3
        G_q = dF0 + dF1 / rr
        G_qr = -dF1 / rr**2
        w_rr = c2 * s_r**2 * G + c1 * s_rr * G + 2 * c1 * s_r * G_r + c0 * G_rr
        w_qr = (c2 * s_q * s_r * G + c1 * s_qr * G + c1 * s_r * G_q
                + c1 * s_q * G_r + c0 * G_qr)
        w = c0 * G
        minus_box_r = -2 * w_qr - w_rr + self.L * w / rr**2
        return np.where(live, -minus_box_r / rr, 0.0)

    def box_stencil(self, t, r, h=1e-3):
        """Centred-difference box psi01 = -psi_tt + psi_rr + 2 psi_r / r - L psi / r^2."""
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        f = lambda tt, rr: self(tt, rr)  # noqa: E731
        p0 = f(t, r)
        ptt = (f(t + h, r) - 2 * p0 + f(t - h, r)) / h**2
        prr = (f(t, r + h) - 2 * p0 + f(t, r - h)) / h**2
        pr = (f(t, r + h) - f(t, r - h)) / (2 * h)
        return -ptt + prr + 2 * pr / r - self.L * p0 / r**2


def build_psi01(F0, F1=None, q_grid=None, mode_l=0):
    """
    Near-cone ansatz for the free radiation field.

    Parameters
    ----------
    F0 : ScatteringData or array_like
        Samples of F0 (on ``q_grid``) or a data set providing both.
    """
    if isinstance(F0, ScatteringData):
        q_grid = F0.q_grid
        mode_l = F0.mode_l
        F0 = F0.F0
    if q_grid is None:
        raise DomainError("q_grid required")
    return Psi01(q_grid, F0, F1, mode_l)


def psi01_probe(psi, data, n_points=10_000, seed=0, t_range=(2.0, 1000.0),
                bands=(2.0, 100.0, 300.0, 1000.0)):
    """
    Weighted residual <t+r>^4 <q>^{-alpha} |box psi01| / eps on random points.

    Points have t uniform in ``t_range`` and q = r - t uniform over the
    q grid of ``data`` (capped at |q| <= 100).  Boundedness is judged by
    the log-slope of the per-band maxima against the band midpoints.

    Returns
    -------
    dict with ``sup``, ``band_t``, ``band_sup``, ``slope``, ``passed``
    and ``stencil_gap`` (closed form vs centred differences, same weight).
    """
    rng = np.random.default_rng(seed)
    qmax = min(100.0, -data.q_grid[0], data.q_grid[-1])
    t = rng.uniform(*t_range, n_points)
    q = rng.uniform(-qmax, qmax, n_points)
    r = t + q
    ok = r > 1.0
    t, r, q = t[ok], r[ok], q[ok]
    eps = data.epsilon if data.epsilon > 0 else 1.0
    W = japanese(t + r) ** 4 * japanese(q) ** (-data.alpha) / eps
    b = W * np.abs(psi.box(t, r))
    gap = float(np.max(W * np.abs(psi.box(t, r) - psi.box_stencil(t, r))))
    edges = np.asarray(bands, dtype=float)
    mids, sups = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (t >= lo) & (t < hi)
        if sel.any():
            mids.append(np.sqrt(lo * hi))
            sups.append(float(b[sel].max()))
    mids, sups = np.array(mids), np.array(sups)
    if np.all(sups == 0):
        slope = 0.0
    else:
        slope = dg.fit_rate(mids, np.maximum(sups, 1e-300)).exponent
    return {"sup": float(b.max()), "band_t": mids, "band_sup": sups,
            "slope": float(slope), "passed": bool(slope <= 0.1 and np.isfinite(b.max())),
            "stencil_gap": gap}


def remainder_decay(approx, rhos, ys=(0.0, 0.3, 0.6), window=np.pi, n_window=16):
    """
    Fitted rho-exponents of the windowed envelope of |R0| along rays.

    The bare exponent and the exponent of ``rho^{7/2} / log(rho)`` times
    the envelope are returned per ray.
    """
    rhos = np.asarray(rhos, dtype=float)
    out = {}
    for y in ys:
        env = []
        for rho in rhos:
            x = np.linspace(rho, rho + window, n_window)
            t = x / np.sqrt(1 - y * y)
            env.append(np.max(np.abs(approx.R0(t, y * t))))
        env = np.asarray(env)
        if np.all(env == 0):
            out[y] = (0.0, 0.0, env)
            continue
        e = dg.fit_rate(rhos, env).exponent
        c = dg.fit_rate(rhos, env * rhos**3.5 / np.log(rhos)).exponent
        out[y] = (e, c, env)
    return out


def u3_decay(u3, t, q_min=4.0, frac=0.8, n=30):
    """Fitted exponent of |u3(t, t - q)| against q on [q_min, frac t] at a snapshot."""
    k = u3.snapshot_index(t)
    tt = u3.times[k]
    q = np.geomspace(q_min, frac * tt, n)
    v = np.abs(u3.sample_at_snapshot(k, tt - q))
    if np.all(v == 0):
        return 0.0, q, v
    return dg.fit_rate(q, np.maximum(v, 1e-300)).exponent, q, v


# ---------------------------------------------------------------- approximation

@dataclass
class ApproximateSolution:
    """Approximate solution (u0, phi0) and the data entering the remainder system."""

    data: ScatteringData
    u1: Trajectory
    u2: Trajectory
    u3: Trajectory
    psi01: Psi01
    phi0: Phi0Field
    F1: np.ndarray
    profile: InteriorProfile = None

    @property
    def t_max(self):
        return self.u1.t_max

    def R0(self, t, r):
        return self.phi0.evaluate(t, r, ("R0",))["R0"]

    def _wave(self, traj, t, r):
        tc = np.clip(t, traj.t_min, traj.t_max)
        return np.where(t < traj.t_min, 0.0, traj.sample(tc, r, "u"))

    def remainder_terms(self, t, r):
        """
        Coefficients of the remainder system at points (t, r):
        phi0, phi0_t, u_rest = u2 + u3 + psi01, u0, box_psi01, R0.
        """
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        if np.any(t > self.t_max + 1e-9):
            raise ConfigError("approximate solution does not cover the requested time")
        d = self.phi0.evaluate(t, r, ("phi", "phi_t", "R0"))
        psi = self.psi01(t, r)
        u1 = self._wave(self.u1, t, r)
        rest = self._wave(self.u2, t, r) + self._wave(self.u3, t, r) + psi
        return {"phi0": d["phi"], "phi0_t": d["phi_t"], "u_rest": rest,
                "u0": u1 + rest, "box_psi01": self.psi01.box(t, r), "R0": d["R0"]}


def build_approximation(data, grid, n_profile=400):
    """
    Construct u1, the phase table, phi0, u2, u3, F1 and psi01 on ``grid``
    (mode 0).  The grid's t_end bounds the times at which the remainder
    system can be driven.
    """
    u1, prof = build_u1(data, grid, n_profile)
    if np.any(data.a_plus):
        table = phase_table(u1, u1.t_max)
    else:
        table = PhaseTable.zero()
    phi0 = Phi0Field(data, u1 if np.any(data.a_plus) else None, table)
    u2 = build_u2(data, u1, grid, phi0)
    u3 = build_u3(data, phi0, u1, u2, grid)
    F1 = build_F1(data.F0, data.q_grid, data.mode_l)
    psi = Psi01(data.q_grid, data.F0, F1, data.mode_l)
    return ApproximateSolution(data, u1, u2, u3, psi, phi0, F1, prof)


# ---------------------------------------------------------------- ladder

@dataclass
class ConvergenceLadder:
    """
    Backward-ladder measurements.  ``diffs[k]`` is the energy norm
    sqrt(E_w(v_{k+1} - v_k) + E_KG(w_{k+1} - w_k)) on Sigma_{rho_cmp};
    ``sup_diffs`` (``sup_diffs_v``) the sup of |w_{k+1} - w_k|
    (|v_{k+1} - v_k|) on that slice.
    """

    T_values: np.ndarray
    diffs: np.ndarray
    sup_diffs: np.ndarray
    fitted_rate: float
    ratios: np.ndarray = None
    energy_checks: list = field(default_factory=list)
    bound_constants: dict = field(default_factory=dict)
    converged: bool = True
    final: tuple = field(default=None, repr=False)
    rho_cmp: float = None
    sup_diffs_v: np.ndarray = None

    def table(self):
        T = self.T_values
        return [(T[k], T[k + 1], self.diffs[k], self.sup_diffs[k])
                for k in range(len(self.diffs))]


class _Diff:
    """Pointwise difference of two trajectories, sampled lazily."""

    def __init__(self, a, b):
        self.a, self.b = a, b
        self.t_min = max(a.t_min, b.t_min)
        self.t_max = min(a.t_max, b.t_max)
        self.r = a.r
        self.field_kind = a.field_kind

    def sample(self, t, r, which="u"):
        return self.a.sample(t, r, which) - self.b.sample(t, r, which)


def _sigma_energy(traj, rho, mass):
    sl, (ri, ti, f, ft, fr), (ro, to, g, gt, gr) = dg._sigma_samples(traj, rho)
    di = (rho / ti) ** 2 * ft**2 + (fr + ri / ti * ft) ** 2 + mass * f * f
    do = gt**2 + gr**2 + mass * g * g
    e = dg._trapz(di * dg.FOUR_PI * ri**2, ri) + dg._trapz(do * dg.FOUR_PI * ro**2, ro)
    sup = max(np.max(np.abs(f)), np.max(np.abs(g)))
    return e, sup


def _solve_one(args):
    T, approx, grid = args
    return solve_backward_remainder(T, approx, grid)


def _sources(approx, T, v, w):
    """Exact right-hand sides of the cutoff remainder system as callables."""
    def terms(t, r):
        c = chi(np.asarray(t) / T)
        live = c > 0
        a = {k: np.zeros(np.shape(t)) for k in ("phi0", "phi0_t", "u_rest", "u0",
                                                 "box_psi01", "R0")}
        if np.any(live):
            sub = approx.remainder_terms(np.asarray(t)[live], np.asarray(r)[live])
            for k in a:
                a[k][live] = sub[k]
        return c, a

    def S_v(t, r):
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        c, a = terms(t, r)
        ww, wt = w.sample(t, r, "u"), w.sample(t, r, "ut")
        return c * (2 * a["phi0_t"] * wt + wt * wt + 2 * a["phi0"] * ww + ww * ww
                    + a["box_psi01"])

    def S_w(t, r):
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        c, a = terms(t, r)
        vv, ww = v.sample(t, r, "u"), w.sample(t, r, "u")
        return c * (a["u_rest"] * a["phi0"] + a["u0"] * ww + a["phi0"] * vv
                    + vv * ww + a["R0"])
    return S_v, S_w


def _rho_for_time(t_target):
    """Largest foliation parameter whose junction time is <= t_target."""
    lo, hi = 2.0, max(3.0, t_target)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if foliation_junction(mid).t_junction <= t_target:
            lo = mid
        else:
            hi = mid
    return lo


def remainder_bound_constants(v, w, data, rhos, band=2, t_max=np.inf):
    """
    Empirical constants in |v| <= C eps rho^{-2+alpha+2 delta}(rho/t)^{1/2}
    and |w| <= C eps rho^{-5/2+alpha+2 delta}(rho/t)^{3/2} on the
    hyperboloid part of each Sigma_rho, excluding ``band`` cells below
    the junction and points with t > t_max.
    """
    eps = max(data.epsilon, 1e-300)
    al, de = data.alpha, data.delta
    Cv, Cw = [], []
    dr = v.r[1] - v.r[0]
    for rho in rhos:
        sl = foliation_junction(rho)
        r = v.r[v.r <= sl.r_junction - band * dr]
        t = np.sqrt(rho * rho + r * r)
        r, t = r[t <= t_max], t[t <= t_max]
        bv = eps * rho ** (-2 + al + 2 * de) * (rho / t) ** 0.5
        bw = eps * rho ** (-2.5 + al + 2 * de) * (rho / t) ** 1.5
        Cv.append(np.max(np.abs(v.sample(t, r, "u")) / bv))
        Cw.append(np.max(np.abs(w.sample(t, r, "u")) / bw))
    return np.asarray(Cv), np.asarray(Cw)


def bound_growth(C):
    """
    Ratio of the largest constant over the upper half of the rho sweep to
    the largest over the lower half; a bounded (stable) constant gives
    a ratio near or below 1 even when the field oscillates.
    """
    C = np.asarray(C, dtype=float)
    h = C.size // 2
    lo = np.max(C[:h])
    if lo == 0.0:
        return 0.0 if np.max(C[h:]) == 0.0 else np.inf
    return float(np.max(C[h:]) / lo)


def run_ladder(data, T_values, grid, approx=None, rho_cmp=None, jobs=1,
               energy_check=True, n_bound=24):
    """
    Solve the cutoff remainder system backward from each final time and
    measure convergence as T grows.

    Parameters
    ----------
    data : ScatteringData
    T_values : sequence of float
        At least 3 increasing final times, each <= grid.t_end.
    grid : GridSpec
        Radial grid of the backward runs; r_max should exceed 7 T / 12
        so the outer boundary stays outside the support.
    approx : ApproximateSolution, optional
        Built on ``grid.with_(t_end=max(T)/4 + 1)`` when omitted.
    rho_cmp : float, optional
        Slice Sigma_rho on which consecutive runs are compared; defaults
        to the last slice with junction time <= min(T)/8, below which
        every run has the same cutoff.

    Returns
    -------
    ConvergenceLadder
    """
    T = np.asarray(T_values, dtype=float)
    if T.size < 3 or np.any(np.diff(T) <= 0):
        raise ConfigError("need >= 3 increasing final times")
    if T[-1] > grid.t_end + 1e-9:
        raise ConfigError("final times exceed grid.t_end")
    if rho_cmp is None:
        # last slice lying entirely before the support of chi(t/T2) - chi(t/T1)
        rho_cmp = _rho_for_time(T[0] / 8)
    if approx is None:
        approx = build_approximation(data, grid.with_(t_end=T[-1] / 4 + 1.0))
    if approx.t_max < T[-1] / 4:
        raise ConfigError("approximate solution must cover t <= max(T)/4")
    args = [(float(Tk), approx, grid) for Tk in T]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_solve_one, args))
    else:
        runs = [_solve_one(a) for a in args]

    diffs, sups, sups_v = [], [], []
    for k in range(T.size - 1):
        (v1, w1), (v2, w2) = runs[k], runs[k + 1]
        ev, sv = _sigma_energy(_Diff(v2, v1), rho_cmp, 0.0)
        ew, sw = _sigma_energy(_Diff(w2, w1), rho_cmp, 1.0)
        diffs.append(np.sqrt(ev + ew))
        sups.append(sw)
        sups_v.append(sv)
    diffs = np.asarray(diffs)
    sups = np.asarray(sups)
    ratios = diffs[1:] / np.where(diffs[:-1] > 0, diffs[:-1], np.inf)
    if np.all(diffs > 0):
        rate = dg.fit_rate(T[1:], diffs).exponent if diffs.size >= 3 else \
            float(np.log(diffs[-1] / diffs[0]) / np.log(T[-1] / T[1]))
    else:
        rate = np.nan
    converged = bool(np.all(np.diff(diffs) < 0) or np.all(diffs == 0))

    checks = []
    if energy_check:
        for Tk, (v, w) in zip(T, runs):
            S_v, S_w = _sources(approx, Tk, v, w)
            rho2 = _rho_for_time(Tk / 2)
            rho1 = 3.0
            cv = dg.check_energy_inequality(v, 0, rho1, rho2, source=S_v, n_rho=33)
            cw = dg.check_energy_inequality(w, 1, rho1, rho2, source=S_w, n_rho=33)
            checks.append({"T": float(Tk), "v": cv, "w": cw})

    v, w = runs[-1]
    # the cutoff equals 1 for t <= T/8, where the bounds are meaningful
    rhos = np.geomspace(4.0, T[-1] / 8, n_bound)
    if data.is_zero:
        Cv = Cw = np.zeros_like(rhos)
    else:
        Cv, Cw = remainder_bound_constants(v, w, data, rhos, t_max=T[-1] / 8)
    bounds = {"rhos": rhos, "C_v": Cv, "C_w": Cw, "growth_v": bound_growth(Cv),
              "growth_w": bound_growth(Cw)}
    return ConvergenceLadder(T, diffs, sups, rate, ratios, checks, bounds,
                             converged, (v, w), rho_cmp, np.asarray(sups_v))


def write_ladder_csv(path, ladder):
    rows = np.array(ladder.table(), dtype=float).reshape(-1, 4)
    np.savetxt(path, rows, delimiter=",", header="T1,T2,energy_diff,sup_diff",
               comments="", fmt="%.17g")
