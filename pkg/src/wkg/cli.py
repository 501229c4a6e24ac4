"""
Command line driver: ``wkg forward|construct|ladder|verify|report``.

Every run writes into its own directory under the output root
(``--out``, else ``$WKG_OUT``, else ``./runs``) named after the command
and a hash of the resolved configuration.  ``manifest.json`` lists the
configuration, produced files with checksums, stage timings and the
PASS/FAIL verdicts.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or
configuration error, 3 numerical divergence.
"""
import argparse
import hashlib
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import diagnostics as dg
from . import profiles as pf
from . import scattering as sc
from .errors import (ConfigError, DataError, DivergenceError, DomainError, RangeError,
                     WKGError)
from .evolve import GridSpec, make_initial_data, mms_errors, solve_forward
from .svg import line_plot

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

# section -> key -> (type, default); None default means "optional"
SCHEMA = {
    "grid": {"r_max": (float, None), "n_r": (int, None), "t0": (float, 2.0),
             "t_end": (float, None), "cfl": (float, 0.5),
             "dump_snapshots": (int, 100)},
    "data": {"epsilon": (float, 0.01), "seed": (int, 0)},
    "scattering": {"source": (str, "default"), "a_csv": (str, None),
                   "f0_csv": (str, None), "manifest": (str, None),
                   "epsilon": (float, 0.01), "alpha": (float, 0.1),
                   "delta": (float, 0.025), "decay_l": (int, 8), "N1": (int, 8),
                   "power": (int, 8), "F0": (str, "template"), "mode_l": (int, 0),
                   "n_y": (int, 512), "n_q": (int, 2048), "q_range": (float, 100.0),
                   "refinement_check": (bool, True)},
    "ladder": {"T": (list, [50.0, 100.0, 200.0]), "r_max": (float, 125.0),
               "n_r": (int, 2500), "rho_cmp": (float, None),
               "energy_check": (bool, True)},
    "verify": {"suite": (str, "kernel-lemma"), "n_params": (int, 10), "seed": (int, 0),
               "ratios": (list, [0.9, 0.95, 0.975, 0.99]),
               "mms_n": (list, [100, 200, 400]), "hardy_fields": (int, 100)},
}

GRID_DEFAULTS = {
    "forward": {"r_max": 310.0, "n_r": 3100, "t_end": 300.0},
    "construct": {"r_max": 200.0, "n_r": 4096, "t_end": 200.0},
    "ladder": {},
    "verify": {"r_max": 70.0, "n_r": 1400, "t_end": 60.0},
}

SUITES = ("kernel-lemma", "inequalities", "mms")


# ---------------------------------------------------------------- config

def _coerce(section, key, typ, val):
    if typ is float and isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if typ is int and isinstance(val, int) and not isinstance(val, bool):
        return val
    if typ is bool and isinstance(val, bool):
        return val
    if typ is str and isinstance(val, str):
        return val
    if typ is list and isinstance(val, list):
        return val
    raise ConfigError(f"[{section}] {key}: expected {typ.__name__}, got {val!r}")


def load_config(path, command):
    """
    Parse and validate a TOML configuration, filling defaults.

    Relative data paths are resolved against the configuration's
    directory.  Unknown sections or keys raise ConfigError.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    cfg = {}
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{sec}] must be a table")
        bad = set(given) - set(keys)
        if bad:
            raise ConfigError(f"[{sec}] unknown key(s): {sorted(bad)}")
        out = {}
        for k, (typ, default) in keys.items():
            if k in given:
                out[k] = _coerce(sec, k, typ, given[k])
            elif sec == "grid" and default is None:
                out[k] = GRID_DEFAULTS.get(command, {}).get(k)
            else:
                out[k] = default
        cfg[sec] = out
    sc_ = cfg["scattering"]
    for k in ("a_csv", "f0_csv", "manifest"):
        if sc_[k] is not None and not os.path.isabs(sc_[k]):
            sc_[k] = str((p.parent / sc_[k]).resolve())
    if sc_["source"] not in ("default", "files"):
        raise ConfigError("[scattering] source must be 'default' or 'files'")
    if cfg["verify"]["suite"] not in SUITES:
        raise ConfigError(f"[verify] suite must be one of {SUITES}")
    T = cfg["ladder"]["T"]
    if len(T) < 3 or not all(isinstance(x, (int, float)) for x in T):
        raise ConfigError("[ladder] T must list at least 3 numbers")
    cfg["ladder"]["T"] = [float(x) for x in T]
    return cfg


def _grid(cfg, **over):
    g = dict(cfg["grid"])
    g.update(over)
    missing = [k for k in ("r_max", "n_r", "t_end") if g[k] is None]
    if missing:
        raise ConfigError(f"[grid] missing {missing}")
    return GridSpec(r_max=g["r_max"], n_r=g["n_r"], t0=g["t0"], t_end=g["t_end"],
                    cfl=g["cfl"])


def scattering_data(cfg):
    s = cfg["scattering"]
    if s["source"] == "files":
        for k in ("a_csv", "f0_csv", "manifest"):
            if not s[k] or not os.path.isfile(s[k]):
                raise ConfigError(f"[scattering] {k}: file not found: {s[k]}")
        return sc.load_scattering_data(s["a_csv"], s["f0_csv"], s["manifest"])
    return sc.default_data(epsilon=s["epsilon"], alpha=s["alpha"], delta=s["delta"],
                           decay_l=s["decay_l"], N1=s["N1"], n_y=s["n_y"],
                           n_q=s["n_q"], q_range=s["q_range"], F0=s["F0"],
                           power=s["power"], mode_l=s["mode_l"])


def run_id(command, cfg):
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- run directory

def _sha(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunWriter:
    """Single writer for a run directory; records artifacts and verdicts."""

    def __init__(self, root, command, cfg):
        self.command = command
        self.cfg = cfg
        self.run_id = run_id(command, cfg)
        self.dir = Path(root) / f"{command}-{self.run_id[:12]}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.artifacts = []
        self.timings = {}
        self.verdicts = {}
        self.series = {}
        self._t = time.perf_counter()

    def path(self, name):
        return self.dir / name

    def add(self, name):
        if name not in self.artifacts:
            self.artifacts.append(name)

    def write_text(self, name, text):
        self.path(name).write_text(text)
        self.add(name)

    def stage(self, name):
        now = time.perf_counter()
        self.timings[name] = round(now - self._t, 3)
        self._t = now

    def verdict(self, name, passed, value=None, detail=""):
        v = None if value is None else (float(value) if np.isscalar(value) else value)
        self.verdicts[name] = {"passed": bool(passed), "value": v, "detail": detail}

    def plot(self, name, title, series, xlabel="", ylabel="", logx=False, logy=False):
        """Store a plottable series for `cmd_report`."""
        self.series[name] = {"title": title, "xlabel": xlabel, "ylabel": ylabel,
                             "logx": logx, "logy": logy,
                             "lines": [[lab, [float(a) for a in x], [float(b) for b in y]]
                                       for lab, x, y in series]}

    def finish(self):
        self.write_text("series.json", json.dumps(self.series, indent=1, sort_keys=True))
        man = {"run_id": self.run_id, "command": self.command, "config": self.cfg,
               "artifacts": [{"path": a, "sha256": _sha(self.path(a))}
                             for a in sorted(self.artifacts)],
               "timings": self.timings, "verdicts": self.verdicts,
               "passed": all(v["passed"] for v in self.verdicts.values())}
        self.path("manifest.json").write_text(
            json.dumps(man, indent=2, sort_keys=True, default=_json_default))
        return man


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def verify_manifest(run_dir):
    """Check that every artifact listed in a manifest exists with its checksum."""
    run_dir = Path(run_dir)
    man = json.loads((run_dir / "manifest.json").read_text())
    return all((run_dir / a["path"]).is_file() and _sha(run_dir / a["path"]) == a["sha256"]
               for a in man["artifacts"])


def _keep(n_times, n_keep):
    return np.unique(np.linspace(0, n_times - 1, max(4, n_keep)).round().astype(int))


def _dump(writer, name, traj, n_keep):
    """Write a snapshot CSV with at most ``n_keep`` evenly spaced snapshots."""
    from .evolve import Trajectory
    idx = _keep(len(traj.times), n_keep)
    sub = Trajectory(traj.grid, traj.times[idx], traj.w[idx], traj.wt[idx],
                     traj.field_kind, traj.mode_l)
    sub.to_csv(writer.path(name))
    writer.add(name)


def _num(*xs):
    """Comma-joined shortest round-trip reprs of numeric scalars."""
    return ",".join(repr(float(x)) for x in xs)


def _slope(x, y):
    y = np.asarray(y, dtype=float)
    if np.all(y == 0):
        return 0.0
    return dg.fit_rate(x, y).exponent


# ---------------------------------------------------------------- commands

def cmd_forward(cfg, writer, jobs=1):
    grid = _grid(cfg)
    if not grid.causal():
        warnings.warn("grid is not causally sized; boundary may influence the run")
    data = make_initial_data(cfg["data"]["epsilon"], cfg["data"]["seed"])
    u, p = solve_forward(grid, data)
    writer.stage("evolve")
    _dump(writer, "u.csv", u, cfg["grid"]["dump_snapshots"])
    _dump(writer, "phi.csv", p, cfg["grid"]["dump_snapshots"])

    # decay of the Klein-Gordon field and of the wave field
    t_end = grid.t_end
    rho_hi = min(64.0, 0.2 * t_end)
    rhos = np.geomspace(8.0, rho_hi, 12)
    env = dg.weighted_sup_envelope(p, rhos)
    s_phi = _slope(rhos, env)
    writer.verdict("phi_decay", abs(s_phi) <= 0.1, s_phi,
                   "slope of rho^{3/2} sup_H |phi| over rho in [8, 64]; need |slope| <= 0.1")
    tt, tu = dg.time_weighted_sup(u, t_min=max(grid.t0, t_end / 16))
    s_u = _slope(tt, tu)
    writer.verdict("u_decay", s_u <= 0.1, s_u, "slope of t sup|u|; bounded iff <= 0.1")
    writer.plot("phi_decay", "rho^{3/2} sup |phi| on hyperboloids",
                [("envelope", rhos, env)], "rho", "weighted sup", True, True)
    writer.plot("u_decay", "t sup |u|", [("t sup|u|", tt, tu)], "t", "t sup|u|", True, True)
    writer.stage("decay")

    # asymptotic profiles
    y = np.linspace(0.0, 0.8, 161)
    rho_list = [r for r in (16.0, 32.0, 48.0, 64.0, 96.0, 128.0, 160.0)
                if r / 0.6 <= t_end]
    if np.any(p.u_snaps):
        kg = pf.extract_a_pm(p, u, rho_list, y)
        P = pf.eval_source_P(kg, normalization="forward")
        # extracted amplitudes carry ~1e-3 relative noise; no point in a tighter quadrature
        inter = pf.compute_U_kernel(P, y[y <= 0.75], rel_tol=1e-4, p_grid=kg.y_grid)
    else:
        z = np.zeros_like(y)
        kg = pf.KGProfile(y, z.astype(complex), z.astype(complex), 0.0, np.inf, True,
                          tuple(rho_list), np.zeros(len(rho_list)))
        inter = pf.InteriorProfile(y[y <= 0.75], z[y <= 0.75], z[y <= 0.75], 0.0)
    pf.write_profile_csv(writer.path("profile.csv"), kg, inter)
    writer.add("profile.csv")
    rad = pf.extract_radiation_field(u)
    pf.write_radiation_csv(writer.path("radiation.csv"), rad)
    writer.add("radiation.csv")
    writer.plot("a_plus", "|a_+(y)| extracted from phi", [("|a_+|", y, np.abs(kg.a_plus))],
                "|y|", "|a_+|")
    writer.plot("a_residual", "a_+ extraction residual", [("residual", kg.rho_list,
                                                           kg.residuals)],
                "rho", "max |E - a_+|", True, True)
    writer.plot("interior_U", "interior profile", [("U", inter.y_grid, inter.U),
                                                   ("U_tilde", inter.y_grid, inter.U_tilde)],
                "|y|", "U")
    writer.plot("radiation", "radiation field of u", [("F", rad.q_grid, rad.F)], "q", "F")
    writer.stage("profiles")

    rl = [r for r in (3.0, 4.0, 5.0, 6.0, 8.0) if r * r - 0.25 <= np.sqrt(t_end**2 - r * r)]
    recs = dg.energy_ledger(u, p, rl)
    dg.write_energy_ledger(writer.path("energy.csv"), recs)
    writer.add("energy.csv")
    writer.plot("energy", "slice energies (order 0)",
                [("E_w(u)", rl, [r.e_w for r in recs if r.order_k == 0 and r.mass_flag == 0]),
                 ("E_w(phi)", rl, [r.e_w for r in recs if r.order_k == 0 and r.mass_flag == 1])],
                "rho", "energy", False, True)
    writer.stage("energies")


def _ray_exponent(traj, y, rhos):
    t = rhos / np.sqrt(1 - y * y)
    v = np.abs(traj.sample(t, y * t))
    return dg.fit_rate(rhos, v).exponent if np.all(v > 0) else -np.inf, v


def cmd_construct(cfg, writer, jobs=1):
    grid = _grid(cfg)
    data = scattering_data(cfg)
    zero_a = not np.any(data.a_plus)
    approx = sc.build_approximation(data, grid)
    writer.stage("construct")
    n_keep = cfg["grid"]["dump_snapshots"]
    for name in ("u1", "u2", "u3"):
        _dump(writer, f"{name}.csv", getattr(approx, name), n_keep)
    # phi0 is sampled in closed form, so only the dumped times are tabulated
    phi0 = sc.build_phi0(data, approx.u1 if not zero_a else None, grid=grid,
                         table=approx.phi0.table,
                         times=approx.u1.times[_keep(len(approx.u1.times), n_keep)])
    _dump(writer, "phi0.csv", phi0, n_keep)
    np.savetxt(writer.path("F1.csv"), np.column_stack([data.q_grid, data.F0, approx.F1]),
               delimiter=",", header="q,F0,F1", comments="", fmt="%.17g")
    writer.add("F1.csv")
    writer.stage("dump")

    # interior identity and its refinement
    err = approx.profile.identity_error
    writer.verdict("interior_identity", err <= 0.02, err,
                   "relative L-inf error of t u1 vs U_tilde on {t-r>4, |y|<=0.9}")
    if cfg["scattering"]["refinement_check"] and not zero_a:
        g2 = grid.with_(n_r=2 * grid.n_r)
        _, prof2 = sc.build_u1(data, g2)
        fac = err / prof2.identity_error if prof2.identity_error > 0 else np.inf
        writer.verdict("interior_refinement", 1.7 <= fac <= 2.3, fac,
                       "error ratio under 2x refinement; need factor in [1.7, 2.3]")
        writer.stage("refinement")
    prof = approx.profile
    writer.plot("interior_U", "interior profile of u1",
                [("U", prof.y_grid, prof.U), ("U_tilde", prof.y_grid, prof.U_tilde)],
                "|y|", "U")

    # radiation field of u1
    P = sc.source_density(data)
    A = pf.radiation_limit_A(P) if not zero_a else 0.0
    rad = pf.extract_radiation_field(approx.u1)
    pf.write_radiation_csv(writer.path("radiation_u1.csv"), rad)
    writer.add("radiation_u1.csv")
    if A == 0.0:
        writer.verdict("radiation_A", np.all(rad.F == 0), 0.0, "zero data")
        writer.verdict("radiation_tail", True, 0.0, "zero data")
    else:
        rel = abs(rad.A_interior - A) / abs(A)
        writer.verdict("radiation_A", rel <= 0.02, rel, "|F(q -> -inf) - A| / |A|")
        tail = rad.tail_rate[0]
        writer.verdict("radiation_tail", bool(tail <= -0.8), tail,
                       "fitted exponent of |F - A| for q < -1; need <= -0.8")
    writer.plot("radiation", "radiation field of u1", [("F", rad.q_grid, rad.F),
                                                      ("A", rad.q_grid,
                                                       np.full_like(rad.q_grid, A))],
                "q", "F")
    writer.stage("radiation")

    # oscillatory gain of u2 along rays
    t_end = grid.t_end
    lines, worst2, e1 = [], -np.inf, []
    for y in (0.0, 0.3, 0.6):
        rhos = np.geomspace(10.0, 0.75 * t_end * np.sqrt(1 - y * y), 12)
        k1, v1 = _ray_exponent(approx.u1, y, rhos)
        k2, v2 = _ray_exponent(approx.u2, y, rhos)
        e1.append(k1)
        worst2 = max(worst2, k2)
        lines += [(f"u1 y={y}", rhos, v1), (f"u2 y={y}", rhos, v2)]
    if zero_a:
        writer.verdict("u2_gain", True, 0.0, "zero data")
    else:
        ok = worst2 <= -1.8 and all(abs(k + 1.0) <= 0.1 for k in e1)
        writer.verdict("u2_gain", ok, worst2,
                       f"u2 ray exponent <= -1.8 with u1 exponents {np.round(e1, 3).tolist()}")
    writer.plot("u2_gain", "decay along rays", lines, "rho", "|u|", True, True)
    writer.stage("u2")

    # remainder of the approximate solution and decay of u3
    rhos = np.geomspace(10.0, 0.55 * t_end, 15)
    rd = sc.remainder_decay(approx, rhos)
    worst = max(abs(v[1]) for v in rd.values())
    writer.verdict("R0_rate", zero_a or worst <= 0.2,
                   max(v[0] for v in rd.values()),
                   "envelope of |R0| along rays against rho^{-7/2} log rho; "
                   f"largest corrected slope {worst:.3g} (need <= 0.2)")
    writer.plot("R0_decay", "windowed |R0| along rays",
                [(f"y={y}", rhos, v[2]) for y, v in rd.items()], "rho", "|R0|", True, True)
    k3, q3, v3 = sc.u3_decay(approx.u3, 0.5 * t_end)
    writer.verdict("u3_decay", zero_a or k3 <= -0.8, k3,
                   f"exponent of |u3| in t - r at t = {0.5 * t_end:g}; need <= -0.8")
    writer.plot("u3_decay", "|u3| against t - r", [("|u3|", q3, v3)], "t - r", "|u3|",
                True, True)
    writer.stage("R0_u3")

    # modified-phase round trip
    y = np.linspace(0.0, 0.8, 81)
    rl = [r for r in (20.0, 40.0, 60.0, 90.0, 118.0) if r / 0.6 <= t_end]
    if zero_a:
        writer.verdict("phase_round_trip", True, 0.0, "zero data")
        kg_a = np.zeros_like(y)
    else:
        kg = pf.extract_a_pm(phi0, approx.u1, rl, y, phase=approx.phi0.table)
        ref = np.abs(data.a(y))
        rel = np.max(np.abs(np.abs(kg.a_plus) - ref)) / np.max(ref)
        ok = rel <= 0.01 and kg.residual_rate <= -0.8
        writer.verdict("phase_round_trip", ok, rel,
                       f"|a_+| recovered on [0, 0.8]; residual rate {kg.residual_rate:.3f}")
        kg_a = np.abs(kg.a_plus)
        writer.plot("a_residual", "round-trip residual", [("residual", kg.rho_list,
                                                          kg.residuals)],
                    "rho", "max |E - a_+|", True, True)
    writer.plot("a_plus", "|a_+|: data and round trip", [("data", y, np.abs(data.a(y))),
                                                         ("extracted", y, kg_a)],
                "|y|", "|a_+|")
    writer.stage("round_trip")

    # psi01 residual
    pr = sc.psi01_probe(approx.psi01, data)
    writer.verdict("psi01_residual", pr["passed"], pr["sup"],
                   f"sup <t+r>^4 <q>^-alpha |box psi01| / eps; band slope {pr['slope']:.3g}")
    writer.plot("psi01", "weighted |box psi01| per t band",
                [("band sup", pr["band_t"], pr["band_sup"])], "t", "weighted sup", True, False)
    writer.stage("psi01")


def cmd_ladder(cfg, writer, jobs=1):
    lc = cfg["ladder"]
    T = lc["T"]
    grid = GridSpec(r_max=lc["r_max"], n_r=lc["n_r"], t0=cfg["grid"]["t0"],
                    t_end=max(T), cfl=cfg["grid"]["cfl"])
    data = scattering_data(cfg)
    approx = sc.build_approximation(data, grid.with_(t_end=max(T) / 4 + 1.0))
    writer.stage("construct")
    lad = sc.run_ladder(data, T, grid, approx=approx, rho_cmp=lc["rho_cmp"], jobs=jobs,
                        energy_check=lc["energy_check"])
    writer.stage("ladder")
    sc.write_ladder_csv(writer.path("ladder.csv"), lad)
    writer.add("ladder.csv")
    b = lad.bound_constants
    np.savetxt(writer.path("bounds.csv"), np.column_stack([b["rhos"], b["C_v"], b["C_w"]]),
               delimiter=",", header="rho,C_v,C_w", comments="", fmt="%.17g")
    writer.add("bounds.csv")
    d = lad.diffs
    if np.all(d == 0):
        writer.verdict("ladder_decrease", True, 0.0, "zero data: all differences vanish")
        writer.verdict("ladder_ratio", True, 0.0, "zero data")
    else:
        writer.verdict("ladder_decrease", bool(np.all(np.diff(d) < 0)), None,
                       f"energy diffs {np.array2string(d, precision=4)}")
        rmax = float(np.max(lad.ratios))
        writer.verdict("ladder_ratio", rmax <= 0.77, rmax,
                       f"consecutive diff ratio at rho_cmp={lad.rho_cmp:.3g}; need <= 0.77")
    ok = b["growth_v"] <= 1.25 and b["growth_w"] <= 1.25
    writer.verdict("remainder_bounds", ok, max(b["growth_v"], b["growth_w"]),
                   f"upper/lower half max of C_v ({b['growth_v']:.3g}) and C_w "
                   f"({b['growth_w']:.3g}); need <= 1.25")
    if lad.energy_checks:
        rows = ["T,field,ratio,lhs,rhs,passed"]
        ok = True
        for c in lad.energy_checks:
            for f in ("v", "w"):
                e = c[f]
                rows.append(f"{_num(c['T'])},{f},{_num(e['ratio'], e['lhs'], e['rhs'])},"
                            f"{'PASS' if e['passed'] else 'FAIL'}")
                ok &= e["passed"]
        writer.write_text("energy_inequality.csv", "\n".join(rows) + "\n")
        writer.verdict("energy_inequality", ok, max(max(c["v"]["ratio"], c["w"]["ratio"])
                                                    for c in lad.energy_checks),
                       "backward energy inequality on every ladder run")
    Tm = np.asarray(T[1:])
    writer.plot("ladder_diffs", "ladder energy differences", [("energy diff", Tm, d)],
                "T2", "diff", True, True)
    writer.plot("ladder_sup", "ladder sup differences",
                [("w", Tm, lad.sup_diffs), ("v", Tm, lad.sup_diffs_v)], "T2", "sup", True, True)
    writer.plot("bound_v", "remainder constant C_v", [("C_v", b["rhos"], b["C_v"])],
                "rho", "C_v", True, False)
    writer.plot("bound_w", "remainder constant C_w", [("C_w", b["rhos"], b["C_w"])],
                "rho", "C_w", True, False)
    v, w = lad.final
    for name, tr in (("v_final", v), ("w_final", w)):
        _dump(writer, f"{name}.csv", tr, cfg["grid"]["dump_snapshots"])


def cmd_verify(cfg, writer, jobs=1):
    vc = cfg["verify"]
    suite = vc["suite"]
    if suite == "kernel-lemma":
        rng = np.random.default_rng(vc["seed"])
        params = pf.sample_kernel_params(rng, vc["n_params"])
        rows = ["alpha,beta,gamma,mu,nu,predicted,fitted,diff,passed"]
        diffs = []
        for kp in params:
            fit = pf.verify_kernel_lemma(kp, vc["ratios"])
            pred = pf.predicted_exponent(kp)
            diffs.append(fit.exponent - pred)
            rows.append(f"{_num(kp.alpha_k, kp.beta_k, kp.gamma_k, kp.mu_k, kp.nu_k)},"
                        f"{_num(pred, fit.exponent, diffs[-1])},"
                        f"{'PASS' if abs(diffs[-1]) <= 0.15 else 'FAIL'}")
        writer.write_text("kernel_lemma.csv", "\n".join(rows) + "\n")
        worst = float(np.max(np.abs(diffs)))
        writer.verdict("kernel_lemma", worst <= 0.15, worst,
                       f"max |fitted - predicted| over {len(params)} tuples; need <= 0.15")
        idx = np.arange(len(diffs))
        writer.plot("kernel_diffs", "fitted minus predicted exponent",
                    [("diff", idx, diffs), ("+0.15", idx, np.full(len(idx), 0.15)),
                     ("-0.15", idx, np.full(len(idx), -0.15))], "tuple", "diff")
    elif suite == "mms":
        n = [int(x) for x in vc["mms_n"]]
        errs, orders = mms_errors(n)
        ok = bool(np.all((orders >= 1.8) & (orders <= 2.2)))
        writer.verdict("mms_order", ok, float(orders[-1]),
                       f"orders {np.round(orders, 4).tolist()}; need each in [1.8, 2.2]")
        np.savetxt(writer.path("mms.csv"), np.column_stack([n, errs]), delimiter=",",
                   header="n_r,linf_error", comments="", fmt="%.17g")
        writer.add("mms.csv")
        writer.plot("mms", "manufactured-solution error", [("L-inf error", n, errs)],
                    "n_r", "error", True, True)
    else:
        h = dg.hardy_sweep(vc["hardy_fields"], vc["seed"])
        writer.verdict("hardy", h["passed"], max(h["interior"] / 2, h["exterior"] / 8),
                       f"worst interior {h['interior']:.4g} (<= 2), exterior "
                       f"{h['exterior']:.4g} (<= 8) over {h['n_checks']} checks")
        kg = GridSpec(r_max=400.0, n_r=4000, t0=2.0, t_end=400.0)
        fam = dg.homogeneous_trajectory(kg)
        rhos = np.geomspace(4.0, 64.0, 9)
        ks = dg.check_klainerman_sobolev(fam, rhos)
        writer.verdict("klainerman_sobolev", ks["passed"], ks["slope"],
                       "trend of the empirical constant on the homogeneous family")
        grid = _grid(cfg)
        data = make_initial_data(cfg["data"]["epsilon"], cfg["data"]["seed"])
        u, p = solve_forward(grid, data)
        rr = np.geomspace(3.0, min(16.0, 0.25 * grid.t_end), 6)
        ksf = dg.check_klainerman_sobolev(p, rr)
        # the forward field does not saturate the inequality: only an upward trend fails
        writer.verdict("klainerman_sobolev_forward", ksf["slope"] <= 0.05, ksf["slope"],
                       f"no upward trend of the constant on forward phi (max {ksf['constant']:.4g})")
        ok = True
        worst = 0.0
        rho2 = foliation_top(grid.t_end)
        for tr, m in ((p, 1), (u, 0)):
            c = dg.check_energy_inequality(tr, m, 3.0, rho2)
            ok &= c["passed"]
            worst = max(worst, c["ratio"])
        writer.verdict("energy_inequality", ok, worst,
                       "forward-run energy inequality with stencil sources")
        e1 = dg.energy_con(u, 3.0, 3.0**2 - 0.25)
        e2 = dg.energy_con_expanded(u, 3.0, 3.0**2 - 0.25)
        rel = abs(e1 - e2) / max(abs(e1), 1e-300)
        writer.verdict("energy_con_identity", rel <= 1e-3 or e1 == 0, rel,
                       "two forms of the conformal energy agree")
        writer.plot("ks_family", "Klainerman-Sobolev constant (homogeneous family)",
                    [("constant", rhos, ks["ratios"])], "rho", "ratio", True, False)
        writer.plot("ks_forward", "Klainerman-Sobolev constant (forward phi)",
                    [("constant", rr, ksf["ratios"])], "rho", "ratio", True, False)


def foliation_top(t_end):
    """Largest slice whose junction time lies below ``t_end / 2``."""
    return sc._rho_for_time(t_end / 2)


# ---------------------------------------------------------------- report

def cmd_report(run_dir):
    """
    Render CSV tables and SVG plots for a completed run into
    ``<run_dir>/report``.  Re-running produces byte-identical files.
    """
    run_dir = Path(run_dir)
    if run_dir.is_file():
        run_dir = run_dir.parent
    man_path = run_dir / "manifest.json"
    if not man_path.is_file():
        raise ConfigError(f"no completed run at {run_dir}")
    man = json.loads(man_path.read_text())
    series = json.loads((run_dir / "series.json").read_text())
    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    rows = ["check,verdict,value,detail"]
    for k in sorted(man["verdicts"]):
        v = man["verdicts"][k]
        val = "" if v["value"] is None else repr(v["value"])
        det = str(v["detail"]).replace(",", ";")
        rows.append(f"{k},{'PASS' if v['passed'] else 'FAIL'},{val},{det}")
    (out / "verdicts.csv").write_text("\n".join(rows) + "\n")
    rows = ["stage,seconds"] + [f"{k},{man['timings'][k]}" for k in man["timings"]]
    (out / "timings.csv").write_text("\n".join(rows) + "\n")
    files = []
    for name in sorted(series):
        s = series[name]
        svg = line_plot([tuple(line) for line in s["lines"]], s["title"], s["xlabel"],
                        s["ylabel"], s["logx"], s["logy"])
        (out / f"{name}.svg").write_text(svg)
        files.append(f"{name}.svg")
    # verdict overview and stage timings are always available
    keys = sorted(man["verdicts"])
    idx = np.arange(len(keys))
    (out / "verdicts.svg").write_text(line_plot(
        [("pass (1) / fail (0)", idx, [1.0 if man["verdicts"][k]["passed"] else 0.0
                                       for k in keys])],
        "verdicts: " + ", ".join(keys), "check index", "passed"))
    st = list(man["timings"])
    (out / "timings.svg").write_text(line_plot(
        [("seconds", np.arange(len(st)), [man["timings"][k] for k in st])],
        "stage timings: " + ", ".join(st), "stage index", "seconds"))
    files += ["verdicts.svg", "timings.svg"]
    return out, files


# ---------------------------------------------------------------- main

COMMANDS = {"forward": cmd_forward, "construct": cmd_construct, "ladder": cmd_ladder,
            "verify": cmd_verify}


def _parser():
    ap = argparse.ArgumentParser(prog="wkg", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=[*COMMANDS, "report"])
    ap.add_argument("--config", required=True,
                    help="TOML configuration (for report: the run directory)")
    ap.add_argument("--out", default=None, help="output root (default $WKG_OUT or ./runs)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for ladders")
    ap.add_argument("--suite", choices=SUITES, default=None,
                    help="verify suite (overrides [verify] suite)")
    return ap


def main(argv=None):
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "report":
            out, files = cmd_report(args.config)
            print(f"report: {out} ({len(files)} plots)")
            return EXIT_OK
        cfg = load_config(args.config, args.command)
        if args.suite:
            cfg["verify"]["suite"] = args.suite
        root = args.out or os.environ.get("WKG_OUT") or "runs"
        writer = RunWriter(root, args.command, cfg)
        COMMANDS[args.command](cfg, writer, jobs=args.jobs)
        man = writer.finish()
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DataError, DomainError, RangeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WKGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"run {man['run_id'][:12]} -> {writer.dir}")
    for k, v in man["verdicts"].items():
        val = "" if v["value"] is None else f" ({v['value']:.4g})" \
            if isinstance(v["value"], float) else f" ({v['value']})"
        print(f"  {'PASS' if v['passed'] else 'FAIL'}  {k}{val}")
    return EXIT_OK if man["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
