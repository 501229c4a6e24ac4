import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from wkg.errors import ConfigError, DataError, DomainError
from wkg.evolve import GridSpec, closed_form_trajectory, solve_backward_remainder
from wkg.scattering import (Phi0Field, Psi01, build_approximation, build_F1, build_psi01,
                            bound_growth, compute_R0, default_data, load_scattering_data,
                            psi01_probe, remainder_decay, run_ladder,
                            save_scattering_data, source_density)


# ---------------------------------------------------------------- data

@pytest.mark.parametrize("kw", [dict(alpha=0.2), dict(alpha=0.0), dict(N1=7),
                                dict(decay_l=9, N1=10, power=8), dict(power=4),
                                dict(epsilon=-1.0)])
def test_invalid_data_rejected(kw):
    with pytest.raises(DataError):
        default_data(**kw)


def test_growing_radiation_field_rejected():
    d = default_data(F0="zero")
    with pytest.raises(DataError):
        type(d)(d.y_grid, d.a_plus, d.q_grid, 0.01 * (1 + np.abs(d.q_grid)), epsilon=0.01)


def test_round_trip_through_files(tmp_path):
    d = default_data(epsilon=0.02, n_y=64, n_q=128)
    paths = [tmp_path / n for n in ("a.csv", "f0.csv", "m.json")]
    save_scattering_data(d, *paths)
    e = load_scattering_data(*paths)
    assert np.array_equal(e.a_plus, d.a_plus) and np.array_equal(e.F0, d.F0)
    assert e.manifest() == d.manifest()


def test_unknown_manifest_key(tmp_path):
    d = default_data(n_y=64, n_q=128)
    paths = [tmp_path / n for n in ("a.csv", "f0.csv", "m.json")]
    save_scattering_data(d, *paths)
    paths[2].write_text(json.dumps({"alpha": 0.1, "beta": 1}))
    with pytest.raises(ConfigError):
        load_scattering_data(*paths)


def test_source_density_vanishes_for_zero_data():
    P = source_density(default_data(epsilon=0.0))
    assert not np.any(P(np.linspace(0, 1, 50)))


# ---------------------------------------------------------------- phi0 and R0

def _stencil_R0(f, t, r, h=2e-3):
    # R0 = box phi0 - phi0 + u1 phi0 with box = -d_tt + d_rr + (2/r) d_r
    p = lambda a, b: f.evaluate(a, b, ("phi",))["phi"]  # noqa: E731
    p0 = p(t, r)
    ptt = (p(t + h, r) - 2 * p0 + p(t - h, r)) / h**2
    prr = (p(t, r + h) - 2 * p0 + p(t, r - h)) / h**2
    pr = (p(t, r + h) - p(t, r - h)) / (2 * h)
    u1 = f.evaluate(t, r, ("u1",))["u1"]
    return -ptt + prr + 2 * pr / r - p0 + u1 * p0


def test_R0_matches_stencil_without_phase():
    d = default_data(epsilon=1.0)
    f = Phi0Field(d)
    rng = np.random.default_rng(4)
    t = rng.uniform(5, 40, 40)
    r = rng.uniform(0.05, 0.95, 40) * (t - 1.2) + 0.3
    ref = _stencil_R0(f, t, r)
    R0 = f.evaluate(t, r, ("R0",))["R0"]
    scale = np.max(np.abs(f.evaluate(t, r, ("phi",))["phi"]))
    assert np.max(np.abs(R0 - ref)) <= 1e-5 * scale


def test_R0_matches_stencil_with_phase():
    d = default_data(epsilon=1.0)
    g = GridSpec(r_max=60.0, n_r=1200, t_end=60.0)
    u1 = closed_form_trajectory(g, lambda t, r: (0.3 / t * np.ones_like(r), -0.3 / t**2 * np.ones_like(r)),
                                "wave", np.linspace(2.0, 60.0, 1200))
    f = Phi0Field(d, u1)
    rng = np.random.default_rng(5)
    t = rng.uniform(8, 50, 30)
    r = rng.uniform(0.05, 0.9, 30) * (t - 3.0) + 0.5
    ref = _stencil_R0(f, t, r)
    R0 = f.evaluate(t, r, ("R0",))["R0"]
    scale = np.max(np.abs(f.evaluate(t, r, ("phi",))["phi"]))
    assert np.max(np.abs(R0 - ref)) <= 1e-4 * scale


def test_phi0_vanishes_outside_taper():
    f = Phi0Field(default_data(epsilon=1.0))
    t = np.linspace(3.0, 50.0, 20)
    d = f.evaluate(t, t - 0.9, ("phi", "phi_t", "phi_r", "R0"))
    assert all(not np.any(v) for v in d.values())


def test_R0_zero_data():
    R0 = compute_R0(default_data(epsilon=0.0))
    assert not np.any(R0(np.array([10.0, 20.0]), np.array([1.0, 5.0])))


def test_R0_decays_along_rays():
    d = default_data(epsilon=1.0)

    class _A:
        phi0 = Phi0Field(d)

        def R0(self, t, r):
            return self.phi0.evaluate(t, r, ("R0",))["R0"]
    out = remainder_decay(_A(), np.geomspace(10, 200, 10), ys=(0.0, 0.5))
    # without a wave field the residual is rho^{-7/2} times bounded factors
    for e, _, _ in out.values():
        assert e <= -3.3


# ---------------------------------------------------------------- F1 and psi01

def test_F1_gaussian_mode_one():
    # 2 F1' = -2 F0 with F1(0) = 0 gives F1 = -(sqrt(pi)/2) erf(q)
    errs = []
    for n in (2001, 4001):
        q = np.linspace(-10, 10, n)
        F1 = build_F1(np.exp(-q * q), q, mode_l=1)
        errs.append(np.max(np.abs(F1 + 0.5 * np.sqrt(np.pi) * special.erf(q))))
    # trapezoid rule: second order
    assert errs[1] < 5e-6 and np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)


def test_F1_vanishes_for_radial_mode():
    q = np.linspace(-10, 10, 101)
    assert not np.any(build_F1(np.exp(-q * q), q, 0))


def test_F1_needs_origin():
    with pytest.raises(DomainError):
        build_F1(np.ones(5), np.linspace(1, 2, 5), 2)


@pytest.mark.parametrize("mode_l", [0, 1, 2])
def test_psi01_box_two_routes(mode_l):
    q = np.linspace(-100, 100, 4001)
    psi = Psi01(q, 0.01 * (1 + q * q) ** -0.45, mode_l=mode_l)
    rng = np.random.default_rng(mode_l)
    t = rng.uniform(20, 300, 200)
    r = t + rng.uniform(-0.2, 0.2, 200) * t
    a, b = psi.box(t, r), psi.box_stencil(t, r)
    scale = np.max(np.abs(a))
    assert scale > 0
    assert np.max(np.abs(a - b)) <= 1e-4 * scale


def test_psi01_support_near_cone():
    q = np.linspace(-50, 50, 1001)
    psi = Psi01(q, np.exp(-q * q / 50))
    t = np.array([100.0, 200.0])
    # <q>/r >= 1/4 means deep interior
    assert not np.any(psi(t, 0.5 * t)) and not np.any(psi.box(t, 0.5 * t))
    assert np.all(psi(t, t) != 0)


def test_psi01_time_derivative():
    q = np.linspace(-50, 50, 2001)
    psi = Psi01(q, np.exp(-q * q / 50), mode_l=1)
    t, r, h = np.array([60.0, 80.0]), np.array([58.0, 85.0]), 1e-4
    _, dt = psi(t, r, with_dt=True)
    fd = (psi(t + h, r) - psi(t - h, r)) / (2 * h)
    # F1' is taken exactly from F0 while F1 itself is trapezoid-integrated
    np.testing.assert_allclose(dt, fd, rtol=1e-5, atol=1e-12)


def test_psi01_probe_bounded():
    d = default_data()
    res = psi01_probe(build_psi01(d), d, n_points=2000)
    assert res["passed"] and np.isfinite(res["sup"])
    assert res["stencil_gap"] <= 1e-3 * res["sup"]


def test_psi01_zero_field():
    d = default_data(F0="zero")
    psi = build_psi01(d)
    assert psi.zero and not np.any(psi.box(np.array([10.0]), np.array([10.0])))


# ---------------------------------------------------------------- ladder

@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=4, max_size=12))
def test_bound_growth_of_decreasing_constants(c):
    c = np.sort(c)[::-1]
    assert bound_growth(c) <= 1.0


def test_zero_data_approximation_and_ladder():
    d = default_data(epsilon=0.0)
    g = GridSpec(r_max=30.0, n_r=300, t_end=40.0)
    approx = build_approximation(d, g.with_(t_end=11.0))
    for tr in (approx.u1, approx.u2, approx.u3):
        assert not np.any(tr.w)
    lad = run_ladder(d, (16.0, 24.0, 40.0), g, approx=approx)
    assert np.all(lad.diffs == 0) and lad.converged
    assert all(c["v"]["passed"] and c["w"]["passed"] for c in lad.energy_checks)


def test_remainder_vanishes_where_cutoff_does():
    # chi(t/T) = 0 for t >= T/4 and the data vanish at T
    d = default_data()
    g = GridSpec(r_max=40.0, n_r=400, t_end=48.0)
    approx = build_approximation(d, g.with_(t_end=13.0))
    T = 48.0
    v, w = solve_backward_remainder(T, approx, g)
    late = v.times >= T / 4 + 1e-9
    assert not np.any(v.w[late]) and not np.any(w.w[late])
    assert np.any(v.w[~late]) and np.any(w.w[~late])


def test_ladder_requires_increasing_times():
    g = GridSpec(r_max=30.0, n_r=300, t_end=40.0)
    with pytest.raises(ConfigError):
        run_ladder(default_data(epsilon=0.0), (20.0, 16.0, 40.0), g)
    with pytest.raises(ConfigError):
        run_ladder(default_data(epsilon=0.0), (16.0, 24.0, 80.0), g)
