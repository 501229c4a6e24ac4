import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import bisect

from wkg.errors import DomainError
from wkg.geometry import (CutoffChi, chi, foliation_junction, from_hyperboloidal,
                          japanese, junction_radius, rho_anchor, slice_times,
                          smoothstep, to_hyperboloidal)


def test_on_axis_point():
    p = to_hyperboloidal(2.0, 0.0)
    assert p.rho == 2.0 and p.y_abs == 0.0 and p.q == -2.0


def test_pythagorean_point():
    p = to_hyperboloidal(5.0, 3.0)
    assert p.rho == pytest.approx(4.0, abs=1e-15)
    assert p.y_abs == pytest.approx(0.6, abs=1e-15)
    assert p.q == -2.0


def test_light_cone_point_has_no_rho():
    p = to_hyperboloidal(3.0, 3.0)
    assert not p.defined and np.isnan(p.rho) and p.q == 0.0


@pytest.mark.parametrize("t,r", [(np.nan, 1.0), (1.0, np.inf), (0.0, 0.0), (1.0, -0.5)])
def test_bad_coordinates_rejected(t, r):
    with pytest.raises(DomainError):
        to_hyperboloidal(t, r)


@given(st.floats(0.01, 1e4), st.floats(0.0, 0.999))
def test_round_trip(rho, y):
    t, r = from_hyperboloidal(rho, y)
    p = to_hyperboloidal(t, r)
    assert p.rho == pytest.approx(rho, rel=1e-12)
    assert p.y_abs == pytest.approx(y, rel=1e-12, abs=1e-15)
    assert p.rho**2 + r**2 == pytest.approx(t**2, rel=1e-12)


def test_junction_exact_roots():
    # 2 r^{3/2} + r = rho^2 with r = 1 and r = 4
    assert junction_radius(np.sqrt(3.0)) == pytest.approx(1.0, rel=1e-13)
    sl = foliation_junction(np.sqrt(20.0))
    assert sl.r_junction == pytest.approx(4.0, rel=1e-13)
    assert sl.t_junction == pytest.approx(6.0, rel=1e-13)


def test_junction_against_bisection():
    ref = bisect(lambda r: 2 * r**1.5 + r - 1e4, 0.0, 1e4, xtol=1e-14, rtol=1e-15)
    sl = foliation_junction(100.0)
    assert sl.r_junction == pytest.approx(ref, rel=1e-12)
    assert abs(1e4 - 2 * sl.r_junction**1.5 - sl.r_junction) <= 1e-12 * 1e4


def test_junction_below_foliation_rejected():
    with pytest.raises(DomainError):
        foliation_junction(1.9)


@given(st.floats(2.0, 1e5))
def test_junction_invariants(rho):
    sl = foliation_junction(rho)
    r, t = sl.r_junction, sl.t_junction
    assert t - r == pytest.approx(np.sqrt(r), rel=1e-12)
    assert t * t - r * r == pytest.approx(rho * rho, rel=1e-10)


@given(st.floats(2.0, 1e4), st.floats(1e-6, 1e3))
def test_junction_monotone(rho, d):
    assert foliation_junction(rho + d).r_junction > foliation_junction(rho).r_junction


def test_junction_growth_rate():
    rhos = np.array([1e3, 1e4, 1e5])
    t = np.array([foliation_junction(x).t_junction for x in rhos])
    k = np.polyfit(np.log(rhos), np.log(t), 1)[0]
    assert k == pytest.approx(4 / 3, abs=0.01)


@given(st.floats(2.0, 500.0), st.floats(2.0, 500.0))
def test_slices_disjoint(rho1, rho2):
    if abs(rho1 - rho2) < 1e-6:
        return
    r = np.linspace(0.0, 2 * max(rho1, rho2) ** 1.5, 200)
    t1, _ = slice_times(rho1, r)
    t2, _ = slice_times(rho2, r)
    assert np.all(np.sign(t2 - t1) == np.sign(rho2 - rho1))


def test_chi_values():
    assert chi(0.0) == 1.0
    assert chi(0.3) == 0.0
    v = chi(3 / 16)
    assert 0 < v < 1
    assert chi(3 / 16 - 1e-3) >= v >= chi(3 / 16 + 1e-3)
    assert CutoffChi()(0.1) == 1.0


def test_chi_plateaus_exact():
    s = np.linspace(-1, 0.125, 50)
    assert np.all(chi(s) == 1.0)
    s = np.linspace(0.25, 3, 50)
    assert np.all(chi(s) == 0.0)


def test_chi_monotone_and_smooth():
    s = np.linspace(0.1, 0.3, 4001)
    assert np.all(np.diff(chi(s)) <= 0)
    # four continuous derivatives: each vanishes at both transition ends
    for k in range(1, 5):
        scale = np.max(np.abs(chi(s, k)))
        assert abs(chi(0.125 + 1e-9, k)) < 1e-6 * scale
        assert abs(chi(0.25 - 1e-9, k)) < 1e-6 * scale


def test_chi_derivative_matches_difference():
    s = np.linspace(0.13, 0.24, 7)
    h = 1e-6
    fd = (chi(s + h) - chi(s - h)) / (2 * h)
    np.testing.assert_allclose(chi(s, 1), fd, rtol=1e-6, atol=1e-8)


def test_chi_on_grid_points():
    t = np.linspace(2, 400, 3000)
    r = np.linspace(1, 500, 3000)
    T, R = np.meshgrid(t, r)
    v = chi(japanese(T - R) / R)
    s = japanese(T - R) / R
    assert np.all(v[s <= 0.125] == 1.0)
    assert np.all(v[s >= 0.25] == 0.0)


def test_smoothstep_ends():
    assert smoothstep(0.0) == 0.0 and smoothstep(1.0) == 1.0
    assert smoothstep(0.5) == pytest.approx(0.5)


def test_rho_anchor():
    assert rho_anchor(0.0) == 2.0
    y = 0.9
    assert rho_anchor(y) == pytest.approx(np.sqrt(19.0))
    # the anchor lies on t - r = 1 once it exceeds 2
    t, r = from_hyperboloidal(rho_anchor(y), y)
    assert t - r == pytest.approx(1.0)
