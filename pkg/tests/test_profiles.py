import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from wkg.errors import DataError, DomainError, RangeError
from wkg.evolve import GridSpec, closed_form_trajectory, solve_wave_source, zero_trajectory
from wkg.geometry import rho_anchor
from wkg.profiles import (KernelParams, accumulate_phase, compute_Phi_pm, compute_U_kernel,
                          eval_source_P, extract_a_pm, extract_radiation_field,
                          kernel_integral, phase_table, predicted_exponent,
                          radiation_limit_A, sample_kernel_params, u_tilde)
from wkg.scattering import interior_identity_error


# J_1(rho)/rho solves the free Klein-Gordon equation inside the cone, and
# rho^{3/2} J_1(rho)/rho ~ sqrt(2/pi) cos(rho - 3 pi/4), so a_+ is constant
A_BESSEL = np.exp(-0.75j * np.pi) / np.sqrt(2 * np.pi)


def _bessel_field(t, r):
    inside = t - r > 0.5
    rho = np.sqrt(np.where(inside, t * t - r * r, 1.0))
    f = special.j1(rho) / rho
    fp = (special.jvp(1, rho) * rho - special.j1(rho)) / rho**2
    return np.where(inside, f, 0.0), np.where(inside, fp * t / rho, 0.0)


@pytest.fixture(scope="module")
def bessel():
    g = GridSpec(r_max=40.0, n_r=1600, t_end=61.0)
    return closed_form_trajectory(g, _bessel_field, times=np.linspace(2.0, 61.0, 2400))


# ---------------------------------------------------------------- Phi_pm

def test_phi_pm_conjugate_and_reconstruct(bessel):
    pp = compute_Phi_pm(bessel, rho=20.0, y_grid=np.linspace(0, 0.6, 13))
    np.testing.assert_allclose(pp.phi_minus, np.conj(pp.phi_plus), atol=1e-14)
    t = 20.0 / np.sqrt(1 - pp.y_grid**2)
    ref = 20.0**1.5 * special.j1(20.0) / 20.0
    np.testing.assert_allclose(pp.reconstruct().real, ref, rtol=0, atol=1e-7)
    assert np.all(t <= bessel.t_max)
    assert np.max(np.abs(pp.reconstruct().imag)) < 1e-14


def test_phi_pm_requires_coverage(bessel):
    with pytest.raises(RangeError):
        compute_Phi_pm(bessel, rho=80.0, y_grid=[0.0])
    with pytest.raises(DomainError):
        compute_Phi_pm(bessel)


def test_a_plus_of_bessel_solution(bessel):
    y = np.linspace(0.0, 0.6, 7)
    kg = extract_a_pm(bessel, None, (10.0, 20.0, 30.0, 40.0, 48.0), y)
    np.testing.assert_allclose(kg.a_plus, A_BESSEL, atol=2e-3)
    np.testing.assert_allclose(kg.a_minus, np.conj(kg.a_plus))
    assert kg.converged and kg.residual_rate == pytest.approx(-1.0, abs=0.25)


def test_a_plus_of_zero_field():
    g = GridSpec(r_max=40.0, n_r=400, t_end=60.0)
    z = zero_trajectory(g, "klein_gordon")
    kg = extract_a_pm(z, None, (10, 20, 30, 40), np.linspace(0, 0.5, 5))
    assert not np.any(kg.a_plus)


def test_a_plus_needs_spread_of_slices(bessel):
    with pytest.raises(DomainError):
        extract_a_pm(bessel, None, (20, 25, 30, 35), [0.0])


# ---------------------------------------------------------------- phase

def test_phase_of_inverse_rho_is_logarithmic():
    c = 0.3
    u = lambda t, r: c / np.sqrt(t * t - r * r)  # noqa: E731
    for y in (0.0, 0.5, 0.9):
        ph = accumulate_phase(u, y, rho_max=80.0)
        rho = np.array([rho_anchor(y), 20.0, 80.0])
        np.testing.assert_allclose(ph(rho), c * np.log(rho / rho_anchor(y)), atol=1e-9)


def test_phase_table_matches_ray_accumulation():
    c = 0.3
    u = lambda t, r: c / np.sqrt(np.maximum(t * t - r * r, 1e-300))  # noqa: E731
    tab = phase_table(u, 200.0, n_rho=600, n_zeta=200, t_min=0.0)
    for y in (0.0, 0.4, 0.8):
        rho = np.array([10.0, 50.0, 100.0])
        ref = c * np.log(rho / rho_anchor(y))
        np.testing.assert_allclose(tab(rho, np.full(3, y)), ref, atol=1e-6)


def test_phase_outside_range_rejected():
    u = lambda t, r: 0 * t  # noqa: E731
    with pytest.raises(RangeError):
        accumulate_phase(u, 1.0, rho_max=10.0)
    ph = accumulate_phase(u, 0.2, rho_max=10.0)
    with pytest.raises(RangeError):
        ph(11.0)


# ---------------------------------------------------------------- source density

def test_source_density_closed_form():
    y = np.linspace(0.0, 0.999, 400)
    a = (1 - y * y) ** 2
    P = eval_source_P(a, y)
    np.testing.assert_allclose(P, 2 * (1 - y * y) ** 2.5, rtol=1e-13)
    Ps = eval_source_P(a, y, normalization="scattering")
    np.testing.assert_allclose(Ps, 2 * (1 - y * y) ** 2.5 * (1 + 1 / (1 - y * y)), rtol=1e-13)


def test_source_density_checks():
    y = np.linspace(0.0, 0.999, 400)
    with pytest.raises(DataError):
        eval_source_P(np.ones_like(y), y)
    with pytest.raises(DomainError):
        eval_source_P((1 - y * y) ** 2, y, a_minus=1j * (1 - y * y) ** 2)
    with pytest.raises(DomainError):
        eval_source_P((1 - y * y) ** 2)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.99), st.floats(0.0, 2 * np.pi))
def test_source_density_phase_invariant(y, th):
    # P depends on a_+ only through |a_+|^2
    y = np.array([y])
    a = (1 - y * y) ** 2
    assert eval_source_P(a * np.exp(1j * th), y)[0] == pytest.approx(eval_source_P(a, y)[0], rel=1e-13)


# ---------------------------------------------------------------- U kernel

def test_u_kernel_of_constant_source():
    # u = 1/(2t) solves -box u = t^{-3}, so P = 1 gives U_tilde = 1/2 and A = 1/2
    P = lambda z: np.where(np.abs(z) < 1, 1.0, 0.0)  # noqa: E731
    prof = compute_U_kernel(P, np.array([0.0, 0.2, 0.5, 0.8, 0.95]))
    np.testing.assert_allclose(prof.U_tilde, 0.5, rtol=1e-7)
    np.testing.assert_allclose(prof.U, 0.5 * np.sqrt(1 - prof.y_grid**2), rtol=1e-7)
    assert radiation_limit_A(P) == pytest.approx(0.5, rel=1e-8)
    assert prof.A == pytest.approx(0.5, rel=1e-8)


def test_u_kernel_zero_source():
    prof = compute_U_kernel(np.zeros(50), np.linspace(0, 0.9, 50))
    assert not np.any(prof.U) and prof.A == 0.0


def test_u_kernel_continuous_at_origin():
    P = lambda z: np.where(np.abs(z) < 1, (1 - z * z) ** 2, 0.0)  # noqa: E731
    assert u_tilde(P, 1e-4) == pytest.approx(u_tilde(P, 0.0), rel=1e-6)


def test_u_kernel_agrees_with_evolution():
    # dual route: Duhamel evolution of t^{-3} P(r/t) against the kernel formula
    P = lambda z: np.where(np.abs(z) < 1, 2 * np.clip(1 - z * z, 0, None) ** 2.5, 0.0)  # noqa: E731
    g = GridSpec(r_max=120.0, n_r=2400, t_end=110.0)
    u = solve_wave_source(g, lambda t, r: np.where(r < t, t**-3.0 * P(r / t), 0.0), 0)
    prof = compute_U_kernel(P, np.linspace(0.0, 0.99, 120))
    assert interior_identity_error(u, prof) <= 0.02


def test_u_kernel_rejects_bad_grid():
    with pytest.raises(DomainError):
        compute_U_kernel(np.ones(3), np.array([0.0, 0.5, 1.0]))


# ---------------------------------------------------------------- radiation field

def _outgoing(t, r):
    g = lambda s: np.exp(-((s - 3.0) ** 2))  # noqa: E731
    gp = lambda s: -2 * (s - 3.0) * g(s)  # noqa: E731
    rs = np.where(r > 0, r, 1.0)
    f = np.where(r > 0, (g(t - r) - g(t + r)) / rs, -2 * gp(t))
    ft = np.where(r > 0, (gp(t - r) - gp(t + r)) / rs, 0.0)
    return f, ft


def test_radiation_field_of_free_wave():
    g = GridSpec(r_max=70.0, n_r=1400, t_end=60.0)
    tr = closed_form_trajectory(g, _outgoing, field_kind="wave",
                                times=np.linspace(2.0, 60.0, 600))
    q = np.linspace(-15.0, 9.0, 97)
    rad = extract_radiation_field(tr, q)
    np.testing.assert_allclose(rad.F, np.exp(-((-q - 3.0) ** 2)), atol=1e-6)


def test_radiation_field_of_zero_wave():
    g = GridSpec(r_max=70.0, n_r=700, t_end=60.0)
    rad = extract_radiation_field(zero_trajectory(g))
    assert not np.any(rad.F) and rad.A_interior == 0.0


def test_radiation_needs_characteristic_coverage():
    g = GridSpec(r_max=30.0, n_r=300, t_end=60.0)
    with pytest.raises(RangeError):
        extract_radiation_field(zero_trajectory(g))


# ---------------------------------------------------------------- kernel integral

@pytest.mark.parametrize("params", [KernelParams(0.5, 0.3, 0.2, 0.4, 0.1),
                                    KernelParams(-0.5, 0.6, 0.8, 0.2, 0.7),
                                    KernelParams(0.0, 0.0, 0.0, 0.0, 0.0)])
@pytest.mark.parametrize("s", [0.3, 0.8])
def test_kernel_integral_two_routes(params, s):
    # incomplete-beta reduction against direct (l, eta_1) quadrature
    a = params.alpha_k
    q = KernelParams(*(params.alpha_k, params.beta_k, params.gamma_k,
                       params.mu_k, params.nu_k), Q=lambda z: (1 - z * z) ** a)
    assert kernel_integral(params, s) == pytest.approx(kernel_integral(q, s, 1e-9), rel=1e-5)


def test_kernel_integral_volume_case():
    # all weights zero at s = 0: the l-range is [1/2, 1] for every direction,
    # so I = 4 pi int_{1/2}^1 l^{-3} dl = 6 pi
    p = KernelParams(0.0, 0.0, 0.0, 0.0, 0.0)
    assert kernel_integral(p, 0.0) == pytest.approx(6 * np.pi, rel=1e-10)


def test_kernel_params_admissibility():
    assert not KernelParams(-0.9, 0, 0, 0, 0).admissible()
    assert not KernelParams(0.0, 0.9, 0.0, 0.4, 0.0).admissible()
    ps = sample_kernel_params(np.random.default_rng(3), 20)
    assert len(ps) == 20 and all(p.admissible() for p in ps)
    p = KernelParams(0.5, 0.3, 0.2, 0.4, 0.1)
    assert predicted_exponent(p) == pytest.approx(-0.2 - 0.1 + 0.6 + 0.4)
