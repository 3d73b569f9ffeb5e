import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from sourcefilter import spectral
from sourcefilter.errors import DomainError, ParameterError
from sourcefilter.model import InitialMeasure


def test_basis_constants(small_basis):
    assert small_basis.c == -1.0
    assert small_basis.sigma[0] == 0.0
    assert small_basis.sigma[1] == pytest.approx(1 + np.pi ** 2, rel=1e-15)
    assert small_basis.sigma[1] == pytest.approx(10.8696, abs=1e-4)
    assert small_basis.k[1] == pytest.approx(np.arctan(np.pi), rel=1e-15)
    assert small_basis.k[1] == pytest.approx(1.26263, abs=1e-5)


@pytest.mark.parametrize("a,b,J", [(0.0, 2.0, 5), (-1.0, 2.0, 5), (1.0, 2.0, 0), (1.0, 0.0, 5)])
def test_build_basis_rejects(a, b, J):
    with pytest.raises(ParameterError):
        spectral.build_basis(a, b, J)


@pytest.mark.parametrize("a,b", [(1.0, 2.0), (0.5, -1.0), (2.0, 3.0)])
def test_basis_invariants(a, b):
    B = spectral.build_basis(a, b, 50)
    assert np.all(np.diff(B.sigma) > 0)
    assert np.all(np.abs(B.k[1:]) < np.pi / 2)
    mass = integrate.quad(lambda x: np.exp(-2 * B.c * x), 0, 1)[0]
    assert B.psi0_norm ** 2 * mass == pytest.approx(1.0, abs=1e-12)


def test_psi_reference_values(basis):
    # psi_0 = sqrt(2c/(1-e^{-2c})) with c = -1
    assert spectral.psi(basis, 0, 0.5) == pytest.approx(np.sqrt(2 / (np.e ** 2 - 1)), rel=1e-14)
    assert spectral.psi(basis, 1, 0.0) == pytest.approx(
        np.sqrt(2) * np.pi / np.sqrt(1 + np.pi ** 2), rel=1e-14)
    root = (np.pi - basis.k[1]) / np.pi
    assert abs(spectral.psi(basis, 1, root)) < 1e-14


@pytest.mark.parametrize("j,x", [(-1, 0.5), (201, 0.5), (1, -0.1), (1, 1.1)])
def test_psi_range_checks(basis, j, x):
    with pytest.raises(ParameterError):
        spectral.psi(basis, j, x)
    with pytest.raises(ParameterError):
        spectral.psi_deriv(basis, j, x)


def test_psi_deriv_finite_difference(basis):
    h = 1e-5
    fd = (spectral.psi(basis, 2, 0.3 + h) - spectral.psi(basis, 2, 0.3 - h)) / (2 * h)
    assert spectral.psi_deriv(basis, 2, 0.3) == pytest.approx(fd, rel=1e-6)


def test_neumann_boundary(basis):
    d = spectral.modes_deriv(basis, np.array([0.0, 1.0]))
    scale = np.arange(basis.J + 1) * np.pi + 1
    assert np.max(np.abs(d) / scale) <= 1e-10
    assert spectral.psi_deriv(basis, 0, 0.3) == 0.0


def test_weighted_orthonormality(basis):
    n = 21
    gram = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            f = lambda x: spectral.psi(basis, i, x) * spectral.psi(basis, j, x) * np.exp(-2 * basis.c * x)
            gram[i, j] = gram[j, i] = integrate.quad(f, 0, 1, limit=200, epsabs=1e-12)[0]
    assert np.max(np.abs(gram - np.eye(n))) <= 1e-6


def test_eigen_relation(basis):
    h = 1e-3
    xs = np.linspace(0.05, 0.95, 19)
    a, b = basis.a, -2 * basis.a * basis.c
    for j in range(1, 11):
        f = lambda x: spectral.modes(basis, x)[..., j]
        d2 = (f(xs + h) - 2 * f(xs) + f(xs - h)) / h ** 2
        d1 = spectral.modes_deriv(basis, xs)[:, j]
        sup = np.max(np.abs(f(np.linspace(0, 1, 2001))))
        resid = np.abs(a * d2 + b * d1 + basis.sigma[j] * f(xs))
        assert np.max(resid) <= 1e-3 * (1 + basis.sigma[j]) * sup


def test_modes_match_psi(basis):
    xs = np.array([0.0, 0.17, 0.5, 1.0])
    m = spectral.modes(basis, xs)
    for j in (0, 1, 7, 200):
        for i, x in enumerate(xs):
            assert m[i, j] == pytest.approx(spectral.psi(basis, j, x), rel=1e-12, abs=1e-14)


def test_green_large_t(basis):
    assert spectral.green(basis, 50.0, 0.3, 0.8) == pytest.approx(basis.psi0_norm ** 2, rel=1e-12)


def test_green_truncation_refinement(basis):
    fine = spectral.build_basis(1.0, 2.0, 400)
    assert abs(spectral.green(basis, 0.1, 0.6, 0.2) - spectral.green(fine, 0.1, 0.6, 0.2)) <= 1e-12


def test_green_positive_at_matched_points(basis):
    assert spectral.green(basis, 0.5, 0.5, 0.5) > 0


def test_green_rejects_short_lags(basis):
    with pytest.raises(DomainError):
        spectral.green(basis, 1e-9, 0.5, 0.5)
    with pytest.raises(ParameterError):
        spectral.green(basis, 0.1, 1.5, 0.5)


@pytest.mark.parametrize("t", [0.01, 0.02, 0.05, 0.1, 1.0])
def test_green_truncation_within_tail_bound(t):
    coarse = spectral.build_basis(1.0, 2.0, 10)
    fine = spectral.build_basis(1.0, 2.0, 20)
    bound = spectral.green_tail_bound(coarse, t)
    for y, x in [(0.6, 0.2), (0.1, 0.9), (0.5, 0.5)]:
        assert abs(spectral.green(coarse, t, y, x) - spectral.green(fine, t, y, x)) <= bound


def test_decayed_sum_matches_direct(basis):
    rng = np.random.default_rng(0)
    lags = rng.uniform(1e-6, 2.0, size=50)
    w = rng.normal(size=basis.n_modes)
    direct = np.exp(-np.multiply.outer(lags, basis.sigma)) @ w
    assert np.allclose(spectral.decayed_sum(basis.sigma, lags, w), direct, rtol=1e-12, atol=1e-12)


def test_decayed_sum_independent_of_batch(basis):
    lags = np.linspace(1e-4, 1, 37)
    w = spectral.modes(basis, 0.6)
    full = spectral.decayed_sum(basis.sigma, lags, w)
    single = np.array([spectral.decayed_sum(basis.sigma, np.array([t]), w)[0] for t in lags])
    assert np.array_equal(full, single)


def test_semigroup_zero_function(basis):
    assert spectral.semigroup_apply(basis, 0.3, np.zeros(201), 0.4) == 0.0


def test_semigroup_matches_green_quadrature(basis):
    t, y = 2.0, 0.3
    direct = integrate.quad(lambda x: spectral.green(basis, t, y, x), 0, 1)[0]
    assert spectral.semigroup_apply(basis, t, np.ones(201), y) == pytest.approx(direct, rel=1e-9)
    # large t: only psi_0 survives
    mass = basis.psi0_norm ** 2
    assert spectral.semigroup_apply(basis, 60.0, np.ones(201), y) == pytest.approx(mass, rel=1e-9)


def test_semigroup_at_zero_interpolates(basis):
    f = np.sin(spectral.uniform_grid(201))
    assert spectral.semigroup_apply(basis, 0.0, f, 0.37) == pytest.approx(np.sin(0.37), abs=1e-5)
    with pytest.raises(ParameterError):
        spectral.semigroup_apply(basis, 0.1, np.array([]), 0.3)


@settings(max_examples=25, deadline=None)
@given(t=st.floats(0.0, 2.0), s=st.floats(0.0, 2.0))
def test_semigroup_composition(basis, t, s):
    coeffs = spectral.project(basis, np.cos(3 * spectral.uniform_grid(201)))
    once = spectral.semigroup_coeffs(basis, t + s, coeffs)
    twice = spectral.semigroup_coeffs(basis, s, spectral.semigroup_coeffs(basis, t, coeffs))
    assert np.allclose(once, twice, rtol=1e-12, atol=1e-300)


def test_measure_coeffs(basis):
    point = spectral.measure_coeffs(basis, InitialMeasure.point_masses([(0.4, 1.0)]))
    assert np.allclose(point, spectral.modes(basis, 0.4), rtol=0, atol=0)
    assert not np.any(spectral.measure_coeffs(basis, InitialMeasure.zero()))
    dens = spectral.measure_coeffs(basis, InitialMeasure.constant(1.0))
    assert dens[0] == pytest.approx(basis.psi0_norm, rel=1e-12)
    with pytest.raises(ParameterError):
        InitialMeasure.point_masses([(0.4, -1.0)])


def test_resolvent_matches_series():
    B = spectral.build_basis(1.0, 2.0, 20000)
    for rate in (5.0, 10.0 + B.sigma[3]):
        for y, x in [(0.6, 0.2), (0.2, 0.6), (0.9, 0.1)]:
            series = np.sum(spectral.modes(B, y) * spectral.modes(B, x) / (rate + B.sigma))
            # the series tail oscillates and decays like 1/J^2
            assert spectral.resolvent(B, rate, y, x) == pytest.approx(series, abs=1e-9)


@pytest.mark.parametrize("y", [0.1, 0.35, 0.6, 0.9])
def test_resolvent_derivative(basis, y):
    h = 1e-6
    fd = (spectral.resolvent(basis, 5.0, y + h, 0.2) - spectral.resolvent(basis, 5.0, y - h, 0.2)) / (2 * h)
    assert spectral.resolvent_dy(basis, 5.0, y, 0.2) == pytest.approx(fd, rel=1e-6)
