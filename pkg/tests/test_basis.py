from math import pi

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from ttdensity.basis import (
    angular_basis,
    angular_moments,
    basis_from_dict,
    basis_times_trigpower_integral,
    radial_basis,
    trig_basis,
    trig_power_integral,
    weighted_monomial_integral,
)


def gram(basis, n_nodes=400):
    lo, hi = basis.interval
    t, w = np.polynomial.legendre.leggauss(n_nodes)
    x = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * w * basis.weight(x)
    P = basis.evaluate(x)
    return P.T @ (P * w[:, None])


@pytest.mark.parametrize("interval,d", [((0.0, 1.0), 2), ((0.0, 0.5), 10), ((9.0, 10.0), 10), ((3.0, 3.5), 5)])
def test_radial_gram_is_identity(interval, d):
    B = radial_basis(interval, 8, d)
    assert np.abs(gram(B) - np.eye(8)).max() < 1e-10


@pytest.mark.parametrize("i", [1, 2, 3, 8])
def test_angular_gram_is_identity(i):
    B = angular_basis(i, 6)
    assert np.abs(gram(B) - np.eye(6)).max() < 1e-10


@pytest.mark.parametrize("n", [1, 5, 21, 41])
def test_trig_gram_is_identity(n):
    B = trig_basis(n)
    x = 2 * pi * np.arange(256) / 256
    P = B.evaluate(x)
    assert np.abs((2 * pi / 256) * P.T @ P - np.eye(n)).max() < 1e-12


def test_trig_index_convention():
    B = trig_basis(5)
    x = np.array([0.3])
    v = B.evaluate(x)[0]
    expected = [1 / np.sqrt(2 * pi), np.sin(0.3), np.cos(0.3), np.sin(0.6), np.cos(0.6)]
    expected[1:] = [e / np.sqrt(pi) for e in expected[1:]]
    assert np.allclose(v, expected)


def test_radial_degree_and_positive_leading_direction():
    B = radial_basis((0.0, 1.0), 4, 3)
    assert [p.degree for p in B.polynomials] == [0, 1, 2, 3]


@pytest.mark.parametrize("m,j", [(0, 0), (1, 1), (3, 2), (5, 0), (4, 4)])
def test_radial_monomial_integral_vs_quadrature(m, j):
    B = radial_basis((1.0, 2.0), 5, 3)
    ref = quad(lambda x: x**m * B.evaluate([x])[0, j] * x**2, 1.0, 2.0, epsabs=1e-14)[0]
    assert weighted_monomial_integral(B, m, j) == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("a,b", [(0, 0), (1, 0), (2, 1), (3, 2), (0, 4)])
def test_trigpower_integrals_vs_quadrature(a, b):
    A = angular_basis(2, 4)
    T = trig_basis(7)
    for basis, lo, hi in ((A, 0.0, pi), (T, 0.0, 2 * pi)):
        for j in range(len(basis)):
            ref = quad(lambda x: basis.evaluate([x])[0, j] * np.sin(x) ** a * np.cos(x) ** b * basis.weight(x),
                       lo, hi, epsabs=1e-13, limit=200)[0]
            assert basis_times_trigpower_integral(basis, j, a, b) == pytest.approx(ref, abs=1e-11)


@given(st.integers(0, 6), st.integers(0, 6))
def test_closed_form_trig_power(a, b):
    for family, hi in (("trig", 2 * pi), ("angular", pi)):
        ref = quad(lambda x: np.sin(x) ** a * np.cos(x) ** b, 0, hi, epsabs=1e-13)[0]
        assert trig_power_integral(a, b, family) == pytest.approx(ref, abs=1e-12)


def test_angular_moments_vs_quadrature():
    mom = angular_moments(3, 6, 60)
    for k in range(6):
        ref = quad(lambda x: (2 * x / pi - 1) ** k * np.sin(x) ** 3, 0, pi, epsabs=1e-14)[0]
        assert float(mom[k]) == pytest.approx(ref, rel=1e-12, abs=1e-14)


def test_basis_serialization_round_trip():
    for B in (radial_basis((0.5, 1.0), 4, 3), angular_basis(2, 3), trig_basis(5)):
        C = basis_from_dict(B.to_dict())
        x = np.linspace(*B.interval, 7)
        assert np.array_equal(B.evaluate(x), C.evaluate(x))


def test_invalid_arguments():
    with pytest.raises(ValueError):
        radial_basis((1.0, 0.5), 3, 2)
    with pytest.raises(ValueError):
        radial_basis((0.0, 1.0), 3, 2, tau_mant=20)
    with pytest.raises(ValueError):
        angular_basis(0, 3)
    with pytest.raises(ValueError):
        trig_basis(0)
    with pytest.raises(ValueError):
        trig_power_integral(-1, 0, "trig")
