import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.special import roots_hermite

from wnpath.specfun import (
    MAX_HERMITE_DEGREE,
    hermite,
    hermite_he,
    hermite_table,
    simplex_singular_volume,
    theta,
)

complexes = st.complex_numbers(max_magnitude=3.0, allow_nan=False, allow_infinity=False)


def test_hermite_examples():
    assert hermite(0, 1.7 + 0.3j) == 1
    assert hermite(2, 0.0) == -2
    assert abs(hermite(4, math.sqrt(2.0)) - (-20.0)) < 1e-12


def test_hermite_exact_integers():
    # H_5(1) = 32 - 160 + 120, H_6(2) = 64*64 - 480*16 + 720*4 - 120
    assert hermite(5, 1.0) == -8
    assert hermite(6, 2.0) == -824


@given(complexes, st.integers(min_value=1, max_value=40))
def test_hermite_recurrence(z, n):
    h = hermite_table(n + 1, z)
    lhs = h[n + 1]
    rhs = 2 * z * h[n] - 2 * n * h[n - 1]
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_hermite_rejects_large_degree():
    with pytest.raises(ValueError):
        hermite(MAX_HERMITE_DEGREE + 1, 0.5)
    with pytest.raises(ValueError):
        hermite(-1, 0.5)


@pytest.mark.parametrize("n", [50, 80, 120, 200])
def test_szego_growth(n):
    # |H_n(x)| <= 2 * sqrt(2^n n!) exp(x^2/2) times a modest constant, n >= 50
    xs = np.linspace(-3, 3, 61)
    vals = np.abs(hermite_table(n, xs)[n])
    log_bound = 0.5 * (n * math.log(2) + math.lgamma(n + 1)) + xs ** 2 / 2
    assert np.all(np.log(vals + 1e-300) <= log_bound + math.log(2.0))


def test_gauss_hermite_orthogonality():
    x, w = roots_hermite(40)
    H = hermite_table(12, x).real
    norms = np.array([math.sqrt(math.sqrt(math.pi) * 2 ** n * math.factorial(n)) for n in range(13)])
    h = H / norms[:, None]
    gram = (h * w) @ h.T
    assert np.max(np.abs(gram - np.eye(13))) < 1e-10


def test_hermite_he_matches_probabilists():
    x = np.linspace(-2, 2, 9)
    assert np.allclose(hermite_he(3, x), x ** 3 - 3 * x, atol=1e-13)
    assert np.allclose(hermite_he(2, x), x ** 2 - 1, atol=1e-13)


def _theta_direct(rho, tau, n=60):
    k = np.arange(-n, n + 1)
    return np.sum(np.exp(1j * np.pi * k * k * tau + 2j * np.pi * k * rho))


def test_theta_reference_value():
    assert abs(theta(0.0, 1j) - _theta_direct(0.0, 1j)) < 1e-14
    assert abs(theta(0.0, 1j) - 1.0864348112133080) < 1e-14


@given(complexes, st.floats(min_value=0.2, max_value=3.0), st.floats(-2, 2))
def test_theta_periodic_and_even(rho, im_tau, re_tau):
    tau = complex(re_tau, im_tau)
    rho = complex(rho.real, max(-1.0, min(1.0, rho.imag)))
    base = theta(rho, tau)
    scale = max(1.0, abs(base))
    assert abs(theta(rho + 1, tau) - base) <= 1e-12 * scale
    assert abs(theta(-rho, tau) - base) <= 1e-12 * scale


@pytest.mark.parametrize("rho,tau", [(0.3, 0.5 + 0.7j), (0.1 + 0.2j, 1j), (0.45, 0.05 + 0.3j)])
def test_theta_cutoff_doubling(rho, tau):
    ref = _theta_direct(rho, tau, n=400)
    assert abs(theta(rho, tau) - ref) < 1e-14 * max(1.0, abs(ref))


@pytest.mark.parametrize("tau", [1.0, 1 - 1e-3j, -1j])
def test_theta_rejects_closed_half_plane(tau):
    with pytest.raises(ValueError):
        theta(0.1, tau)


def test_simplex_volume_examples():
    # one gap factor only: (2 pi)^(-1/2) with Delta = 1
    assert abs(simplex_singular_volume(0, 0.5, 1.0) - (2 * math.pi) ** -0.5) < 1e-15
    assert abs(simplex_singular_volume(1, 0.0, 2.0) - 2.0) < 1e-14


def test_simplex_volume_nested_quadrature():
    # n = 3 interior times, alpha = 1/2, interval 1: substitute gaps g = u^2
    alpha, T = 0.5, 1.0
    c = (2 * math.pi) ** -alpha

    def inner(u2, u1):
        rem = T - u1 * u1 - u2 * u2
        if rem <= 0:
            return 0.0
        r = math.sqrt(rem)
        # last gap rem - u3^2 = (r - u3)(r + u3); the endpoint singularity goes in the weight
        val, _ = quad(lambda u3: 1.0 / math.sqrt(r + u3), 0.0, r, weight="alg", wvar=(0.0, -0.5))
        return 8 * c ** 4 * val

    def middle(u1):
        top = math.sqrt(max(T - u1 * u1, 0.0))
        return quad(lambda u2: inner(u2, u1), 0.0, top, epsabs=1e-13, epsrel=1e-12)[0]

    val, _ = quad(middle, 0.0, math.sqrt(T), epsabs=1e-13, epsrel=1e-12)
    assert abs(simplex_singular_volume(3, alpha, T) - val) < 1e-8


def test_simplex_volume_quarter_exponent():
    alpha, T, n = 0.25, 1.5, 2
    c = (2 * math.pi) ** -alpha

    # n = 2 interior times have three gaps; integrate gaps g1, g2 and close with g3
    def f2(g2, g1):
        g3 = T - g1 - g2
        if g3 <= 0:
            return 0.0
        return c ** 3 * (g1 * g2 * g3) ** -alpha

    val, _ = quad(lambda g1: quad(lambda g2: f2(g2, g1), 0, T - g1, epsabs=1e-12, epsrel=1e-12)[0],
                  0, T, epsabs=1e-12, epsrel=1e-12)
    assert abs(simplex_singular_volume(n, alpha, T) - val) < 1e-7


@pytest.mark.parametrize("alpha", [1.0, 1.5])
def test_simplex_volume_rejects_alpha(alpha):
    with pytest.raises(ValueError):
        simplex_singular_volume(2, alpha, 1.0)
