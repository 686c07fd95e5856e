import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.special import gamma

from wnpath.appell1d import (
    GaussianDensity,
    GaussianMixtureDensity,
    QuarticDensity,
    appell_p,
    appell_q,
    biorthogonality,
    change_of_measure,
    charlier,
    charlier_orthogonality,
    fit_moment_constant,
    laplace_transform,
    pn_expansion_in,
    radon_nikodym_general,
    s_mu_and_c_mu,
    s_mu_q_series,
    wick_q,
)
from wnpath.specfun import hermite

GAUSS = GaussianDensity()
QUARTIC = QuarticDensity()
MIXTURE = GaussianMixtureDensity([0.3, 0.7], [-0.5, 0.8], [0.6, 0.9])
Z4 = gamma(0.25) / 2


def quartic_pdf(x):
    return np.exp(-x ** 4) / Z4


def quartic_quad(f):
    # e^{-x^4} is below 1e-300 outside [-8, 8]
    return quad(lambda x: f(x) * quartic_pdf(x), -8.0, 8.0, epsabs=1e-14, epsrel=1e-13,
                limit=200)[0]


def test_densities_normalized():
    for mu in (GAUSS, QUARTIC, MIXTURE, GaussianDensity(0.4, 1.7)):
        assert abs(mu.expect(lambda x: np.ones_like(x)) - 1) < 1e-10


@pytest.mark.parametrize("theta", [0.0, 0.7, -1.3, 0.5 + 2j])
def test_laplace_gaussian(theta):
    assert abs(laplace_transform(GAUSS, theta) - np.exp(theta ** 2 / 2)) < 1e-12 * abs(
        np.exp(theta ** 2 / 2))


def test_laplace_normalization():
    for mu in (GAUSS, QUARTIC, MIXTURE):
        assert abs(laplace_transform(mu, 0.0) - 1) < 1e-12


def test_laplace_quartic_oracle():
    ref = quartic_quad(np.exp)
    # moment series as a second independent route
    series = sum(math.exp(math.lgamma((2 * k + 1) / 4) - math.lgamma(0.25) - math.lgamma(2 * k + 1))
                 for k in range(40))
    val = laplace_transform(QUARTIC, 1.0)
    assert abs(val - ref) < 1e-10
    assert abs(val - series) < 1e-10


def test_laplace_rejects_outside_strip():
    mu = GaussianMixtureDensity([1.0], [0.0], [1.0])
    mu.eps = 1.0
    with pytest.raises(ValueError):
        laplace_transform(mu, 1.5)


@pytest.mark.parametrize("n", range(9))
def test_gaussian_p_is_wick_power(n):
    sys = appell_p(GAUSS, 8)
    x = np.linspace(-3, 3, 13)
    ref = 2 ** (-n / 2) * hermite(n, x / math.sqrt(2))
    assert np.allclose(sys.p(n, x), ref, atol=1e-10 * max(1, math.factorial(n)))
    assert np.allclose(appell_q(GAUSS, n, x), ref, atol=1e-10 * max(1, math.factorial(n)))


@pytest.mark.parametrize("mu", [GAUSS, QUARTIC, MIXTURE, GaussianDensity(0.4, 1.7)])
def test_p_one_and_zero_mean(mu):
    sys = appell_p(mu, 6)
    M1 = mu.moments(1)[1]
    x = np.array([-1.0, 0.3, 2.0])
    assert np.allclose(sys.p(1, x), x - M1, atol=1e-12)
    assert np.allclose(sys.p(0, x), 1.0)
    for n in range(1, 7):
        assert abs(mu.expect(lambda x, n=n: sys.p(n, x))) < 1e-9 * math.factorial(n)
    # P_n is monic of degree n
    for n in range(7):
        assert len(sys.coeffs[n]) == n + 1 and abs(sys.coeffs[n][-1] - 1) < 1e-10


def test_q_examples():
    x = np.linspace(-2, 2, 9)
    assert np.all(appell_q(QUARTIC, 0, x) == 1)
    assert np.allclose(appell_q(QUARTIC, 1, x), 4 * x ** 3, atol=1e-14)
    # -rho''/rho ... second order by hand: Q_2 = 16 x^6 - 12 x^2
    assert np.allclose(appell_q(QUARTIC, 2, x), 16 * x ** 6 - 12 * x ** 2, atol=1e-12)
    with pytest.raises(ValueError):
        appell_q(QUARTIC, -1, x)


@pytest.mark.parametrize("mu", [GAUSS, QUARTIC], ids=["gauss", "quartic"])
def test_biorthogonality_table(mu):
    sys = appell_p(mu, 8)
    for n in range(9):
        for m in range(9):
            val = biorthogonality(mu, n, m, sys)
            ref = math.factorial(n) if n == m else 0.0
            assert abs(val - ref) < 1e-8 * max(1.0, ref)
    assert abs(biorthogonality(mu, 3, 3) - 6) < 1e-8
    assert abs(biorthogonality(mu, 0, 0) - 1) < 1e-12


def test_radon_nikodym_examples():
    phi = [1.0, -2.0, 0.5]
    mean = GAUSS.expect(lambda x: 1 - 2 * x + 0.5 * x * x)
    assert abs(radon_nikodym_general(GAUSS, 0.0, phi) - mean) < 1e-12
    assert abs(radon_nikodym_general(GAUSS, 1.0, [0, 0, 1]) - 2.0) < 1e-10
    series, direct = radon_nikodym_general(QUARTIC, 0.3, [0, 0, 0, 1], return_both=True)
    assert abs(series - direct) < 1e-8
    # independent oracle: int (x - z)^3 rho = -3 z M_2 - z^3
    M2 = QUARTIC.moments(2)[2].real
    assert abs(direct - (-3 * 0.3 * M2 - 0.3 ** 3)) < 1e-10


def test_s_and_c_examples(rng):
    for _ in range(5):
        phi = rng.normal(size=5)
        theta = rng.uniform(-1, 1)
        s, c = s_mu_and_c_mu(GAUSS, phi, theta)
        assert abs(s - c) < 1e-10 * max(1, abs(c))
    s, c = s_mu_and_c_mu(QUARTIC, [1.0], 0.4)
    assert abs(s - 1) < 1e-12 and c == 1
    s, c = s_mu_and_c_mu(QUARTIC, [0, 0, 1.0], 0.5)
    # oracles: C is theta^2; S by direct quadrature with P_2 = x^2 - M_2
    M2 = QUARTIC.moments(2)[2]
    num = quartic_quad(lambda x: (x * x - M2.real) * np.exp(0.5 * x))
    den = quartic_quad(lambda x: np.exp(0.5 * x))
    assert abs(c - 0.25) < 1e-15
    assert abs(s - num / den) < 1e-8
    assert abs(s - c) > 1e-3


def test_change_of_measure_identity(rng):
    phi = rng.normal(size=6)
    for mu in (GAUSS, QUARTIC):
        assert np.allclose(change_of_measure(phi, mu, mu), phi, atol=1e-12)


def test_change_of_measure_pairings():
    mu, mu_hat = GAUSS, GaussianDensity(0.0, 1.3)
    phi_hat = np.array([0.4, -1.0, 0.5, 0.25, -0.1])
    phi = change_of_measure(phi_hat, mu, mu_hat)
    N = len(phi_hat) - 1
    sys_mu = appell_p(mu, N)
    T = pn_expansion_in(mu, mu_hat, N)
    for m in range(N + 1):
        # Q_hat-series paired with P_m^mu by quadrature, using rho_hat as reference measure
        lhs = mu_hat.expect(lambda x, m=m: sum(c * appell_q(mu_hat, k, x)
                                               for k, c in enumerate(phi_hat)) * sys_mu.p(m, x))
        rhs = phi[m] * math.factorial(m)
        assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(rhs))
        # the same pairing through the re-expansion matrix
        via_T = sum(T[m, k] * phi_hat[k] * math.factorial(k) for k in range(m + 1))
        assert abs(via_T - rhs) < 1e-10 * max(1.0, abs(rhs))


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=12))
def test_monomial_roundtrip(coeffs):
    for mu in (GAUSS, QUARTIC, MIXTURE):
        sys = appell_p(mu, len(coeffs) - 1)
        back = sys.from_monomial(sys.to_monomial(coeffs))
        assert np.allclose(back, coeffs, atol=1e-12 * max(1, max(map(abs, coeffs))) * 10 ** (
            len(coeffs) // 4), rtol=0)


@pytest.mark.parametrize("mu", [GAUSS, QUARTIC, MIXTURE], ids=["gauss", "quartic", "mixture"])
def test_moment_bound(mu):
    C = fit_moment_constant(mu, n_fit=10)
    M = mu.moments(16)
    for n in range(17):
        assert abs(M[n]) <= math.factorial(n) * C ** n * (1 + 1e-12)


@pytest.mark.parametrize("mu", [GAUSS, QUARTIC, MIXTURE], ids=["gauss", "quartic", "mixture"])
def test_generating_function(mu):
    N = 30
    sys = appell_p(mu, N)
    for theta in (0.5, -0.5, 0.3j):
        l = laplace_transform(mu, theta)
        for x in np.linspace(-3, 3, 7):
            series = sum(sys.p(n, x) * theta ** n / math.factorial(n) for n in range(N + 1))
            assert abs(series - np.exp(theta * x) / l) < 1e-10


def test_q_wick_product_s_multiplicative():
    a = np.array([1.0, 0.5, -0.2])
    b = np.array([0.3, 0.0, 0.4, 0.1])
    xi = wick_q(a, b)
    assert np.allclose(xi, [sum(a[k] * b[n - k] for k in range(len(a)) if 0 <= n - k < len(b))
                            for n in range(len(a) + len(b) - 1)])
    for mu in (GAUSS, QUARTIC):
        for theta in (0.3, -0.4):
            lhs = s_mu_q_series(mu, xi, theta)
            rhs = s_mu_q_series(mu, a, theta) * s_mu_q_series(mu, b, theta)
            assert abs(lhs - rhs) < 1e-8 * max(1, abs(rhs))
            # S_mu of a Q-series is the power series sum c_n theta^n
            assert abs(lhs - np.polyval(xi[::-1], theta)) < 1e-8


def test_charlier_orthogonality():
    lam = 2.5
    for n in range(9):
        for m in range(9):
            val = charlier_orthogonality(n, m, lam)
            scale = math.sqrt(math.factorial(n) * lam ** n * math.factorial(m) * lam ** m)
            ref = 1.0 if n == m else 0.0
            assert abs(val / scale - ref) < 1e-10


def test_charlier_low_degree():
    x = np.arange(6.0)
    lam = 1.7
    assert np.allclose(charlier(1, x, lam), x - lam)
    assert np.allclose(charlier(2, x, lam), (x - 1 - lam) * (x - lam) - lam)
