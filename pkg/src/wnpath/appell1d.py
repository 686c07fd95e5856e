"""One-dimensional Appell systems for analytic non-Gaussian measures.

For a probability density ``rho`` on the line with Laplace transform
``l(theta) = int exp(theta x) rho(x) dx`` the polynomial system is
generated by

    sum_n P_n(x) theta^n / n! = exp(theta x) / l(theta),

and the dual functions are ``Q_n = (-1)^n rho^(n) / rho``.  They satisfy
``int Q_n P_m rho = delta_{nm} n!``.

Densities are given in closed form so that ``rho^(n) / rho`` can be obtained
by exact polynomial rules; integrals use adaptive Gauss-Kronrod quadrature
on a window whose tail mass is negligible.
"""

import math
import warnings
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import IntegrationWarning, quad
from scipy.special import comb, gammaln

from .specfun import hermite_table

__all__ = [
    "Density1D",
    "ExpPolyDensity",
    "GaussianDensity",
    "QuarticDensity",
    "GaussianMixtureDensity",
    "AppellSystem1D",
    "integrate",
    "laplace_transform",
    "appell_p",
    "appell_q",
    "biorthogonality",
    "radon_nikodym_general",
    "s_mu_and_c_mu",
    "s_mu_q_series",
    "wick_q",
    "change_of_measure",
    "pn_expansion_in",
    "fit_moment_constant",
    "charlier",
    "charlier_orthogonality",
]

_QUAD_KW = dict(epsabs=1e-14, epsrel=1e-13, limit=400)


def integrate(f, a, b, points=None):
    """Complex-valued adaptive quadrature of ``f`` over ``[a, b]``."""
    with warnings.catch_warnings():
        # the requested tolerance sits at roundoff level; judge by the error estimate
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(f, a, b, complex_func=True, points=points, **_QUAD_KW)
    if abs(err) > 1e-7 * max(1.0, abs(val)):
        warnings.warn(f"quadrature error estimate {abs(err):.1e}", IntegrationWarning,
                      stacklevel=2)
    return complex(val)


class Density1D:
    """Base class for smooth positive densities on the line.

    Subclasses implement :meth:`pdf`, :meth:`deriv_ratio` and the window
    half-width :attr:`L`.  ``eps`` is the half-width of the strip
    ``|Re theta| < eps`` on which the Laplace transform is analytic.
    """

    L = 10.0
    eps = math.inf

    def pdf(self, x):
        raise NotImplementedError

    def deriv_ratio(self, n, x):
        """``rho^(n)(x) / rho(x)``."""
        raise NotImplementedError

    def window(self, theta=0.0):
        """Integration half-width for integrands ``exp(theta x) * poly * rho``."""
        return self.L

    def expect(self, f, theta=0.0):
        """``int f(x) rho(x) dx`` over the working window."""
        L = self.window(theta)
        return integrate(lambda x: f(x) * self.pdf(x), -L, L)

    @lru_cache(maxsize=None)
    def moments(self, N):
        """Moments ``M_0 .. M_N`` as a read-only array."""
        L = self.window()
        out = np.array(
            [integrate(lambda x, k=k: x ** k * self.pdf(x), -L, L) for k in range(N + 1)]
        )
        out.setflags(write=False)
        return out


class ExpPolyDensity(Density1D):
    """``rho(x) = exp(-V(x)) / Z`` for a polynomial ``V`` of even degree.

    Derivatives follow ``rho^(n) = r_n rho`` with ``r_0 = 1`` and
    ``r_{n+1} = r_n' - V' r_n``.

    Parameters
    ----------
    v_coeffs : array_like
        Coefficients of ``V`` in increasing powers; the leading one must be
        positive and the degree even.
    """

    def __init__(self, v_coeffs):
        v = np.trim_zeros(np.asarray(v_coeffs, dtype=float), "b")
        deg = len(v) - 1
        if deg < 2 or deg % 2 or v[-1] <= 0:
            raise ValueError("V must have even degree >= 2 and positive leading term")
        self.v = v
        self.dv = npoly.polyder(v)
        self.eps = math.inf
        self._ratios = [np.array([1.0])]
        # window where exp(-V) < e^-70 relative to its peak
        xs = np.linspace(-60, 60, 24001)
        vals = npoly.polyval(xs, v)
        vmin = vals.min()
        inside = xs[vals - vmin < 70.0]
        self.L = float(max(abs(inside[0]), abs(inside[-1]))) + 0.5
        self._logZ = 0.0
        Z = quad(lambda x: math.exp(-(npoly.polyval(x, v) - vmin)), -self.L, self.L,
                 **_QUAD_KW)[0]
        self._shift = vmin
        self._logZ = math.log(Z)

    def pdf(self, x):
        return np.exp(-(npoly.polyval(x, self.v) - self._shift) - self._logZ)

    def _ratio_poly(self, n):
        while len(self._ratios) <= n:
            r = self._ratios[-1]
            self._ratios.append(npoly.polysub(npoly.polyder(r), npoly.polymul(self.dv, r)))
        return self._ratios[n]

    def deriv_ratio(self, n, x):
        return npoly.polyval(x, self._ratio_poly(n))

    def window(self, theta=0.0):
        s = abs(complex(theta).real)
        if s == 0:
            return self.L
        # extend until V(x) - s |x| exceeds its minimum by 70
        x = self.L
        while npoly.polyval(x, self.v) - s * x - self._shift < 70.0 or \
                npoly.polyval(-x, self.v) - s * x - self._shift < 70.0:
            x *= 1.25
        return x


class GaussianDensity(ExpPolyDensity):
    """Normal density with mean ``m`` and standard deviation ``s``.

    Moments and the Laplace transform are available in closed form.
    """

    def __init__(self, m=0.0, s=1.0):
        if s <= 0:
            raise ValueError("standard deviation must be positive")
        self.m = float(m)
        self.s = float(s)
        super().__init__([m * m / (2 * s * s), -m / (s * s), 1.0 / (2 * s * s)])

    @lru_cache(maxsize=None)
    def moments(self, N):
        # E (m + s X)^n with E X^{2k} = (2k-1)!!
        gauss = [0.0 if k % 2 else math.exp(gammaln(k + 1) - gammaln(k // 2 + 1)
                                             - (k // 2) * math.log(2.0))
                 for k in range(N + 1)]
        out = np.array([
            sum(comb(n, k, exact=True) * self.m ** (n - k) * self.s ** k * gauss[k]
                for k in range(n + 1))
            for n in range(N + 1)
        ], dtype=complex)
        out.setflags(write=False)
        return out

    def laplace(self, theta):
        theta = complex(theta)
        return complex(np.exp(self.m * theta + 0.5 * self.s ** 2 * theta ** 2))


class QuarticDensity(ExpPolyDensity):
    """``rho(x) = exp(-x^4) / Z`` with ``Z = Gamma(1/4) / 2``."""

    def __init__(self):
        super().__init__([0.0, 0.0, 0.0, 0.0, 1.0])

    @lru_cache(maxsize=None)
    def moments(self, N):
        out = np.array([
            0.0 if n % 2 else math.exp(gammaln((n + 1) / 4.0) - gammaln(0.25))
            for n in range(N + 1)
        ], dtype=complex)
        out.setflags(write=False)
        return out


class GaussianMixtureDensity(Density1D):
    """Finite mixture ``sum_i w_i N(m_i, s_i^2)`` with positive weights."""

    def __init__(self, weights, means, sds):
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        self.w = w / w.sum()
        self.m = np.asarray(means, dtype=float)
        self.s = np.asarray(sds, dtype=float)
        if np.any(self.s <= 0):
            raise ValueError("standard deviations must be positive")
        self.L = float(np.max(np.abs(self.m)) + 14.0 * np.max(self.s))
        self.eps = math.inf

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        u = (x[..., None] - self.m) / self.s
        return u, self.w * np.exp(-0.5 * u * u) / (self.s * math.sqrt(2 * math.pi))

    def pdf(self, x):
        return np.sum(self._parts(x)[1], axis=-1)

    def deriv_ratio(self, n, x):
        u, parts = self._parts(x)
        # d^n/dx^n N(m, s^2) = (-1)^n s^-n He_n(u) N
        He = hermite_table(n, u / math.sqrt(2.0))[n].real * 2.0 ** (-n / 2.0)
        num = np.sum(parts * He * (-1.0 / self.s) ** n, axis=-1)
        den = np.sum(parts, axis=-1)
        if np.any(den < 1e-300):
            raise ValueError("density underflows at the requested point")
        return num / den

    def window(self, theta=0.0):
        s = abs(complex(theta).real)
        return self.L + s * float(np.max(self.s) ** 2) * 1.5


def laplace_transform(mu, theta):
    """``l_mu(theta) = int exp(theta x) d mu(x)`` by adaptive quadrature.

    Raises
    ------
    ValueError
        If ``|Re theta|`` is not inside the analyticity strip.
    """
    theta = complex(theta)
    if not abs(theta.real) < mu.eps:
        raise ValueError("theta outside the analyticity strip")
    L = mu.window(theta)
    return integrate(lambda x: np.exp(theta * x) * mu.pdf(x), -L, L)


class AppellSystem1D:
    """Polynomial system ``P_n`` with its moments.

    Attributes
    ----------
    N : int
        Degree cap.
    moments : ndarray
        ``M_0 .. M_{2N}``.
    p_at_zero : ndarray
        ``P_0(0) .. P_N(0)`` from the reciprocal power series of ``l_mu``.
    coeffs : list of ndarray
        ``coeffs[n][k]`` is the coefficient of ``x^k`` in ``P_n``.
    """

    def __init__(self, mu, N):
        self.mu = mu
        self.N = int(N)
        self.moments = np.asarray(mu.moments(2 * self.N))
        if abs(self.moments[0] - 1.0) > 1e-10:
            raise ValueError("series inversion needs l_mu(0) = 1")
        a = np.array([self.moments[n] / math.factorial(n) for n in range(self.N + 1)])
        b = np.zeros(self.N + 1, dtype=complex)
        b[0] = 1.0 / a[0]
        for n in range(1, self.N + 1):
            b[n] = -np.dot(a[1:n + 1], b[n - 1::-1][:n]) / a[0]
        self.p_at_zero = np.array([b[n] * math.factorial(n) for n in range(self.N + 1)])
        self.coeffs = [
            np.array([comb(n, k, exact=True) * self.p_at_zero[n - k] for k in range(n + 1)])
            for n in range(self.N + 1)
        ]

    def p(self, n, x):
        """``P_n(x)``."""
        if n > self.N:
            raise ValueError("degree above the system cap")
        return npoly.polyval(np.asarray(x, dtype=complex), self.coeffs[n])

    def q(self, n, x):
        """``Q_n(x) = (-1)^n rho^(n)(x) / rho(x)``."""
        return appell_q(self.mu, n, x)

    def to_monomial(self, p_coeffs):
        """Monomial coefficients of ``sum_n c_n P_n``."""
        p_coeffs = np.asarray(p_coeffs, dtype=complex)
        out = np.zeros(len(p_coeffs), dtype=complex)
        for n, c in enumerate(p_coeffs):
            out[: n + 1] += c * self.coeffs[n]
        return out

    def from_monomial(self, mono):
        """P-basis coefficients of ``sum_n c_n x^n``.

        Uses the reordering ``x^n = sum_k C(n, k) M_{n-k} P_k(x)``.
        """
        mono = np.asarray(mono, dtype=complex)
        out = np.zeros(len(mono), dtype=complex)
        for n, c in enumerate(mono):
            for k in range(n + 1):
                out[k] += c * comb(n, k, exact=True) * self.moments[n - k]
        return out


def appell_p(mu, N):
    """Build the ``P``-system up to degree ``N``."""
    return AppellSystem1D(mu, N)


def appell_q(mu, n, x):
    """Dual function ``Q_n(x) = (-1)^n rho^(n)(x) / rho(x)``."""
    n = int(n)
    if n < 0:
        raise ValueError("n must be non-negative")
    return (-1.0) ** n * mu.deriv_ratio(n, x)


def biorthogonality(mu, n, m, system=None):
    """``int Q_n(x) P_m(x) rho(x) dx``; equals ``delta_{nm} n!``."""
    system = system or appell_p(mu, max(n, m))
    return mu.expect(lambda x: appell_q(mu, n, x) * system.p(m, x))


def radon_nikodym_general(mu, z, phi, system=None, tol=1e-8, return_both=False):
    """Pair the generalized Radon-Nikodym derivative with a polynomial.

    The series route sums ``sum_n (-z)^n / n! <<Q_n, phi>>_mu`` using
    ``rho_mu(-z, .) = sum_n Q_n z^n / n!``; the quadrature route evaluates
    ``int phi(x - z) d mu(x)``.

    Parameters
    ----------
    mu : Density1D
    z : complex
    phi : array_like
        Monomial coefficients in increasing powers.
    tol : float
        Maximum allowed disagreement between the two routes.
    return_both : bool
        If true return ``(series, quadrature)``.
    """
    z = complex(z)
    phi = np.asarray(phi, dtype=complex)
    deg = len(phi) - 1
    series = 0.0 + 0.0j
    for n in range(deg + 1):
        pairing = mu.expect(lambda x, n=n: appell_q(mu, n, x) * npoly.polyval(x, phi))
        series += (-z) ** n / math.factorial(n) * pairing
    direct = mu.expect(lambda x: npoly.polyval(x - z, phi))
    if abs(series - direct) > tol * max(1.0, abs(direct)):
        raise ValueError("series and quadrature routes disagree")
    return (series, direct) if return_both else series


def s_mu_and_c_mu(mu, phi_p, theta, system=None):
    """``(S_mu phi(theta), C_mu phi(theta))`` for ``phi = sum_n phi_n P_n``.

    ``S_mu phi(theta) = int phi(x) exp(theta x) d mu / l_mu(theta)`` by
    quadrature and ``C_mu phi(theta) = sum_n phi_n theta^n``.
    """
    theta = complex(theta)
    if not abs(theta.real) < mu.eps:
        raise ValueError("theta outside the analyticity strip")
    phi_p = np.asarray(phi_p, dtype=complex)
    system = system or appell_p(mu, len(phi_p) - 1)
    mono = system.to_monomial(phi_p)
    L = mu.window(theta)
    num = integrate(lambda x: npoly.polyval(x, mono) * np.exp(theta * x) * mu.pdf(x), -L, L)
    s_val = num / laplace_transform(mu, theta)
    c_val = complex(npoly.polyval(theta, phi_p))
    return s_val, c_val


def s_mu_q_series(mu, coeffs, theta):
    """``S_mu`` of the function ``sum_n c_n Q_n`` by quadrature."""
    theta = complex(theta)
    coeffs = np.asarray(coeffs, dtype=complex)
    L = mu.window(theta)

    def f(x):
        return sum(c * appell_q(mu, n, x) for n, c in enumerate(coeffs)) \
            * np.exp(theta * x) * mu.pdf(x)

    return integrate(f, -L, L) / laplace_transform(mu, theta)


def wick_q(a, b, N=None):
    """Wick product of Q-series coefficients: ``Xi_n = sum_k a_k b_{n-k}``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    out = np.convolve(a, b)
    return out if N is None else out[: N + 1]


def pn_expansion_in(mu, mu_hat, N):
    """Coefficients expressing ``P_n^mu`` through ``P_k^mu_hat``.

    Returns ``T`` with ``P_n^mu = sum_k T[n, k] P_k^mu_hat`` where

        T[n, k] = sum_{l+m=n-k} n! / (k! l! m!) P_l^mu(0) M_m^mu_hat.
    """
    sys_mu = appell_p(mu, N)
    sys_hat = appell_p(mu_hat, N)
    T = np.zeros((N + 1, N + 1), dtype=complex)
    for n in range(N + 1):
        for k in range(n + 1):
            s = 0.0
            for l in range(n - k + 1):
                m = n - k - l
                s += (math.factorial(n) / (math.factorial(k) * math.factorial(l) * math.factorial(m))
                      * sys_mu.p_at_zero[l] * sys_hat.moments[m])
            T[n, k] = s
    return T


def change_of_measure(phi_hat, mu, mu_hat):
    """Re-expand Q-coefficients from ``mu_hat`` to ``mu``.

        Phi^(n) = sum_{k+l+m=n} Phi_hat^(k) P_l^mu(0) M_m^mu_hat / (l! m!)

    Parameters
    ----------
    phi_hat : array_like
        Coefficients of ``sum_k Q_k^mu_hat(Phi_hat^(k))``.
    mu, mu_hat : Density1D

    Returns
    -------
    ndarray
        Coefficients ``Phi^(n)`` such that pairings with every ``P_n^mu`` agree.
    """
    phi_hat = np.asarray(phi_hat, dtype=complex)
    N = len(phi_hat) - 1
    sys_mu = appell_p(mu, N)
    sys_hat = appell_p(mu_hat, N)
    out = np.zeros(N + 1, dtype=complex)
    for n in range(N + 1):
        for k in range(n + 1):
            for l in range(n - k + 1):
                m = n - k - l
                out[n] += (phi_hat[k] * sys_mu.p_at_zero[l] * sys_hat.moments[m]
                           / (math.factorial(l) * math.factorial(m)))
    return out


def fit_moment_constant(mu, n_fit=10):
    """Smallest ``C`` with ``|M_n| <= n! C^n`` for ``1 <= n <= n_fit``."""
    M = mu.moments(n_fit)
    return max(
        (abs(M[n]) / math.factorial(n)) ** (1.0 / n) for n in range(1, n_fit + 1)
    )


def charlier(n, x, lam):
    """Monic Charlier polynomial for the Poisson law with mean ``lam``.

    ``C_{n+1} = (x - n - lam) C_n - n lam C_{n-1}``.
    """
    x = np.asarray(x, dtype=float)
    c_prev = np.zeros_like(x)
    c = np.ones_like(x)
    for k in range(n):
        c_prev, c = c, (x - k - lam) * c - k * lam * c_prev
    return c


def charlier_orthogonality(n, m, lam):
    """``sum_x C_n(x) C_m(x) e^-lam lam^x / x!``; equals ``delta_{nm} n! lam^n``."""
    # the Poisson tail beyond x_max is far below double precision
    x_max = int(lam + 40.0 * math.sqrt(lam + 1.0) + 4 * (n + m) + 40)
    x = np.arange(x_max + 1, dtype=float)
    logw = -lam + x * math.log(lam) - gammaln(x + 1)
    w = np.exp(logw)
    terms = charlier(n, x, lam) * charlier(m, x, lam) * w
    return float(math.fsum(terms))
