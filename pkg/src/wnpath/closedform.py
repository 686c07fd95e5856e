"""Closed-form propagators and their T/S-transforms.

Conventions
-----------
* Time-dependent test functions are :class:`GridFunction` objects; ``None``
  stands for the zero function.  A test function vanishes outside its grid.
* Squares of test functions are bilinear, ``|theta|^2 = int theta^2``, so
  every formula is analytic in complex ``theta``.
* Complex powers use the principal branch, ``sqrt(i) = exp(i pi / 4)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, simpson
from scipy.interpolate import CubicSpline
from scipy.special import roots_legendre

from .specfun import theta as jacobi_theta

__all__ = [
    "GridFunction",
    "PropagatorQuery",
    "t_free",
    "k0_xi",
    "t_free_pinned",
    "t_harmonic",
    "kh_xi",
    "t_harmonic_pinned",
    "circle_propagator",
    "donsker_series_s",
    "donsker_series_direct",
    "local_time_expectation",
]

MIN_GRID_POINTS = 16
_GL_NODES = 96


class GridFunction:
    """Test function sampled on a uniform time grid.

    Parameters
    ----------
    times : array_like
        Uniform grid ``T0 = t_0 < ... < t_{n-1} = T`` with at least 16 points.
    values : array_like
        Shape ``(n,)`` or ``(n, d)``; complex allowed.
    derivs : array_like, optional
        Time derivative on the grid.  Defaults to the spline derivative.
    func, dfunc : callable, optional
        Exact callables for the function and its derivative.  When given they
        are used for point evaluation instead of the interpolant.

    Notes
    -----
    Integrals over the full grid use composite Simpson; integrals over
    subintervals and point values use a cubic spline through the samples.
    """

    def __init__(self, times, values, derivs=None, func=None, dfunc=None):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < MIN_GRID_POINTS:
            raise ValueError(f"grid needs at least {MIN_GRID_POINTS} points")
        h = np.diff(times)
        if np.any(h <= 0) or np.ptp(h) > 1e-9 * abs(h[0]) + 1e-14:
            raise ValueError("grid must be uniform and increasing")
        values = np.asarray(values, dtype=complex)
        if values.shape[0] != times.size:
            raise ValueError("values must match the grid")
        self.times = times
        self.values = values
        self.T0 = float(times[0])
        self.T = float(times[-1])
        self.d = 1 if values.ndim == 1 else values.shape[1]
        self._spline = CubicSpline(times, values, axis=0)
        self._anti = self._spline.antiderivative()
        self._sq_spline = CubicSpline(times, self._bilinear_sq(values), axis=0)
        self._sq_anti = self._sq_spline.antiderivative()
        if derivs is None:
            derivs = self._spline(times, 1)
        self.derivs = np.asarray(derivs, dtype=complex)
        self._func = func
        self._dfunc = dfunc
        self._full_sq = complex(simpson(self._bilinear_sq(values), x=times))

    @staticmethod
    def _bilinear_sq(v):
        v = np.asarray(v)
        return v * v if v.ndim == 1 else np.sum(v * v, axis=-1)

    @classmethod
    def from_callable(cls, func, dfunc, T0, T, n=401):
        """Sample exact callables on a uniform grid and keep them for evaluation."""
        times = np.linspace(T0, T, n)
        return cls(times, func(times), dfunc(times), func=func, dfunc=dfunc)

    def __call__(self, t):
        """Value at ``t``; zero outside ``[T0, T]``."""
        t = np.asarray(t, dtype=float)
        inside = (t >= self.T0) & (t <= self.T)
        val = self._func(t) if self._func is not None else self._spline(t)
        val = np.asarray(val, dtype=complex)
        mask = inside if val.ndim == t.ndim else inside[..., None]
        return np.where(mask, val, 0.0)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.T0) & (t <= self.T)
        val = self._dfunc(t) if self._dfunc is not None else self._spline(t, 1)
        val = np.asarray(val, dtype=complex)
        mask = inside if val.ndim == t.ndim else inside[..., None]
        return np.where(mask, val, 0.0)

    def _clip(self, a, b):
        return max(a, self.T0), min(b, self.T)

    def integral(self, a, b):
        """``int_a^b theta``; per component when ``d > 1``."""
        lo, hi = self._clip(a, b)
        if hi <= lo:
            return np.zeros(self.d, dtype=complex) if self.d > 1 else 0.0 + 0.0j
        if self._func is not None:
            return _gl_integral(self._func, lo, hi)
        out = self._anti(hi) - self._anti(lo)
        return out if self.d > 1 else complex(out)

    def sq_integral(self, a=None, b=None):
        """Bilinear ``int_a^b theta . theta``; the full grid by default."""
        if a is None and b is None:
            return self._full_sq
        a = self.T0 if a is None else a
        b = self.T if b is None else b
        lo, hi = self._clip(a, b)
        if hi <= lo:
            return 0.0 + 0.0j
        if self._func is not None:
            return complex(_gl_integral(lambda s: self._bilinear_sq(self._func(s)), lo, hi))
        return complex(self._sq_anti(hi) - self._sq_anti(lo))

    def shifted(self, lam, a, b):
        """``theta + lam * 1_[a, b]`` sampled on the same grid."""
        mask = (self.times >= a) & (self.times <= b)
        vals = self.values + lam * (mask if self.d == 1 else mask[:, None])
        func = None
        if self._func is not None:
            f = self._func

            def func(s, f=f):
                s = np.asarray(s, dtype=float)
                m = (s >= a) & (s <= b)
                v = np.asarray(f(s), dtype=complex)
                return v + lam * (m if v.ndim == s.ndim else m[..., None])
        return GridFunction(self.times, vals, self.derivs, func=func, dfunc=self._dfunc)


def _gl_integral(f, a, b, n=_GL_NODES, panels=4):
    """Composite Gauss-Legendre integral of a smooth vector/scalar function."""
    x, w = roots_legendre(n)
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        s = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        vals = np.asarray(f(s), dtype=complex)
        wts = 0.5 * (hi - lo) * w
        total = total + (np.tensordot(wts, vals, axes=(0, 0)))
    return total


@dataclass
class PropagatorQuery:
    """Endpoints and times of a propagator ``K(x, t | x0, t0)``.

    Attributes
    ----------
    x0, x : array_like
        Start and end points in ``R^d``; scalars mean ``d = 1``.
    t0, t : float
        Start and end times, ``t > t0``.  ``t`` may be complex for
        analytically continued evaluations.
    k : float, optional
        Oscillator frequency for harmonic queries.
    """

    x0: np.ndarray
    x: np.ndarray
    t0: float = 0.0
    t: float = 1.0
    k: float = None
    d: int = field(init=False)

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=complex))
        self.x = np.atleast_1d(np.asarray(self.x, dtype=complex))
        if self.x0.shape != self.x.shape or self.x0.ndim != 1:
            raise ValueError("x0 and x must be points of the same dimension")
        self.d = self.x0.size
        dur = complex(self.t) - complex(self.t0)
        if dur.imag == 0 and not dur.real > 0:
            raise ValueError("need t > t0")

    @property
    def duration(self):
        dur = complex(self.t) - complex(self.t0)
        return dur.real if dur.imag == 0 else dur

    def with_points(self, x0=None, x=None, t0=None, t=None):
        return PropagatorQuery(
            self.x0 if x0 is None else x0,
            self.x if x is None else x,
            self.t0 if t0 is None else t0,
            self.t if t is None else t,
            self.k,
        )


def _theta_parts(theta, t0, t, d):
    """``(int_Delta theta, |theta|^2 full, |theta_Delta|^2, theta(t0), theta(t))``."""
    if theta is None:
        z = np.zeros(d, dtype=complex)
        return z, 0.0, 0.0, z, z
    if theta.d != d:
        raise ValueError("test function dimension does not match the query")
    integ = np.atleast_1d(theta.integral(t0, t))
    return (
        integ,
        theta.sq_integral(),
        theta.sq_integral(t0, t),
        np.atleast_1d(theta(t0)),
        np.atleast_1d(theta(t)),
    )


def t_free(query, theta=None):
    """T-transform of the free Feynman integrand.

        (2 pi i D)^(-d/2) exp(-(i/2)|theta|^2 - (int_Delta theta + x - x0)^2 / (2 i D))

    with ``D = t - t0``.  ``theta = None`` gives the free propagator.
    """
    dur = query.duration
    integ, full, _, _, _ = _theta_parts(theta, query.t0, query.t, query.d)
    v = integ + query.x - query.x0
    return complex(
        (2j * np.pi * dur) ** (-query.d / 2.0)
        * np.exp(-0.5j * full - np.sum(v * v) / (2j * dur))
    )


def k0_xi(query, xi=None):
    """Free propagator with source ``W = xi_dot(t) x``.

        (2 pi i D)^(-d/2) exp(i x0 xi(t0) - i x xi(t) - (i/2)|xi_Delta|^2
                              + (i / 2D) (int_Delta xi + x - x0)^2)
    """
    dur = query.duration
    integ, _, part, xi0, xi1 = _theta_parts(xi, query.t0, query.t, query.d)
    v = integ + query.x - query.x0
    return complex(
        (2j * np.pi * dur) ** (-query.d / 2.0)
        * np.exp(
            1j * np.sum(query.x0 * xi0) - 1j * np.sum(query.x * xi1)
            - 0.5j * part + 0.5j * np.sum(v * v) / dur
        )
    )


def _check_pins(query, pins):
    times = [query.t0] + [float(tp) for _, tp in pins] + [query.t]
    if any(b <= a for a, b in zip(times[:-1], times[1:])):
        raise ValueError("pin times must be strictly increasing inside (t0, t)")
    points = [query.x0] + [np.atleast_1d(np.asarray(xp, dtype=complex)) for xp, _ in pins]
    points.append(query.x)
    return times, points


def t_free_pinned(query, pins, theta=None):
    """T-transform of the free integrand with paths pinned at ``(x_j, t_j)``.

        exp((i n / 2)|theta|^2) prod_j T I_0(x_j, t_j | x_{j-1}, t_{j-1})(theta)
    """
    times, points = _check_pins(query, pins)
    full = 0.0 if theta is None else theta.sq_integral()
    out = np.exp(0.5j * len(pins) * full)
    for j in range(1, len(times)):
        seg = PropagatorQuery(points[j - 1], points[j], times[j - 1], times[j])
        out *= t_free(seg, theta)
    return complex(out)


def _harmonic_terms(query, xi):
    """Source terms ``(I1, I2, I12)`` of the forced oscillator exponent."""
    k = query.k
    t0, t = query.t0, query.t
    if xi is None:
        return 0.0, 0.0, 0.0
    x, w = roots_legendre(_GL_NODES)
    half = 0.5 * (t - t0)
    s = half * x + 0.5 * (t + t0)
    ws = half * w
    xs = np.asarray(xi(s), dtype=complex)
    i1 = np.sum(ws * xs * np.cos(k * (s - t0)))
    i2 = np.sum(ws * xs * np.cos(k * (t - s)))
    # inner integral over [t0, s1] for every outer node s1
    inner_half = 0.5 * (s - t0)
    s2 = inner_half[:, None] * x[None, :] + 0.5 * (s + t0)[:, None]
    inner = np.sum(
        (inner_half[:, None] * w[None, :]) * np.asarray(xi(s2), dtype=complex)
        * np.cos(k * (s2 - t0)),
        axis=1,
    )
    i12 = np.sum(ws * xs * np.cos(k * (t - s)) * inner)
    return i1, i2, i12


def _check_harmonic(query):
    if query.d != 1:
        raise ValueError("harmonic propagators are one-dimensional")
    if query.k is None:
        raise ValueError("harmonic query needs a frequency k")
    kd = query.k * query.duration
    if isinstance(kd, complex):
        # analytic continuation slightly off the real axis
        if not 0.0 < kd.real < math.pi / 2:
            raise ValueError("need 0 < Re k |Delta| < pi/2")
    elif not 0.0 < kd < math.pi / 2:
        raise ValueError("need 0 < k |Delta| < pi/2")
    return kd


def _harmonic_core(query, xi):
    kd = _check_harmonic(query)
    if isinstance(kd, complex) and xi is not None:
        raise ValueError("complex durations need theta = 0")
    k = query.k
    x0 = complex(query.x0[0])
    x = complex(query.x[0])
    i1, i2, i12 = _harmonic_terms(query, xi)
    sn = np.sin(kd)
    bracket = (x0 * x0 + x * x) * np.cos(kd) - 2 * x0 * x + 2 * x * i1 - 2 * x0 * i2 + 2 * i12
    return np.sqrt(k / (2j * np.pi * sn)) * np.exp(1j * k / (2 * sn) * bracket)


def t_harmonic(query, theta=None):
    """T-transform of the harmonic oscillator integrand, ``U = k^2 x^2 / 2``.

    The double time integral uses nested Gauss-Legendre rules.
    """
    full = 0.0 if theta is None else theta.sq_integral()
    return complex(_harmonic_core(query, theta) * np.exp(-0.5j * full))


def kh_xi(query, xi=None):
    """Propagator for ``k^2 x^2 / 2 + xi_dot(t) x`` on ``[t0, t]``."""
    core = _harmonic_core(query, xi)
    if xi is None:
        return complex(core)
    part = xi.sq_integral(query.t0, query.t)
    x0 = complex(query.x0[0])
    x = complex(query.x[0])
    phase = np.exp(-0.5j * part + 1j * x0 * complex(xi(query.t0)) - 1j * x * complex(xi(query.t)))
    return complex(core * phase)


def t_harmonic_pinned(query, pins, theta=None):
    """Harmonic T-transform with pinned paths, a chain of ``K_h`` factors.

        exp(-(i/2)|theta_{Delta^c}|^2) exp(i (x theta(t) - x0 theta(t0)))
            prod_j K_h(x_j, t_j | x_{j-1}, t_{j-1})
    """
    times, points = _check_pins(query, pins)
    if theta is None:
        out = 1.0 + 0.0j
    else:
        outside = theta.sq_integral() - theta.sq_integral(query.t0, query.t)
        out = np.exp(-0.5j * outside + 1j * (
            complex(query.x[0]) * complex(theta(query.t))
            - complex(query.x0[0]) * complex(theta(query.t0))))
    for j in range(1, len(times)):
        seg = PropagatorQuery(points[j - 1], points[j], times[j - 1], times[j], query.k)
        out *= kh_xi(seg, theta)
    return complex(out)


def circle_propagator(a_coeffs, phi0, t, theta=None):
    """T-transform of the circle integrand with final state ``sum_l a_l e^{i l phi}``.

        exp(-(i/2) int theta^2) sum_l a_l exp(-(i/2) l^2 t + i l (phi0 - int_0^t theta))

    Parameters
    ----------
    a_coeffs : sequence of (int, complex)
        Finitely many Fourier coefficients.
    phi0 : float
    t : float
    theta : GridFunction, optional
    """
    a_coeffs = list(a_coeffs)
    if not a_coeffs:
        raise ValueError("need at least one Fourier coefficient")
    if theta is None:
        full, integ = 0.0, 0.0
    else:
        full = theta.sq_integral()
        integ = theta.integral(0.0, t)
    total = 0.0 + 0.0j
    for l, a in a_coeffs:
        total += a * np.exp(-0.5j * l * l * t + 1j * l * (phi0 - integ))
    return complex(np.exp(-0.5j * full) * total)


def _check_s0(z):
    z = complex(z)
    if not (z ** -2).real > 0:
        raise ValueError("z lies outside the region Re z^-2 > 0")
    return z


def _scaled_delta_s(u, eta_sq, a, z):
    return np.exp(-((a - z * u) ** 2) / (2 * z * z * eta_sq)) / (
        math.sqrt(2 * math.pi) * z * np.sqrt(complex(eta_sq)))


def donsker_series_s(eta_sq, a, z, u):
    """S-transform of ``sum_n sigma_z delta(<omega, eta> - a + n)`` via theta.

        S sigma_z delta(theta) * vartheta(i (u - a/z) / (2 pi z |eta|^2),
                                          i / (2 pi z^2 |eta|^2))

    The factor ``1/z`` in the first argument comes from completing the
    square in ``(a - n - z u)^2 / z^2``; it is invisible at ``z = 1``.

    Parameters
    ----------
    eta_sq : float
        ``|eta|^2``.
    a, z : complex
        ``Re z^-2 > 0`` is required.
    u : complex
        ``<theta, eta>``.
    """
    z = _check_s0(z)
    a = complex(a)
    u = complex(u)
    lead = _scaled_delta_s(u, eta_sq, a, z)
    rho = 1j * (u - a / z) / (2 * math.pi * z * eta_sq)
    tau = 1j / (2 * math.pi * z * z * eta_sq)
    return complex(lead * jacobi_theta(rho, tau))


def donsker_series_direct(eta_sq, a, z, u, n_max=50):
    """Direct sum ``sum_{|n| <= n_max} S sigma_z delta(<., eta> - a + n)``."""
    z = _check_s0(z)
    n = np.arange(-n_max, n_max + 1)
    terms = _scaled_delta_s(complex(u), eta_sq, complex(a) - n, z)
    order = np.argsort(np.abs(terms))
    return complex(math.fsum(terms[order].real) + 1j * math.fsum(terms[order].imag))


def local_time_expectation(a, tau, theta=None):
    """S-transform of the one-dimensional local time ``L(tau, a)``.

        (1/tau) int_0^tau (2 pi t)^(-1/2) exp(-(int_0^t theta - a)^2 / (2 t)) dt

    The substitution ``t = u^2`` removes the endpoint singularity.

    Raises
    ------
    ValueError
        If ``Re a^2 < 0`` or ``tau <= 0``.
    """
    a = complex(a)
    tau = float(tau)
    if (a * a).real < 0:
        raise ValueError("need Re a^2 >= 0")
    if tau <= 0:
        raise ValueError("need tau > 0")

    def f(u):
        if u == 0.0:
            return 0.0 if a != 0 else 2.0 / math.sqrt(2 * math.pi)
        t = u * u
        th = 0.0 if theta is None else theta.integral(0.0, t)
        return 2.0 / math.sqrt(2 * math.pi) * np.exp(-((th - a) ** 2) / (2 * t))

    val, _ = quad(f, 0.0, math.sqrt(tau), complex_func=True, epsabs=1e-15, epsrel=1e-13,
                  limit=400)
    return complex(val) / tau
