"""Special functions shared by the other modules.

Hermite polynomials use the physicists' normalization

    H_{n+1}(z) = 2 z H_n(z) - 2 n H_{n-1}(z),   H_0 = 1,  H_1 = 2 z.

The probabilists' (Wick) polynomials follow from
``He_n(x) = 2**(-n/2) * H_n(x / sqrt(2))``, see :func:`hermite_he`.
"""

import math

import numpy as np
from scipy.special import gammaln

__all__ = [
    "MAX_HERMITE_DEGREE",
    "hermite",
    "hermite_table",
    "hermite_he",
    "theta",
    "simplex_singular_volume",
    "csqrt",
]

#: Forward recurrence is refused above this degree.
MAX_HERMITE_DEGREE = 300


def csqrt(z):
    """Principal square root with the cut on the negative real axis."""
    return np.sqrt(np.asarray(z, dtype=complex))


def hermite_table(n, z):
    """Return ``H_0(z), ..., H_n(z)`` stacked along a new leading axis.

    Parameters
    ----------
    n : int
        Highest degree, ``0 <= n <= MAX_HERMITE_DEGREE``.
    z : complex or array_like
        Evaluation points.

    Returns
    -------
    ndarray
        Complex array of shape ``(n + 1,) + np.shape(z)``.
    """
    n = int(n)
    if n < 0:
        raise ValueError("degree must be non-negative")
    if n > MAX_HERMITE_DEGREE:
        raise ValueError(
            f"degree {n} exceeds {MAX_HERMITE_DEGREE}; forward recurrence refused"
        )
    z = np.asarray(z, dtype=complex)
    out = np.empty((n + 1,) + z.shape, dtype=complex)
    out[0] = 1.0
    if n >= 1:
        out[1] = 2.0 * z
    for k in range(1, n):
        out[k + 1] = 2.0 * z * out[k] - 2.0 * k * out[k - 1]
    return out


def hermite(n, z):
    """Physicists' Hermite polynomial ``H_n(z)`` for complex ``z``.

    Examples
    --------
    >>> complex(hermite(2, 0.0))
    (-2+0j)
    """
    vals = hermite_table(n, z)[int(n)]
    return vals[()] if vals.ndim == 0 else vals


def hermite_he(n, x):
    """Probabilists' Hermite polynomial, ``2**(-n/2) H_n(x/sqrt 2)``."""
    return 2.0 ** (-0.5 * n) * hermite(n, np.asarray(x, dtype=complex) / math.sqrt(2.0))


def theta(rho, tau):
    """Jacobi theta function ``sum_n exp(pi i n^2 tau + 2 pi i n rho)``.

    The sum is cut once the remaining terms are below ``1e-17`` in
    modulus, which bounds the tail well under ``1e-15``.

    Parameters
    ----------
    rho : complex
    tau : complex
        Must satisfy ``Im tau > 0``.
    """
    rho = complex(rho)
    tau = complex(tau)
    if not tau.imag > 0:
        raise ValueError("theta requires Im(tau) > 0")
    a = math.pi * tau.imag
    b = 2.0 * math.pi * abs(rho.imag)
    # |term_n| <= exp(-a n^2 + b |n|); pick N with a N^2 - b N > 40
    c = 40.0
    n_max = int(math.ceil((b + math.sqrt(b * b + 4.0 * a * c)) / (2.0 * a))) + 1
    n = np.arange(-n_max, n_max + 1, dtype=float)
    terms = np.exp(1j * math.pi * n * n * tau + 2j * math.pi * n * rho)
    # sum symmetric pairs from the outside in to limit cancellation error
    order = np.argsort(-np.abs(n), kind="stable")
    return complex(np.sum(terms[order][::-1]))


def simplex_singular_volume(n, alpha, interval):
    """Integral of ``prod_j (2 pi |t_j - t_{j-1}|)**(-alpha)`` over the simplex.

    The simplex is ``t_0 < t_1 < ... < t_n < t`` with ``t - t_0 = interval``;
    the product has ``n + 1`` gap factors.  Closed form

        (Gamma(1-alpha) / (2 pi)**alpha)**(n+1)
        * interval**(n (1-alpha) - alpha) / Gamma((n+1)(1-alpha)),

    evaluated in log space.

    Parameters
    ----------
    n : int
        Number of interior times, ``n >= 0``.
    alpha : float
        Singularity exponent, ``alpha < 1``.
    interval : float
        Length of the time interval, positive.
    """
    n = int(n)
    alpha = float(alpha)
    interval = float(interval)
    if alpha >= 1.0:
        raise ValueError("alpha must be < 1")
    if n < 0 or interval <= 0:
        raise ValueError("need n >= 0 and interval > 0")
    log_val = (
        (n + 1) * (gammaln(1.0 - alpha) - alpha * math.log(2.0 * math.pi))
        + (n * (1.0 - alpha) - alpha) * math.log(interval)
        - gammaln((n + 1) * (1.0 - alpha))
    )
    return math.exp(log_val)
