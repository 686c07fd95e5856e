"""Perturbation-series propagator engines.

Three series are implemented.

* Khandekar-Streit (KS) series for a one-dimensional space-time measure
  ``v``.  Order ``n`` is an integral over the time simplex of a chain of
  pinned free (or harmonic) propagators.  Spatial atoms pin the chain,
  Gaussian spatial components are integrated in closed form.
* The kicked variant, where the time marginal consists of atoms and every
  order is a finite sum.
* The Fourier-measure (AHK) series in ``d`` dimensions for
  ``V(x) = sum_j w_j exp(i alpha_j . x)``, whose order ``n`` integrand
  ``T Phi_n`` is an explicit Gaussian expression in the atom times.

Time-simplex integrals
----------------------
Order ``n`` integrals run over ``t0 < tau_1 < ... < tau_n < t``.  In gap
coordinates ``delta_j`` (fractions of ``t - t0`` summing to one) the rule
is a tensor Gauss-Jacobi product after stick breaking, which absorbs the
``delta^(-1/2)`` endpoint factors of pinned free propagators exactly.
Oscillatory endpoint factors ``exp(i c^2 / 2g)`` are tamed by moving the
gaps into the complex plane along

    g_j = T delta_j (1 - i eta (1 - delta_j / m)),   m = sum_k delta_k^2,

which keeps ``sum_j g_j = T`` and sends every short gap along the ray of
angle ``-atan(eta)``, where the factor decays.  This requires every integrand factor
to be analytic in the times, so it is used only for point-atom chains
without source.  The quadrature error of each order is estimated by
comparing two rule sizes.

Sums are evaluated in a fixed index order, so results are bitwise
reproducible.
"""

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, roots_jacobi, roots_legendre

from .closedform import GridFunction, PropagatorQuery, k0_xi, kh_xi, t_free
from .errors import DomainError, ToleranceError

__all__ = [
    "SpaceTimeComponent",
    "SpaceTimeMeasure",
    "FourierMeasure",
    "SeriesReport",
    "ks_bound",
    "ks_order_n",
    "ks_propagator",
    "ks_harmonic_propagator",
    "ks_integral_equation_residual",
    "ks_schrodinger_residual",
    "ks_gauge_pair",
    "ahk_bound",
    "ahk_order",
    "ahk_t_transform",
    "ahk_box_order",
    "transition_x",
    "transition_xdot",
    "transition_xddot",
    "transition_x_regularized",
    "ccr_check",
    "ehrenfest_check",
    "pinned_factorization_check",
    "keyfh_check",
    "simplex_rule",
]

KS_ORDER_CAP = 8
AHK_ORDER_CAP = 6
#: Imaginary tilt of the deformed gap contour.
DEFORM_ETA = 1.0
#: Largest tensor rule evaluated for one order and one atom tuple.
MAX_RULE_POINTS = 250_000
_CHUNK = 20_000


# ---------------------------------------------------------------- measures


@dataclass
class SpaceTimeComponent:
    """One component of a space-time measure in one dimension.

    The component contributes ``weight * S(dy | tau) * rho(tau) dtau`` for a
    Lebesgue time profile, or ``weight * S(dy | s)`` at each kick time ``s``.

    Attributes
    ----------
    weight : complex
    kind : {'point', 'gauss'}
        Spatial shape ``S``: a Dirac atom at ``location`` or a normal density
        with mean ``location`` and standard deviation ``sd``.
    location : float or callable
        Position or mean; a callable of time gives a moving component.
    sd : float, optional
        Width of a Gaussian component.
    profile : None, float, array_like or callable
        Time density ``rho``: ``None`` means 1, an array holds polynomial
        coefficients in ascending order.
    kicks : sequence of float, optional
        Kick times.  When given the component is a time atom and
        ``profile`` is ignored.
    analytic : bool
        Whether callables accept complex times.  Constants and polynomials
        always do.
    """

    weight: complex
    kind: str = "point"
    location: object = 0.0
    sd: float = None
    profile: object = None
    kicks: tuple = None
    analytic: bool = False

    def __post_init__(self):
        self.weight = complex(self.weight)
        if self.kind not in ("point", "gauss"):
            raise DomainError("component kind must be 'point' or 'gauss'")
        if self.kind == "gauss" and not (self.sd is not None and self.sd > 0):
            raise DomainError("Gaussian components need sd > 0")
        if self.kicks is not None:
            self.kicks = tuple(sorted(float(s) for s in self.kicks))
        if isinstance(self.profile, (list, tuple, np.ndarray)):
            self.profile = np.asarray(self.profile, dtype=complex)

    @property
    def is_kicked(self):
        return self.kicks is not None

    @property
    def deformable(self):
        """Whether all time dependence continues to complex times."""
        if self.kind != "point" or self.is_kicked:
            return False
        if callable(self.location) or callable(self.profile):
            return self.analytic
        return True

    def rho(self, tau):
        tau = np.asarray(tau)
        p = self.profile
        if p is None:
            return np.ones(tau.shape, dtype=complex)
        if callable(p):
            return np.asarray(p(tau), dtype=complex) * np.ones(tau.shape)
        if np.ndim(p) == 0:
            return np.full(tau.shape, complex(p))
        return np.polynomial.polynomial.polyval(tau, p)

    def loc(self, tau):
        tau = np.asarray(tau)
        if callable(self.location):
            return np.asarray(self.location(tau), dtype=complex) * np.ones(tau.shape)
        return np.full(tau.shape, complex(self.location))

    def density(self, x, tau):
        """Space-time density ``weight * S(x | tau) * rho(tau)`` of a Gaussian component."""
        if self.kind != "gauss":
            raise DomainError("only Gaussian components have a density")
        mu = self.loc(tau)
        z = (np.asarray(x) - mu) / self.sd
        return self.weight * self.rho(tau) * np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi))


class SpaceTimeMeasure:
    """Finite sum of :class:`SpaceTimeComponent` objects.

    Either every component has a Lebesgue time profile, or every component
    is kicked.  Mixed measures are rejected.
    """

    def __init__(self, components=()):
        self.components = list(components)
        kicked = {c.is_kicked for c in self.components}
        if len(kicked) > 1:
            raise DomainError("cannot mix kicked and Lebesgue-in-time components")
        self.is_kicked = kicked == {True}

    @classmethod
    def point_atom(cls, x1, g, profile=None):
        """``g delta_{x1}(dy) rho(tau) dtau``."""
        return cls([SpaceTimeComponent(g, "point", x1, profile=profile)])

    @classmethod
    def kick(cls, x1, s, g):
        """``g delta_{x1}(dy) delta_s(dtau)``."""
        return cls([SpaceTimeComponent(g, "point", x1, kicks=(s,))])

    @classmethod
    def gaussian(cls, mean, sd, g, profile=None):
        return cls([SpaceTimeComponent(g, "gauss", mean, sd=sd, profile=profile)])

    def __add__(self, other):
        return SpaceTimeMeasure(self.components + other.components)

    def __len__(self):
        return len(self.components)

    @property
    def beta(self):
        """A Gaussian tail rate of ``|v|``; infinite without Gaussian components."""
        sds = [c.sd for c in self.components if c.kind == "gauss"]
        return math.inf if not sds else 0.25 / max(sds) ** 2

    def c_v(self, t0, t, n_samples=2001):
        """Bound on the density of the time marginal of ``|v|`` over ``[t0, t]``."""
        if self.is_kicked:
            return math.inf
        ts = np.linspace(t0, t, n_samples)
        return float(sum(abs(c.weight) * np.max(np.abs(c.rho(ts))) for c in self.components))

    def potential(self, x, tau):
        """Density of the Gaussian part, ``sum_c weight S(x|tau) rho(tau)``."""
        out = 0.0
        for c in self.components:
            if c.kind == "gauss" and not c.is_kicked:
                out = out + c.density(x, tau)
        return out


class FourierMeasure:
    """Finite Fourier measure ``m = sum_j w_j delta_{alpha_j}`` on ``R^d``.

    ``V(x) = sum_j w_j exp(i alpha_j . x)``.  With ``kick_times`` the
    potential acts only at those times, ``V(x, tau) = V(x) sum_s delta_s(tau)``.
    """

    def __init__(self, alphas, weights, kick_times=None):
        alphas = np.asarray(alphas, dtype=float)
        if alphas.ndim == 1:
            alphas = alphas[:, None]
        self.alphas = alphas.reshape(len(alphas), -1) if alphas.size else np.zeros((0, 1))
        self.weights = np.asarray(weights, dtype=complex).reshape(-1)
        if len(self.weights) != len(self.alphas):
            raise DomainError("one weight per atom is required")
        self.kick_times = None if kick_times is None else tuple(sorted(float(s) for s in kick_times))

    @classmethod
    def cosine(cls, g, d=1, axis=0):
        """``V = g cos(x_axis)``, that is ``(g/2)(delta_{e} + delta_{-e})``."""
        e = np.zeros(d)
        e[axis] = 1.0
        return cls(np.stack([e, -e]), [g / 2.0, g / 2.0])

    @classmethod
    def empty(cls, d=1):
        return cls(np.zeros((0, d)), [])

    @property
    def d(self):
        return self.alphas.shape[1]

    def __len__(self):
        return len(self.weights)

    @property
    def total_variation(self):
        return float(np.sum(np.abs(self.weights)))

    def potential(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=complex))
        return complex(np.sum(self.weights * np.exp(1j * (self.alphas @ x))))

    def gradient(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=complex))
        ph = self.weights * np.exp(1j * (self.alphas @ x))
        return (1j * self.alphas * ph[:, None]).sum(axis=0)


# ------------------------------------------------------------------ report


@dataclass
class SeriesReport:
    """Per-order values of a perturbation series and its error budget.

    Attributes
    ----------
    orders : list of int
    values : list of complex
        Order contributions ``K_n``.
    bounds : list of float
        Analytic bounds on ``|K_n|`` (``nan`` where none applies).
    quad_errors : list of float
        Quadrature error estimates per order.
    tail_bound : float
        Bound on the omitted orders.
    """

    orders: list = field(default_factory=list)
    values: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    quad_errors: list = field(default_factory=list)
    tail_bound: float = 0.0

    @property
    def total(self):
        return complex(math.fsum(v.real for v in self.values) + 1j * math.fsum(v.imag for v in self.values))

    @property
    def error(self):
        return float(math.fsum(self.quad_errors) + self.tail_bound)

    def to_dict(self):
        tot = self.total
        return {
            "orders": list(self.orders),
            "values": [[v.real, v.imag] for v in self.values],
            "bounds": [None if not math.isfinite(b) else b for b in self.bounds],
            "quad_errors": list(self.quad_errors),
            "tail_bound": self.tail_bound,
            "total": [tot.real, tot.imag],
            "error": self.error,
        }


# ------------------------------------------------------------ simplex rules


@lru_cache(maxsize=512)
def _jacobi01(m, alpha, beta):
    """Gauss-Jacobi rule on [0, 1] for the weight ``(1-v)^alpha v^beta``."""
    x, w = roots_jacobi(m, alpha, beta)
    return 0.5 * (1.0 + x), w / 2.0 ** (1.0 + alpha + beta)


@lru_cache(maxsize=48)
def simplex_rule(n, a, m):
    """Rule for ``int f(delta) prod_j delta_j^{a_j}`` over the unit simplex.

    Parameters
    ----------
    n : int
        Number of interior times; ``delta`` has ``n + 1`` gap fractions.
    a : tuple of float
        ``n + 1`` exponents, each ``> -1``.
    m : int
        Nodes per stick-breaking coordinate.

    Returns
    -------
    delta : ndarray, shape (m**n, n + 1)
    weights : ndarray, shape (m**n,)
        Weights absorbing ``prod delta^a``; the measure is
        ``d delta_1 ... d delta_n``.
    """
    a = np.asarray(a, dtype=float)
    if n == 0:
        return np.ones((1, 1)), np.ones(1)
    _check_size([m] * n)
    nodes, wts = [], []
    for k in range(n):
        alpha = (n - k - 1) + float(np.sum(a[k + 1:]))
        v, w = _jacobi01(m, alpha, float(a[k]))
        nodes.append(v)
        wts.append(w)
    grids = np.meshgrid(*nodes, indexing="ij")
    V = np.stack([g.ravel() for g in grids], axis=1)
    W = np.ones(V.shape[0])
    for k, g in enumerate(np.meshgrid(*wts, indexing="ij")):
        W = W * g.ravel()
    delta = np.empty((V.shape[0], n + 1))
    rem = np.ones(V.shape[0])
    for k in range(n):
        delta[:, k] = rem * V[:, k]
        rem = rem * (1.0 - V[:, k])
    delta[:, n] = rem
    delta.setflags(write=False)
    W.setflags(write=False)
    return delta, W


def _graded_edges(scale, both=False):
    """Panel edges on [0, 1] refined geometrically around ``scale``."""
    edges = {0.0, 1.0, 0.5}
    if scale > 0:
        e = scale / 8.0
        while e < 1.0:
            edges.add(e)
            if both:
                edges.add(1.0 - e)
            e *= 2.0
    return np.array(sorted(edges))


def _composite_01(edges, p):
    x, w = roots_legendre(p)
    lo, hi = edges[:-1, None], edges[1:, None]
    return (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel(), (0.5 * (hi - lo) * w).ravel()


@lru_cache(maxsize=24)
def point_chain_rule(n, m, scale_first, scale_last, eta):
    """Deformed rule for chains of atoms at one location.

    Stick breaking takes the first gap, then the last gap, then the interior
    gaps.  The end coordinates use ``v = sin(pi phi / 2)^2``, which turns the
    weight ``v^(-1/2) (1-v)^b`` into ``pi cos(pi phi / 2)^(2b+1)``, with a
    composite Gauss-Legendre rule in ``phi`` refined geometrically toward the
    layer scales of the oscillatory end factors.  Each end coordinate is
    moved off the real axis on its own,

        first:  v -> v (1 - i eta (1-v)(1-2v)),
        last:   v -> v (1 - i eta (1-v)),

    which sends short end gaps into the lower half plane.  The powers
    ``v^a (1-v)^b`` factor exactly, so the real rule keeps its weight.

    Returns
    -------
    delta : ndarray (P, n + 1)
        Real gap fractions carried by the rule weights.
    weights : ndarray (P,)
    gaps : ndarray (P, n + 1)
        Complex gap fractions.
    jac : ndarray (P,)
        Complex Jacobian relative to the real rule.
    """
    order = [0, n] + list(range(1, n)) if n >= 2 else [0, 1]
    n_first = len(_graded_edges(min([x for x in (scale_first, scale_last) if x > 0], default=0.0), True)) - 1
    n_last = len(_graded_edges(scale_last)) - 1 if n >= 2 else 1
    _check_size([n_first * m, n_last * m] + [m] * max(n - 2, 0))
    cols = []
    for k in range(n):
        b = 0.5 * (n - k - 2)
        if k < 2:
            if k == 0:
                # a short remainder also squeezes the last gap: refine both ends
                pos = [s for s in (scale_first, scale_last) if s > 0]
                edges = _graded_edges(min(pos) if pos else 0.0, both=True)
            else:
                edges = _graded_edges(scale_last)
            phi, w = _composite_01(edges, m)
            v = np.sin(0.5 * np.pi * phi) ** 2
            w = w * np.pi * np.cos(0.5 * np.pi * phi) ** (2 * b + 1)
            if k == 0:
                A = 1 - 1j * eta * (1 - v) * (1 - 2 * v)
                B = 1 + 1j * eta * v * (1 - 2 * v)
                dv = 1 - 1j * eta * (1 - 6 * v + 6 * v * v)
            else:
                A = 1 - 1j * eta * (1 - v)
                B = 1 + 1j * eta * v
                dv = 1 - 1j * eta * (1 - 2 * v)
        else:
            v, w = _jacobi01(m, b, -0.5)
            A = B = dv = np.ones_like(v, dtype=complex)
        cols.append((v, w, A, B, dv))
    idx = np.meshgrid(*[np.arange(len(c[0])) for c in cols], indexing="ij")
    idx = [i.ravel() for i in idx]
    P = idx[0].size
    delta = np.empty((P, n + 1))
    gaps = np.empty((P, n + 1), dtype=complex)
    W = np.ones(P)
    jac = np.ones(P, dtype=complex)
    rem_r = np.ones(P)
    rem_c = np.ones(P, dtype=complex)
    for k, (v, w, A, B, dv) in enumerate(cols):
        vk, Ak, Bk = v[idx[k]], A[idx[k]], B[idx[k]]
        delta[:, order[k]] = rem_r * vk
        gaps[:, order[k]] = rem_c * vk * Ak
        rem_r = rem_r * (1 - vk)
        rem_c = rem_c * (1 - vk) * Bk
        W = W * w[idx[k]]
        jac = jac * Bk ** (n - k - 1) * dv[idx[k]]
    delta[:, order[n]] = rem_r
    gaps[:, order[n]] = rem_c
    for arr in (delta, gaps, W, jac):
        arr.setflags(write=False)
    return delta, W, gaps, jac


@lru_cache(maxsize=24)
def tilted_simplex_rule(n, m, eta):
    """Gauss-Jacobi rule with the sum-preserving tilt of every gap.

        g_j = delta_j (1 - i eta (1 - delta_j / m)),   m = sum_k delta_k^2

    Used for chains over atoms at different locations.  Returns the same
    tuple as :func:`point_chain_rule`.
    """
    delta, W = simplex_rule(n, (-0.5,) * (n + 1), m)
    mm = np.sum(delta * delta, axis=1, keepdims=True)
    gaps = delta * (1.0 - 1j * eta * (1.0 - delta / mm))
    dd = delta[:, :n]
    D = 1.0 - 1j * eta * (1.0 - 2.0 * dd / mm)
    u = -1j * eta * dd * dd / (mm * mm)
    v = 2.0 * (dd - delta[:, n:n + 1])
    jac = np.prod(D, axis=1) * (1.0 + np.sum(v * u / D, axis=1))
    gaps.setflags(write=False)
    jac.setflags(write=False)
    return delta, W, gaps, jac


def _sub_simplex(lo, hi, k, m):
    """Sorted times on ``(lo, hi)`` and weights for a k-fold simplex integral."""
    if k == 0:
        return np.zeros((1, 0)), np.ones(1)
    delta, w = simplex_rule(k, (0.0,) * (k + 1), m)
    taus = lo + (hi - lo) * np.cumsum(delta[:, :k], axis=1)
    return taus, w * (hi - lo) ** k


def _product_rule(parts, m):
    """Tensor product of sub-simplex rules; ``parts`` lists ``(lo, hi, k)``."""
    taus, w = np.zeros((1, 0)), np.ones(1)
    for lo, hi, k in parts:
        t2, w2 = _sub_simplex(lo, hi, k, m)
        taus = np.concatenate(
            [np.repeat(taus, len(w2), axis=0), np.tile(t2, (len(w), 1))], axis=1
        )
        w = np.repeat(w, len(w2)) * np.tile(w2, len(w))
    return taus, w


def _compositions(n, parts):
    """All ways to write ``n`` as an ordered sum of ``parts`` non-negative integers."""
    if parts == 1:
        yield (n,)
        return
    for k in range(n + 1):
        for rest in _compositions(n - k, parts - 1):
            yield (k,) + rest


def _segmented_rules(t0, t, breaks, n, m):
    """Rules covering the simplex over ``(t0, t)`` split at interior ``breaks``."""
    edges = [t0] + sorted(breaks) + [t]
    for comp in _compositions(n, len(edges) - 1):
        parts = [(edges[i], edges[i + 1], k) for i, k in enumerate(comp)]
        yield comp, _product_rule(parts, m)


class _RuleTooLarge(Exception):
    pass


def _check_size(sizes):
    if math.prod(sizes) > MAX_RULE_POINTS:
        raise _RuleTooLarge


def _adaptive(fn, n, budget, m0, step=2):
    """Evaluate ``fn(m)`` for growing ``m`` until successive values agree.

    Returns the last value and the difference of the last two; the estimate
    is infinite when the rule outgrows ``MAX_RULE_POINTS`` first.
    """
    if n == 0:
        return fn(1), 0.0
    m = m0
    try:
        prev = fn(m)
    except _RuleTooLarge:
        return complex("nan"), math.inf
    err = math.inf
    while True:
        m2 = m + step
        try:
            cur = fn(m2)
        except _RuleTooLarge:
            return prev, err
        err = abs(cur - prev)
        if err <= budget:
            return cur, err
        m, prev = m2, cur


def _m0(n):
    return {1: 8, 2: 6, 3: 5, 4: 4, 5: 3}.get(n, 2)


def _tail(bound_fn, n_last, extra=80):
    return float(math.fsum(bound_fn(k) for k in range(n_last + 1, n_last + 1 + extra)))


# ---------------------------------------------------------------- KS chain


def _segment_forms(g, gnorm, sing, kfreq):
    """Amplitudes and quadratic coefficients of each chain segment.

    Returns ``amp``, ``p`` and ``q`` with segment exponent
    ``p (yR - yL)^2 + q yL yR``; ``gnorm`` replaces ``g`` in the amplitude of
    singular segments, whose ``delta^(-1/2)`` is carried by the rule.
    """
    if kfreq is None:
        amp = np.where(sing, (2j * np.pi * gnorm) ** -0.5, (2j * np.pi * g) ** -0.5)
        return amp, 0.5j / g, np.zeros_like(g)
    k = kfreq
    sn = np.sin(k * g)
    ratio = sn / g
    amp = np.where(
        sing,
        np.sqrt(k / (2j * np.pi * gnorm * ratio)),
        np.sqrt(k / (2j * np.pi * sn)),
    )
    p = 0.5j * k / np.tan(k * g)
    q = -1j * k * np.tan(0.5 * k * g)
    return amp, p, q


def _chain(comps, x0, x, taus, g, gnorm, sing, kfreq, xi_incr):
    """Chain of pinned propagators integrated over Gaussian positions.

    Parameters
    ----------
    comps : sequence of SpaceTimeComponent
    taus : ndarray (P, n)
        Atom times, possibly complex.
    g, gnorm : ndarray (P, n + 1)
        Gaps and the amplitude gaps of singular segments.
    sing : ndarray (n + 1,) of bool
    xi_incr : ndarray (P, n + 1) or None
        Source increments ``int xi`` over each gap.
    """
    P, n = taus.shape
    amp, p, q = _segment_forms(g, gnorm, sing, kfreq)
    pref = np.prod(amp, axis=1)
    for j, c in enumerate(comps):
        pref = pref * c.rho(taus[:, j])
    pinned = [c.kind == "point" for c in comps]
    if all(pinned):
        y = np.empty((P, n + 2), dtype=complex)
        y[:, 0] = x0
        y[:, -1] = x
        for j, c in enumerate(comps):
            y[:, j + 1] = c.loc(taus[:, j])
        dy = np.diff(y, axis=1)
        if xi_incr is not None:
            dy = dy + xi_incr
        expo = np.sum(p * dy * dy + q * y[:, :-1] * y[:, 1:], axis=1)
        return pref * np.exp(expo)
    # general case: quadratic form y^T H y + h.y + h0 over all chain points
    N = n + 2
    H = np.zeros((P, N, N), dtype=complex)
    h = np.zeros((P, N), dtype=complex)
    h0 = np.zeros(P, dtype=complex)
    I = np.zeros_like(g) if xi_incr is None else xi_incr
    for j in range(n + 1):
        L, R = j, j + 1
        pj, qj = p[:, j], q[:, j]
        H[:, L, L] += pj
        H[:, R, R] += pj
        H[:, L, R] += -pj + 0.5 * qj
        H[:, R, L] += -pj + 0.5 * qj
        h[:, R] += 2 * pj * I[:, j]
        h[:, L] += -2 * pj * I[:, j]
        h0 += pj * I[:, j] ** 2
    yp = np.zeros((P, N), dtype=complex)
    yp[:, 0] = x0
    yp[:, -1] = x
    free = []
    for j, c in enumerate(comps):
        idx = j + 1
        mu = c.loc(taus[:, j])
        if c.kind == "point":
            yp[:, idx] = mu
            continue
        free.append(idx)
        s2 = c.sd ** 2
        H[:, idx, idx] += -0.5 / s2
        h[:, idx] += mu / s2
        h0 += -0.5 * mu * mu / s2
        pref = pref / math.sqrt(2 * math.pi * s2)
    fixed = [i for i in range(N) if i not in free]
    f = np.asarray(free)
    fx = np.asarray(fixed)
    ypf = yp[:, fx]
    Hff = H[:, f][:, :, f]
    Hfp = H[:, f][:, :, fx]
    Hpp = H[:, fx][:, :, fx]
    A = -2.0 * Hff
    b = h[:, f] + 2.0 * np.einsum("pij,pj->pi", Hfp, ypf)
    c0 = h0 + np.einsum("pi,pij,pj->p", ypf, Hpp, ypf) + np.einsum("pi,pi->p", h[:, fx], ypf)
    sol = np.linalg.solve(A, b[..., None])[..., 0]
    eig = np.linalg.eigvals(A)
    det_m12 = np.prod(eig ** -0.5, axis=1)
    k = len(free)
    return pref * (2 * np.pi) ** (k / 2) * det_m12 * np.exp(0.5 * np.sum(b * sol, axis=1) + c0)


def _xi_antiderivative(xi, taus):
    """``int_{T0}^{tau} xi`` for real times through the grid spline."""
    tt = np.clip(np.real(taus), xi.T0, xi.T)
    return np.asarray(xi._anti(tt), dtype=complex)


def _layer_scale(c, T):
    """Width in ``phi`` of the end layer of ``exp(i c^2 / 2g)``, rounded to half powers of two."""
    sc = 2 / np.pi * abs(c) / math.sqrt(2 * abs(T))
    if sc < 1e-6:
        return 0.0
    return float(2.0 ** (round(2 * math.log2(sc)) / 2))


def _ks_tuple_integral(query, comps, n, m, kfreq, xi, deform):
    x0 = complex(query.x0[0])
    x = complex(query.x[0])
    t0 = complex(query.t0)
    T = complex(query.t) - t0
    pinned = [True] + [c.kind == "point" for c in comps] + [True]
    sing = np.array([pinned[j] and pinned[j + 1] for j in range(n + 1)])
    if deform:
        locs = {complex(c.location) for c in comps}
        if len(locs) == 1:
            y1 = locs.pop()
            # layer scales of exp(i c^2 / 2g) in the graded coordinate phi
            sc = [_layer_scale(c, T) for c in (y1 - x0, x - y1)]
            if max(sc) > 0:
                delta, w, gfrac, jac = point_chain_rule(n, m, sc[0], sc[1], DEFORM_ETA)
            else:
                delta, w = simplex_rule(n, (-0.5,) * (n + 1), m)
                gfrac, jac = delta, np.ones(len(w))
        else:
            delta, w, gfrac, jac = tilted_simplex_rule(n, m, DEFORM_ETA)
    else:
        a = tuple(-0.5 if s else 0.0 for s in sing)
        delta, w = simplex_rule(n, a, m)
        gfrac, jac = delta, np.ones(len(w))
    total = 0.0 + 0.0j
    for lo in range(0, len(w), _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        g = T * gfrac[sl]
        gnorm = g / delta[sl]
        taus = t0 + np.cumsum(g[:, :n], axis=1)
        incr = None
        if xi is not None:
            ends = np.full((taus.shape[0], 1), t0)
            anti = _xi_antiderivative(xi, np.concatenate([ends, taus, ends + T], axis=1))
            incr = np.diff(anti, axis=1)
        vals = _chain(comps, x0, x, taus, g, gnorm, sing, kfreq, incr)
        total += np.sum(w[sl] * jac[sl] * vals)
    return complex(total * T ** n)


def _source_phase(query, xi):
    if xi is None:
        return 1.0
    x0 = complex(query.x0[0])
    x = complex(query.x[0])
    return complex(np.exp(1j * x0 * complex(xi(query.t0)) - 1j * x * complex(xi(query.t))
                          - 0.5j * xi.sq_integral(query.t0, query.t)))


def _zero_order(query, xi, kfreq):
    if kfreq is None:
        return k0_xi(query, xi)
    return kh_xi(PropagatorQuery(query.x0, query.x, query.t0, query.t, kfreq), xi)


def _check_ks_query(query, v, xi):
    if query.d != 1:
        raise DomainError("the KS series is one-dimensional")
    if v.is_kicked:
        raise DomainError("time atoms are handled by the kicked engine")
    if xi is not None and isinstance(query.duration, complex):
        raise DomainError("complex durations need xi = None")


def _ks_order(query, v, n, xi, kfreq, budget):
    """Order ``n`` of the KS series and its quadrature error estimate."""
    if n == 0:
        return _zero_order(query, xi, kfreq), 0.0
    comps = v.components
    total = 0.0 + 0.0j
    err = 0.0
    tuples = list(itertools.product(range(len(comps)), repeat=n))
    per = budget / max(len(tuples), 1)
    for tup in tuples:
        cs = [comps[i] for i in tup]
        wprod = np.prod([c.weight for c in cs])
        deform = xi is None and all(c.deformable for c in cs)
        if not deform and isinstance(query.duration, complex):
            raise DomainError("complex durations need point atoms with analytic profiles")

        def fn(m, cs=cs, deform=deform):
            return _ks_tuple_integral(query, cs, n, m, kfreq, xi, deform)

        val, e = _adaptive(fn, n, per / max(abs(wprod), 1e-300), _m0(n), step=1)
        total += (-1j) ** n * wprod * val
        err += abs(wprod) * e
    return complex(total * _source_phase(query, xi)), err


def ks_bound(n, c_v, duration, harmonic=False):
    """Bound ``M_n`` on ``|K_n|`` for a measure with time-marginal density ``c_v``.

        M_n = c_v^n |D|^((n-1)/2) / (2^((n+1)/2) Gamma((n+1)/2))

    Around the oscillator each factor grows by at most ``sqrt(pi/2)``.
    """
    D = abs(duration)
    if c_v == 0:
        return 0.0 if n > 0 else 1.0 / math.sqrt(2 * math.pi * D)
    logm = (n * math.log(c_v) + 0.5 * (n - 1) * math.log(D)
            - 0.5 * (n + 1) * math.log(2.0) - gammaln(0.5 * (n + 1)))
    if harmonic:
        logm += 0.25 * (n + 1) * math.log(math.pi / 2)
    return math.exp(logm)


def ks_order_n(query, v, n, xi=None, tol=1e-8):
    """Order ``n`` term ``K_n`` of the KS series.

    ``K_0`` is the free propagator with source.  For ``n >= 1`` the term is

        (-i)^n int_{Lambda_n} prod_j v(dy_j, dtau_j)
            prod_{j=1}^{n+1} K_0(y_j, tau_j | y_{j-1}, tau_{j-1}),

    with the source phase of the full interval factored out.

    Raises
    ------
    ToleranceError
        If the quadrature estimate exceeds ``tol``.
    """
    _check_ks_query(query, v, xi)
    val, err = _ks_order(query, v, int(n), xi, None, tol)
    if err > tol:
        raise ToleranceError(f"order {n}: quadrature estimate {err:.2e} above {tol:.2e}")
    return val


def _kicked_series(query, v, xi, kfreq):
    events = sorted(((s, c) for c in v.components for s in c.kicks), key=lambda e: e[0])
    times = sorted({s for s, _ in events})
    t0 = float(np.real(query.t0))
    t = float(np.real(query.t))
    if any(not (t0 < s < t) for s in times):
        raise DomainError("kick times must lie inside (t0, t)")
    rep = SeriesReport()
    rep.orders.append(0)
    rep.values.append(_zero_order(query, xi, kfreq))
    rep.bounds.append(math.nan)
    rep.quad_errors.append(0.0)
    x0 = complex(query.x0[0])
    x = complex(query.x[0])
    phase = _source_phase(query, xi)
    for n in range(1, len(times) + 1):
        total = 0.0 + 0.0j
        for chain in itertools.combinations(events, n):
            ss = [s for s, _ in chain]
            if any(b <= a for a, b in zip(ss[:-1], ss[1:])):
                continue
            cs = [c for _, c in chain]
            taus = np.array([ss], dtype=complex)
            grid = np.array([[t0] + ss + [t]])
            g = np.diff(grid, axis=1).astype(complex)
            incr = None
            if xi is not None:
                incr = np.diff(_xi_antiderivative(xi, grid), axis=1)
            sing = np.zeros(n + 1, dtype=bool)
            val = _chain(
                [SpaceTimeComponent(c.weight, c.kind, c.location, c.sd) for c in cs],
                x0, x, taus, g, g, sing, kfreq, incr,
            )[0]
            total += (-1j) ** n * np.prod([c.weight for c in cs]) * val
        rep.orders.append(n)
        rep.values.append(complex(total * phase))
        rep.bounds.append(math.nan)
        rep.quad_errors.append(0.0)
    return rep


def _ks_series(query, v, xi, tol, order_cap, kfreq):
    if v.is_kicked:
        if query.d != 1:
            raise DomainError("the KS series is one-dimensional")
        return _kicked_series(query, v, xi, kfreq)
    _check_ks_query(query, v, xi)
    D = query.duration
    harmonic = kfreq is not None
    if len(v) == 0:
        return SeriesReport([0], [_zero_order(query, xi, kfreq)], [math.nan], [0.0], 0.0)
    c_v = v.c_v(float(np.real(query.t0)), float(np.real(query.t)))

    def bound(k):
        return ks_bound(k, c_v, D, harmonic)

    n_last = None
    for N in range(order_cap + 1):
        if _tail(bound, N) < 0.5 * tol:
            n_last = N
            break
    if n_last is None:
        raise ToleranceError(
            f"tail bound stays above {0.5 * tol:.2e} up to order cap {order_cap}"
        )
    rep = SeriesReport(tail_bound=_tail(bound, n_last))
    budget = 0.5 * tol / (n_last + 1)
    for n in range(n_last + 1):
        val, err = _ks_order(query, v, n, xi, kfreq, budget)
        rep.orders.append(n)
        rep.values.append(val)
        rep.bounds.append(bound(n) if xi is None or np.all(np.isreal(xi.values)) else math.nan)
        rep.quad_errors.append(err)
    if rep.error > tol:
        raise ToleranceError(f"combined error {rep.error:.2e} above {tol:.2e}")
    return rep


def ks_propagator(query, v, xi=None, tol=1e-6, order_cap=KS_ORDER_CAP):
    """KS series for ``K^(xi)(x, t | x0, t0)`` in one dimension.

    The series stops at the first order whose bound tail is below
    ``tol / 2``; every order is integrated to a share of the other half.
    Kicked measures give a finite series.

    Parameters
    ----------
    query : PropagatorQuery
    v : SpaceTimeMeasure
    xi : GridFunction, optional
        Source ``W = xi_dot(t) x``.
    tol : float
    order_cap : int

    Returns
    -------
    SeriesReport

    Raises
    ------
    ToleranceError
        If the tail or the quadrature cannot be brought below ``tol``.
    """
    return _ks_series(query, v, xi, tol, order_cap, None)


def ks_harmonic_propagator(query, v, tol=1e-6, order_cap=KS_ORDER_CAP):
    """KS series around the oscillator ``k^2 x^2 / 2`` with ``k = query.k``."""
    if query.k is None:
        raise DomainError("harmonic expansion needs query.k")
    kd = query.k * abs(query.duration)
    if not 0 < kd < math.pi / 2:
        raise DomainError("need 0 < k |Delta| < pi/2")
    return _ks_series(query, v, None, tol, order_cap, float(query.k))


def ks_integral_equation_residual(query, v, tol=1e-6, n_per_panel=6, eta=1.0, kfreq=None):
    """Residual ``K - K_0 + i int v(dy, dtau) K_0(x,t|y,tau) K(y,tau|x0,t0)``.

    Only point components with analytic profiles are supported.  The time
    integral runs along ``tau = t0 + T u (1 - i eta (1-u)(1-2u))``, which
    leaves both endpoints in the direction where their oscillatory factors
    decay, with ``u = sin(pi phi / 2)^2`` removing the square-root endpoint
    behaviour and panels in ``phi`` graded toward the end layers.  The
    inner propagators are full series at complex durations.

    Returns
    -------
    residual : complex
    report : SeriesReport
        The series for ``K`` at the query.
    """
    if v.is_kicked or any(c.kind != "point" or not c.deformable for c in v.components):
        raise DomainError("residual check needs point atoms with analytic profiles")
    ks = ks_propagator if kfreq is None else ks_harmonic_propagator
    q = query if kfreq is None else PropagatorQuery(query.x0, query.x, query.t0, query.t, kfreq)
    rep = ks(q, v, tol=tol)
    N = rep.orders[-1]
    t0 = float(query.t0)
    T = float(query.t) - t0
    x = complex(query.x[0])
    x0 = complex(query.x0[0])
    integral = 0.0 + 0.0j
    for c in v.components:
        y = complex(c.location)
        scales = [s for s in (_layer_scale(y - x0, T), _layer_scale(x - y, T)) if s > 0]
        phi, wphi = _composite_01(_graded_edges(min(scales) if scales else 0.0, both=True), n_per_panel)
        u = np.sin(0.5 * np.pi * phi) ** 2
        du = 0.5 * np.pi * np.sin(np.pi * phi)
        shape = 1.0 - 1j * eta * (1.0 - u) * (1.0 - 2.0 * u)
        dshape = -1j * eta * (4.0 * u - 3.0)
        taus = t0 + T * u * shape
        dtau = T * (shape + u * dshape) * du
        budget = 0.1 * tol / len(phi)
        for tau, wt, dt in zip(taus, wphi, dtau):
            inner = PropagatorQuery(x0, y, t0, tau, kfreq)
            outer = PropagatorQuery(y, x, tau, query.t, kfreq)
            k_in = sum(_ks_order(inner, v, n, None, kfreq, budget)[0] for n in range(N))
            k_out = _zero_order(outer, None, kfreq)
            integral += wt * dt * c.weight * complex(c.rho(np.array(tau))) * k_out * k_in
    resid = rep.total - rep.values[0] + 1j * integral
    return complex(resid), rep


def ks_schrodinger_residual(query, v, h=0.05, tol=1e-9, order_cap=12):
    """``(i d_t + (1/2) d_x^2) K - V K`` at the query by fourth-order central differences.

    ``V`` is the density of the Gaussian components of ``v``.
    """
    x = float(np.real(query.x[0]))
    t = float(np.real(query.t))

    def K(xx, tt):
        return ks_propagator(query.with_points(x=xx, t=tt), v, tol=tol, order_cap=order_cap).total

    k0 = K(x, t)
    dt = (-K(x, t + 2 * h) + 8 * K(x, t + h) - 8 * K(x, t - h) + K(x, t - 2 * h)) / (12 * h)
    dxx = (-K(x + 2 * h, t) + 16 * K(x + h, t) - 30 * k0 + 16 * K(x - h, t) - K(x - 2 * h, t)) / (12 * h * h)
    return complex(1j * dt + 0.5 * dxx - v.potential(x, t) * k0)


def ks_gauge_pair(query, v, xi, tol=1e-8):
    """Both sides of the source gauge identity for Gaussian measures.

    With ``p(tau) = -(xi(tau) - xi(t0))``, ``c(tau) = int_{t0}^tau p`` and
    ``b(tau) = -(1/2) int_{t0}^tau p^2``,

        K_v^(xi)(x, t | x0, t0) = exp(i p(t) x + i b(t) + i phi0)
                                  K_w(x - c(t), t | x0, t0),

    where ``w`` is ``v`` moved by ``-c(tau)`` and ``phi0`` is fixed by the
    zero-order terms.  Returns ``(left, right)``.
    """
    t0 = float(query.t0)
    t = float(query.t)
    xi0 = complex(xi(t0))
    p_of = lambda s: -(np.asarray(xi(s)) - xi0)
    times, wts = roots_legendre(96)

    def integ(f, b):
        s = 0.5 * (b - t0) * times + 0.5 * (b + t0)
        return np.sum(0.5 * (b - t0) * wts * f(s))

    def shift(s):
        s = np.atleast_1d(np.real(np.asarray(s)))
        return np.array([integ(p_of, si) if si > t0 else 0.0 for si in s.ravel()]).reshape(s.shape)

    comps = []
    for c in v.components:
        loc = c.location
        moved = (lambda s, loc=loc: (loc(s) if callable(loc) else loc) - shift(s))
        comps.append(SpaceTimeComponent(c.weight, c.kind, moved, c.sd, c.profile, c.kicks))
    w = SpaceTimeMeasure(comps)
    x = complex(query.x[0])
    ct = complex(integ(p_of, t))
    bt = complex(-0.5 * integ(lambda s: p_of(s) ** 2, t))
    pt = complex(p_of(t))
    left = ks_propagator(query, v, xi, tol=tol)
    right = ks_propagator(query.with_points(x=x - ct), w, None, tol=tol)
    k_xi = k0_xi(query, xi)
    k_sh = t_free(query.with_points(x=x - ct))
    phi0 = k_xi / (np.exp(1j * pt * x + 1j * bt) * k_sh)
    return left.total, complex(np.exp(1j * pt * x + 1j * bt) * phi0 * right.total)


# -------------------------------------------------------------------- AHK


def _atom_tuples(m, n):
    """All ordered atom tuples of length ``n``: alphas ``(A, n, d)`` and weights."""
    tuples = list(itertools.product(range(len(m)), repeat=n))
    idx = np.array(tuples, dtype=int).reshape(len(tuples), n)
    return m.alphas[idx], np.prod(m.weights[idx], axis=1)


def _theta_data(query, theta):
    d = query.d
    if theta is None:
        return np.zeros(d, dtype=complex), 0.0, None
    integ = np.atleast_1d(theta.integral(query.t0, query.t))
    return integ, theta.sq_integral(), theta


def _tphi(query, alphas, taus, theta_data):
    """``T Phi_n(theta)`` for atom tuples ``(A, n, d)`` at times ``(P, n)``.

        (2 pi i D)^(-d/2) exp(i x0 . sum alpha)
        exp(-(i/2) int (theta + sum_j alpha_j 1_[t0, tau_j))^2)
        exp(-(int_D theta + sum_j alpha_j (tau_j - t0) + x - x0)^2 / (2 i D))
    """
    d = query.d
    t0 = float(np.real(query.t0))
    D = query.duration
    integ, full, theta = theta_data
    X = query.x - query.x0
    S = alphas.sum(axis=1)
    base = (2j * np.pi * D) ** (-d / 2.0) * np.exp(1j * (S @ query.x0))
    G = np.einsum("ajd,ald->ajl", alphas, alphas)
    Mmin = np.minimum(taus[:, :, None], taus[:, None, :]) - t0
    Q = np.einsum("ajl,pjl->ap", G, Mmin)
    expo = -0.5j * (full + Q)
    if theta is not None and taus.shape[1] > 0:
        big = np.stack([_theta_cumulative(theta, t0, taus[:, j]) for j in range(taus.shape[1])], axis=1)
        expo = expo - 1j * np.einsum("ajd,pjd->ap", alphas, big.reshape(taus.shape + (d,)))
    chi = np.einsum("ajd,pj->apd", alphas, taus - t0) + (integ + X)[None, None, :]
    expo = expo - np.sum(chi * chi, axis=2) / (2j * D)
    return base[:, None] * np.exp(expo)


def _theta_cumulative(theta, t0, s):
    """``int_{t0}^{s} theta`` for an array of real times."""
    lo = np.clip(t0, theta.T0, theta.T)
    hi = np.clip(np.real(s), theta.T0, theta.T)
    out = theta._anti(hi) - theta._anti(lo)
    return np.asarray(out, dtype=complex)


def ahk_bound(n, m, duration, d):
    """``C_n = (|D| sum|w|)^n / n! * (2 pi |D|)^(-d/2)``, the bound on order ``n``."""
    D = abs(duration)
    return (D * m.total_variation) ** n / math.factorial(n) * (2 * math.pi * D) ** (-d / 2.0)


def _weighted_sum(query, m, n, taus, w, theta_data, factor=None, extra=None):
    """``sum_tuples prod w * sum_P w_P * TPhi_n * factor`` in chunks."""
    alphas, wts = _atom_tuples(m, n)
    total = 0.0 + 0.0j
    for lo in range(0, len(w), _CHUNK):
        tt = taus[lo:lo + _CHUNK]
        if extra is not None:
            al, tt2 = extra(alphas, tt)
            vals = _tphi(query, al, tt2, theta_data)
        else:
            vals = _tphi(query, alphas, tt, theta_data)
        if factor is not None:
            vals = vals * factor(alphas, tt)
        total += np.sum(wts[:, None] * vals * w[lo:lo + _CHUNK][None, :])
    return complex(total)


def ahk_order(query, m, n, theta=None, budget=1e-10, breaks=()):
    """Order ``n`` of the AHK series, ``(-i)^n sum int_{Lambda_n} prod w T Phi_n``."""
    td = _theta_data(query, theta)
    n = int(n)
    if m.kick_times is not None:
        return _ahk_kicked_order(query, m, n, td), 0.0
    if n == 0:
        return complex(_tphi(query, np.zeros((1, 0, query.d)), np.zeros((1, 0)), td)[0, 0]), 0.0
    if len(m) == 0:
        return 0.0 + 0.0j, 0.0
    t0 = float(np.real(query.t0))
    t = float(np.real(query.t))

    def fn(mp):
        tot = 0.0 + 0.0j
        for _, (taus, w) in _segmented_rules(t0, t, breaks, n, mp):
            tot += _weighted_sum(query, m, n, taus, w, td)
        return tot

    val, err = _adaptive(fn, n, budget, _m0(n))
    return complex((-1j) ** n * val), err


def _ahk_kicked_order(query, m, n, td):
    t0 = float(np.real(query.t0))
    t = float(np.real(query.t))
    times = [s for s in m.kick_times if t0 < s < t]
    if n == 0:
        return complex(_tphi(query, np.zeros((1, 0, query.d)), np.zeros((1, 0)), td)[0, 0])
    if n > len(times) or len(m) == 0:
        return 0.0 + 0.0j
    taus = np.array(list(itertools.combinations(times, n)), dtype=float)
    return complex((-1j) ** n * _weighted_sum(query, m, n, taus, np.ones(len(taus)), td))


def ahk_t_transform(query, m, n_max=AHK_ORDER_CAP, theta=None, tol=1e-8):
    """AHK series for the T-transform of the Feynman integrand at ``theta``.

    ``theta = None`` gives the propagator.  Each order is a simplex integral
    summed over atom tuples; the report carries the bounds ``C_n`` (valid
    for real ``theta``) and the tail beyond ``n_max``.

    Raises
    ------
    ToleranceError
        If an order cannot be integrated to its share of ``tol``.
    """
    if m.d != query.d:
        raise DomainError("measure and query dimensions differ")
    rep = SeriesReport()
    budget = 0.5 * tol / (n_max + 1)
    D = query.duration
    kicked = m.kick_times is not None
    for n in range(n_max + 1):
        val, err = ahk_order(query, m, n, theta, budget)
        if err > budget:
            raise ToleranceError(f"order {n}: quadrature estimate {err:.2e} above {budget:.2e}")
        rep.orders.append(n)
        rep.values.append(val)
        rep.bounds.append(math.nan if kicked else ahk_bound(n, m, D, query.d))
        rep.quad_errors.append(err)
    if kicked:
        n_kicks = len([s for s in m.kick_times if float(np.real(query.t0)) < s < float(np.real(query.t))])
        rep.tail_bound = 0.0 if n_kicks <= n_max else math.nan
    else:
        rep.tail_bound = _tail(lambda k: ahk_bound(k, m, D, query.d), n_max)
    return rep


def ahk_box_order(query, m, n, n_gl=12, panels=2, breaks=()):
    """Order ``n`` through ``(1/n!) int_{Box_n}`` with composite Gauss-Legendre.

    Used to cross-check the simplex route; ``breaks`` adds panel edges.
    """
    td = _theta_data(query, None)
    t0 = float(np.real(query.t0))
    t = float(np.real(query.t))
    nodes, wts = _composite_gl(t0, t, n_gl, panels, breaks)
    grids = np.meshgrid(*([nodes] * n), indexing="ij")
    taus = np.stack([g.ravel() for g in grids], axis=1)
    w = np.ones(taus.shape[0])
    for g in np.meshgrid(*([wts] * n), indexing="ij"):
        w = w * g.ravel()
    val = _weighted_sum(query, m, n, taus, w, td)
    return complex((-1j) ** n * val / math.factorial(n))


def _composite_gl(a, b, n_gl, panels, breaks=()):
    x, w = roots_legendre(n_gl)
    edges = sorted(set(np.linspace(a, b, panels + 1).tolist()) | {float(s) for s in breaks if a < s < b})
    nodes, wts = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        wts.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(wts)


# ------------------------------------------------------ transition elements


def _check_s(query, s):
    t0 = float(np.real(query.t0))
    t = float(np.real(query.t))
    if not t0 < s < t:
        raise DomainError("s must lie strictly inside (t0, t)")
    return t0, t


def _x_factor(query, s, k):
    """Classical-line factor of ``x_k(s)`` at ``theta = 0``.

        x0_k - sum_j alpha_jk (min(tau_j, s) - t0) + (s - t0)/D (chi_k + X_k)
    """
    t0 = float(np.real(query.t0))
    D = query.duration
    X = complex(query.x[k] - query.x0[k])
    x0k = complex(query.x0[k])

    def f(alphas, taus):
        ak = alphas[:, :, k]
        mins = np.minimum(taus, s) - t0
        chi = ak @ (taus - t0).T
        return x0k - ak @ mins.T + (s - t0) / D * (chi + X)

    return f


def _xdot_factor(query, s, k):
    """``-sum_j alpha_jk 1[tau_j > s] + (chi_k + X_k) / D`` at ``theta = 0``."""
    t0 = float(np.real(query.t0))
    D = query.duration
    X = complex(query.x[k] - query.x0[k])

    def f(alphas, taus):
        ak = alphas[:, :, k]
        chi = ak @ (taus - t0).T
        return -(ak @ (taus > s).T.astype(float)) + (chi + X) / D

    return f


def _series_with_factor(query, m, n_max, factor, breaks, tol, order_min=0):
    """``sum_n (-i)^n sum int_{Lambda_n} prod w T Phi_n * factor`` with splits."""
    td = _theta_data(query, None)
    t0 = float(np.real(query.t0))
    t = float(np.real(query.t))
    budget = 0.5 * tol / (n_max + 1)
    total = 0.0 + 0.0j
    err = 0.0
    for n in range(order_min, n_max + 1):
        if n > 0 and len(m) == 0:
            break
        if n == 0:
            taus = np.zeros((1, 0))
            val = _weighted_sum(query, m, 0, taus, np.ones(1), td, factor)
            total += val
            continue

        def fn(mp, n=n):
            tot = 0.0 + 0.0j
            for _, (taus, w) in _segmented_rules(t0, t, breaks, n, mp):
                tot += _weighted_sum(query, m, n, taus, w, td, factor)
            return tot

        val, e = _adaptive(fn, n, budget, _m0(n))
        total += (-1j) ** n * val
        err += e
    return complex(total), err


def transition_x(query, m, s, k=0, n_max=AHK_ORDER_CAP, tol=1e-9):
    """Transition element ``E(x_k(s) I)`` of the AHK series."""
    _check_s(query, s)
    return _series_with_factor(query, m, n_max, _x_factor(query, s, k), (s,), tol)[0]


def transition_xdot(query, m, s, k=0, n_max=AHK_ORDER_CAP, tol=1e-9):
    """Transition element ``E(xdot_k(s) I)`` of the AHK series.

    Raises
    ------
    DomainError
        If ``s`` is outside ``(t0, t)`` or is a kick time.
    """
    _check_s(query, s)
    if m.kick_times is not None and s in m.kick_times:
        raise DomainError("velocity is undefined at a kick time")
    return _series_with_factor(query, m, n_max, _xdot_factor(query, s, k), (s,), tol)[0]


def transition_x_regularized(query, m, s, eps, k=0, n_max=AHK_ORDER_CAP, tol=1e-9):
    """``int y_k F_eps(y) T(I delta(x(s) - y))(0) dy`` with ``F_eps = exp(-eps^2 |y|^2 / 2)``.

    The ``y`` integral is Gaussian for every atom configuration: with
    ``a = i (s - t0)(t - s)/D`` and ``xbar`` the classical-line factor the
    integrand contributes

        (1 + a eps^2)^(-d/2) exp(-eps^2 |xbar|^2 / (2 (1 + a eps^2))) xbar_k / (1 + a eps^2).
    """
    t0, t = _check_s(query, s)
    a = 1j * (s - t0) * (t - s) / query.duration
    fx = [_x_factor(query, s, j) for j in range(query.d)]
    r = 1.0 + a * eps * eps

    def factor(alphas, taus):
        xb = [f(alphas, taus) for f in fx]
        sq = sum(v * v for v in xb)
        return r ** (-query.d / 2.0) * np.exp(-eps * eps * sq / (2 * r)) * xb[k] / r

    return _series_with_factor(query, m, n_max, factor, (s,), tol)[0]


def _richardson(eps_list, values):
    """Polynomial extrapolation of ``values(eps)`` to ``eps = 0``."""
    e = np.asarray(eps_list, dtype=float)
    out = 0.0 + 0.0j
    for i in range(len(e)):
        lw = np.prod([e[j] / (e[j] - e[i]) for j in range(len(e)) if j != i])
        out += lw * values[i]
    return complex(out)


def ccr_check(query, m, s, eps_list=(0.2, 0.1, 0.05), k=0, l=0, n_max=AHK_ORDER_CAP, tol=1e-9):
    """``E((xdot_k(s+eps) x_l(s) - x_l(s) xdot_k(s-eps)) I)`` and its ``eps -> 0`` limit.

    From the second-moment formula the difference equals

        -i delta_kl E(I) + sum_n (-i)^n sum int T Phi_n
            xbar_l(s) sum_j alpha_jk 1[s - eps < tau_j <= s + eps],

    whose remainder is ``O(eps)``.  Values are extrapolated by polynomial
    interpolation in ``eps``.

    Returns
    -------
    values : list of complex
    extrapolated : complex
    """
    t0, t = _check_s(query, s)
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 or s - e <= t0 or s + e >= t for e in eps_list):
        raise DomainError("need 0 < eps and [s - eps, s + eps] inside (t0, t)")
    rep = ahk_t_transform(query, m, n_max, tol=tol)
    base = -1j * rep.total if k == l else 0.0
    xl = _x_factor(query, s, l)
    values = []
    for e in eps_list:

        def factor(alphas, taus, e=e):
            ak = alphas[:, :, k]
            window = ((taus > s - e) & (taus <= s + e)).astype(float)
            return xl(alphas, taus) * (ak @ window.T)

        rem, _ = _series_with_factor(query, m, n_max, factor, (s - e, s, s + e), tol, order_min=1)
        values.append(complex(base + rem))
    return values, _richardson(eps_list, values)


def transition_xddot(query, m, s, k=0, n_max=AHK_ORDER_CAP, tol=1e-9):
    """Transition element ``E(xddot_k(s) I)`` of the AHK series.

    Differentiating the velocity factor in ``s`` leaves ``-i sum_j alpha_jk
    delta_s(tau_j)``, which collapses one simplex time onto ``s``.
    """
    t0, t = _check_s(query, s)
    if len(m) == 0:
        return 0.0 + 0.0j
    td = _theta_data(query, None)
    budget = 0.5 * tol / (n_max + 1)
    lhs = 0.0 + 0.0j
    for n in range(1, n_max + 1):

        def fn(mp, n=n):
            tot = 0.0 + 0.0j
            for j in range(n):
                taus_f, w = _product_rule([(t0, s, j), (s, t, n - 1 - j)], mp)
                taus = np.insert(taus_f, j, s, axis=1)
                tot += _weighted_sum(
                    query, m, n, taus, w, td,
                    factor=lambda al, tt, j=j: al[:, j, k][:, None] * np.ones(tt.shape[0])[None, :],
                )
            return tot

        val, _ = _adaptive(fn, max(n - 1, 1), budget, _m0(max(n - 1, 1)))
        lhs += (-1j) ** n * val
    return complex(lhs)


def ehrenfest_check(query, m, s, k=0, n_max=AHK_ORDER_CAP, tol=1e-9, n_gl=10):
    """Residual ``E(xddot_k(s) I) + E(d_k V(x(s)) I)`` and ``E(I)``.

    The left side collapses ``delta_s(tau_j)`` onto ``tau_j = s`` in the
    simplex; the right side inserts an extra atom ``i beta_k w_beta`` at time
    ``s`` and integrates over the box with ``1/n!``.  Order ``n + 1`` on the
    left pairs with order ``n`` on the right.

    Returns
    -------
    residual : complex
    e_i : complex
    """
    t0, t = _check_s(query, s)
    rep = ahk_t_transform(query, m, n_max, tol=tol)
    if len(m) == 0:
        return 0.0 + 0.0j, rep.total
    td = _theta_data(query, None)
    lhs = transition_xddot(query, m, s, k, n_max, tol)
    rhs = 0.0 + 0.0j
    grad_w = 1j * m.alphas[:, k] * m.weights
    nodes, wts = _composite_gl(t0, t, n_gl, 2, (s,))
    for n in range(0, n_max):
        for b in range(len(m)):
            beta = m.alphas[b]

            def extra(alphas, taus, beta=beta):
                A = alphas.shape[0]
                al = np.concatenate([alphas, np.broadcast_to(beta, (A, 1, query.d))], axis=1)
                tt = np.concatenate([taus, np.full((taus.shape[0], 1), s)], axis=1)
                return al, tt

            if n == 0:
                taus = np.zeros((1, 0))
                w = np.ones(1)
            else:
                grids = np.meshgrid(*([nodes] * n), indexing="ij")
                taus = np.stack([g.ravel() for g in grids], axis=1)
                w = np.ones(taus.shape[0])
                for g in np.meshgrid(*([wts] * n), indexing="ij"):
                    w = w * g.ravel()
            val = _weighted_sum(query, m, n, taus, w, td, extra=extra)
            rhs += (-1j) ** n * grad_w[b] * val / math.factorial(n)
    return complex(lhs + rhs), rep.total


def _pinned_weight(query, s, y):
    """Gaussian factor ``(2 pi a)^(-d/2) exp(-|xbar - y|^2 / (2a))`` of a pinned path."""
    t0 = float(np.real(query.t0))
    t = float(np.real(query.t))
    a = 1j * (s - t0) * (t - s) / query.duration
    fx = [_x_factor(query, s, j) for j in range(query.d)]
    y = np.atleast_1d(np.asarray(y, dtype=complex))

    def factor(alphas, taus):
        sq = sum((f(alphas, taus) - y[j]) ** 2 for j, f in enumerate(fx))
        return (2 * np.pi * a) ** (-query.d / 2.0) * np.exp(-sq / (2 * a))

    return factor


def pinned_factorization_check(query, m, s, y, n_max=AHK_ORDER_CAP, tol=1e-9):
    """Both sides of ``T(I delta(x(s) - y))(0) = K(x,t|y,s) K(y,s|x0,t0)``.

    The left side integrates the Fresnel integral over the pinning
    frequency in closed form for every atom configuration and splits each
    simplex at ``s``; the right side multiplies two independent series runs.

    Returns
    -------
    residual, left, right : complex
    """
    _check_s(query, s)
    left, _ = _series_with_factor(query, m, n_max, _pinned_weight(query, s, y), (s,), tol)
    q2 = PropagatorQuery(y, query.x, s, query.t)
    q1 = PropagatorQuery(query.x0, y, query.t0, s)
    right = ahk_t_transform(q2, m, n_max, tol=tol).total * ahk_t_transform(q1, m, n_max, tol=tol).total
    return complex(left - right), complex(left), complex(right)


def keyfh_check(query, m, s, center=0.0, width=1.0, n_max=AHK_ORDER_CAP, tol=1e-9,
                n_nodes=40, angle=np.pi / 8):
    """Two routes to ``E(F(x(s)) I)`` for ``F(y) = exp(-|y - c|^2 / (2 w^2))``, ``d = 1``.

    Series route: the Gaussian ``y`` integral done per atom configuration.
    Quadrature route: ``int K(x,t|y,s) F(y) K(y,s|x0,t0) dy`` with both
    propagators from separate series runs, along ``y = c + e^{i angle} u``
    with Gauss-Hermite nodes in ``u``.

    Returns
    -------
    series_route, quadrature_route : complex
    """
    if query.d != 1:
        raise DomainError("keyfh_check is one-dimensional")
    t0, t = _check_s(query, s)
    a = 1j * (s - t0) * (t - s) / query.duration
    w2 = width * width
    fx = _x_factor(query, s, 0)

    def factor(alphas, taus):
        xb = fx(alphas, taus)
        return np.sqrt(w2 / (w2 + a)) * np.exp(-(xb - center) ** 2 / (2 * (w2 + a)))

    series, _ = _series_with_factor(query, m, n_max, factor, (s,), tol)
    u, wu = np.polynomial.hermite.hermgauss(n_nodes)
    rot = np.exp(1j * angle)
    quad = 0.0 + 0.0j
    for ui, wi in zip(u, wu):
        y = center + rot * ui
        k2 = ahk_t_transform(PropagatorQuery(y, query.x, s, query.t), m, n_max, tol=tol).total
        k1 = ahk_t_transform(PropagatorQuery(query.x0, y, query.t0, s), m, n_max, tol=tol).total
        fy = np.exp(-((rot * ui) ** 2) / (2 * w2))
        quad += wi * np.exp(ui * ui) * rot * k2 * fy * k1
    return complex(series), complex(quad)
