"""Complex-scaled Feynman-Kac Monte Carlo along Brownian bridges.

For ``z`` in the closed right half of the ``sqrt``-plane the propagator
estimate is

    (2 pi z^2 T)^(-d/2) exp(-|x - x0|^2 / (2 z^2 T))
        * E exp(-z^2 T int_0^1 V(x0 + s (x - x0) + z sqrt(T) b(s)) ds),

with ``b`` a standard Brownian bridge on ``[0, 1]``.  At ``z = sqrt(i)``
the prefactor is the free propagator and the coupling is ``-i T``; for
real ``z = sqrt(lambda)`` the estimate is the heat kernel of
``(1/2) Laplacian - V`` at time ``lambda T``.

Random numbers come from counter-based Philox streams keyed by the seed.
Paths are grouped in fixed blocks of :data:`PATH_BLOCK` and block ``j``
uses counter stream ``j``, so the draws of path ``i`` depend only on the
seed, ``i``, ``n_steps`` and ``d``.  Block sums are combined with
``math.fsum`` in block order.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .closedform import PropagatorQuery
from .errors import DomainError

__all__ = [
    "PATH_BLOCK",
    "SQRT_I",
    "AnalyticPotential",
    "DossEstimate",
    "sample_bridge",
    "doss_class_margin",
    "doss_propagator",
    "doss_lp_estimate",
    "doss_path_moment",
]

PATH_BLOCK = 8192
SQRT_I = complex(math.cos(math.pi / 4), math.sin(math.pi / 4))


@dataclass
class AnalyticPotential:
    """Potential continued analytically to the strip ``D + z R^d``.

    Attributes
    ----------
    func : callable
        Maps complex points of shape ``(..., d)`` to values of shape ``(...)``.
    d : int
    a, b : float or None
        Doss parameters, ``Im V(x + z y) <= a + b |y|^2`` on ``D``.  ``None``
        means no bound is claimed.
    lo, hi : float
        The box ``D = [lo, hi]^d``.
    name : str
    params : dict
        Builtin name and parameters, used for serialisation.
    """

    func: object
    d: int = 1
    a: float = None
    b: float = None
    lo: float = -2.0
    hi: float = 2.0
    name: str = "custom"
    params: dict = None

    def __call__(self, pts):
        return np.asarray(self.func(np.asarray(pts, dtype=complex)), dtype=complex)

    @property
    def radius(self):
        return math.sqrt(self.d) * max(abs(self.lo), abs(self.hi))

    @classmethod
    def zero(cls, d=1):
        return cls(lambda p: np.zeros(p.shape[:-1], dtype=complex), d, 0.0, 0.0, name="zero", params={})

    @classmethod
    def harmonic(cls, k, d=1, lo=-2.0, hi=2.0, b=None):
        """``V = k^2 |x|^2 / 2``.

        For ``z = sqrt(i)``, ``Im V(x + z y) = (k^2/2)(sqrt(2) x.y + |y|^2)``.
        Any ``b > k^2/2`` works with ``a = k^4 R^2 / (8 (b - k^2/2))`` where
        ``R`` bounds ``|x|`` on the box; the default is ``b = 3 k^2 / 4``.
        """
        k = float(k)
        b = 0.75 * k * k if b is None else float(b)
        if b <= 0.5 * k * k:
            raise DomainError("harmonic Doss bound needs b > k^2/2")
        pot = cls(lambda p: 0.5 * k * k * np.sum(p * p, axis=-1), d, None, b, lo, hi,
                  name="harmonic", params={"k": k})
        pot.a = k ** 4 * pot.radius ** 2 / (8.0 * (b - 0.5 * k * k)) if k else 0.0
        return pot

    @classmethod
    def cosine(cls, g, d=1, axis=0):
        """``V = g cos(x_axis)``; no Doss bound holds along ``sqrt(i)``."""
        g = float(g)
        return cls(lambda p: g * np.cos(p[..., axis]), d, name="cosine", params={"g": g, "axis": axis})

    @classmethod
    def polynomial(cls, coeffs, lo=-2.0, hi=2.0, a=None, b=None):
        """One-dimensional ``V = sum_k c_k x^k`` with ascending coefficients."""
        c = np.asarray(coeffs, dtype=float)
        return cls(lambda p: np.polynomial.polynomial.polyval(p[..., 0], c), 1, a, b, lo, hi,
                   name="polynomial", params={"coeffs": c.tolist()})


@dataclass
class DossEstimate:
    """Monte Carlo propagator estimate.

    Unpacks as ``(value, stderr)``.

    Attributes
    ----------
    value : complex
    stderr : float
    bias : complex
        Fine-grid minus half-resolution estimate on the same paths.
    k0_factor : complex
        The Gaussian prefactor.
    verified : bool
        Whether the declared Doss bound certifies ``L^p`` integrability
        for some ``p > 1``.
    n_paths, n_steps : int
    """

    value: complex
    stderr: float
    bias: complex
    k0_factor: complex
    verified: bool
    n_paths: int
    n_steps: int

    def __iter__(self):
        yield self.value
        yield self.stderr

    def to_dict(self):
        return {
            "mean_re": self.value.real,
            "mean_im": self.value.imag,
            "stderr": self.stderr,
            "bias_re": self.bias.real,
            "bias_im": self.bias.imag,
            "k0_factor": [self.k0_factor.real, self.k0_factor.imag],
            "verified": self.verified,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
        }


def _block_normals(seed, block, count, n_steps, d):
    bits = np.random.Philox(key=int(seed) & (2 ** 64 - 1), counter=[0, 0, 0, int(block)])
    return np.random.Generator(bits).standard_normal((count, n_steps, d))


def _blocks(n_paths):
    for j in range(0, n_paths, PATH_BLOCK):
        yield j // PATH_BLOCK, min(PATH_BLOCK, n_paths - j)


def _bridge_block(seed, block, count, n_steps, d):
    h = 1.0 / n_steps
    w = np.cumsum(_block_normals(seed, block, count, n_steps, d) * math.sqrt(h), axis=1)
    w = np.concatenate([np.zeros((count, 1, d)), w], axis=1)
    s = np.linspace(0.0, 1.0, n_steps + 1)[None, :, None]
    return w - s * w[:, -1:, :]


def sample_bridge(n_paths, n_steps, seed, d=1):
    """Standard Brownian bridges on a uniform grid of ``[0, 1]``.

    Returns
    -------
    ndarray, shape (n_paths, n_steps + 1, d)
    """
    _check_seed(seed)
    return np.concatenate(
        [_bridge_block(seed, j, c, n_steps, d) for j, c in _blocks(int(n_paths))], axis=0)


def _check_seed(seed):
    if seed is None:
        raise DomainError("a seed is required for reproducible sampling")


def doss_class_margin(V, z, x_points, y_points):
    """``max Im V(x + z y) - a - b |y|^2`` over all pairs of sample points.

    A value ``<= 0`` certifies the Doss bound on the sample.  Potentials
    without declared parameters are tested with ``a = b = 0``.
    """
    xs = np.asarray(x_points, dtype=float).reshape(-1, V.d)
    ys = np.asarray(y_points, dtype=float).reshape(-1, V.d)
    pts = xs[:, None, :] + complex(z) * ys[None, :, :]
    vals = V(pts)
    if not np.all(np.isfinite(vals)):
        raise DomainError("potential is not finite on the sampled strip")
    a = V.a or 0.0
    b = V.b or 0.0
    return float(np.max(vals.imag - a - b * np.sum(ys * ys, axis=1)[None, :]))


def doss_lp_estimate(V, z, t, p):
    """Upper bound on ``E |exp(-i int_0^t V(line + z bridge))|^p``.

        2 d sqrt(2 / (pi t)) int_0^inf exp(p t a - (1/(2t) - (7/3) p t b) u^2) du

    Returns ``inf`` when ``b >= 3 / (14 p t^2)`` or no bound is declared.
    """
    if p < 1:
        raise DomainError("p must be at least 1")
    if V.a is None or V.b is None:
        return math.inf
    t = float(t)
    c = 0.5 / t - 7.0 / 3.0 * p * t * V.b
    if c <= 0:
        return math.inf
    return 2 * V.d * math.sqrt(2 / (math.pi * t)) * math.exp(p * t * V.a) * 0.5 * math.sqrt(math.pi / c)


def _prepare(query, V, z):
    if query.d != V.d:
        raise DomainError("query and potential dimensions differ")
    T = query.duration
    if np.iscomplexobj(T) and np.imag(T) != 0 or np.real(T) <= 0:
        raise DomainError("need a real positive duration")
    T = float(np.real(T))
    z = complex(z)
    if z.real <= 0:
        raise DomainError("z must have positive real part")
    x0 = np.real(query.x0).astype(float)
    dx = np.real(query.x).astype(float) - x0
    return T, z, x0, dx


def _functional_blocks(query, V, z, n_paths, n_steps, seed):
    """Yield per-block ``(fine, coarse)`` samples of the bridge functional."""
    T, z, x0, dx = _prepare(query, V, z)
    s = np.linspace(0.0, 1.0, n_steps + 1)
    line = x0[None, None, :] + s[None, :, None] * dx[None, None, :]
    scale = z * math.sqrt(T)
    h = 1.0 / n_steps
    for j, c in _blocks(n_paths):
        vals = V(line + scale * _bridge_block(seed, j, c, n_steps, V.d))
        fine = h * (vals.sum(axis=1) - 0.5 * (vals[:, 0] + vals[:, -1]))
        cv = vals[:, ::2]
        coarse = 2 * h * (cv.sum(axis=1) - 0.5 * (cv[:, 0] + cv[:, -1]))
        yield np.exp(-z * z * T * fine), np.exp(-z * z * T * coarse)


def doss_propagator(query, V, z=SQRT_I, n_paths=100_000, n_steps=256, seed=None):
    """Monte Carlo propagator along complex-scaled Brownian bridges.

    Parameters
    ----------
    query : PropagatorQuery
        Real endpoints and real positive duration.
    V : AnalyticPotential
    z : complex
        ``sqrt(i)`` for the Schroedinger propagator.
    n_paths, n_steps : int
        ``n_steps`` must be even; the half-resolution estimate on the same
        paths gives ``bias``.
    seed : int

    Returns
    -------
    DossEstimate

    Raises
    ------
    DomainError
        Without a seed or with invalid arguments.
    """
    _check_seed(seed)
    n_paths = int(n_paths)
    n_steps = int(n_steps)
    if n_paths < 2 or n_steps < 2 or n_steps % 2:
        raise DomainError("need n_paths >= 2 and an even n_steps >= 2")
    T, z, x0, dx = _prepare(query, V, z)
    verified = V.b is not None and V.a is not None and V.b < 3.0 / (14.0 * T * T)
    if not verified:
        warnings.warn("Doss bound not certified: unverified regime", RuntimeWarning, stacklevel=2)
    s1, s2, sd = [], [], []
    for fine, coarse in _functional_blocks(query, V, z, n_paths, n_steps, seed):
        s1.append(fine.sum())
        s2.append(np.sum(fine.real ** 2 + fine.imag ** 2))
        sd.append((fine - coarse).sum())
    re = math.fsum(v.real for v in s1) / n_paths
    im = math.fsum(v.imag for v in s1) / n_paths
    mean = complex(re, im)
    second = math.fsum(s2) / n_paths
    var = max(second - abs(mean) ** 2, 0.0) * n_paths / (n_paths - 1)
    bias = complex(math.fsum(v.real for v in sd), math.fsum(v.imag for v in sd)) / n_paths
    k0 = complex((2 * math.pi * z * z * T) ** (-V.d / 2.0) * np.exp(-np.dot(dx, dx) / (2 * z * z * T)))
    return DossEstimate(
        value=k0 * mean,
        stderr=abs(k0) * math.sqrt(var / n_paths),
        bias=k0 * bias,
        k0_factor=k0,
        verified=bool(verified),
        n_paths=n_paths,
        n_steps=n_steps,
    )


def doss_path_moment(query, V, p, z=SQRT_I, n_paths=100_000, n_steps=256, seed=None):
    """Sample mean of ``|exp(-z^2 T int_0^1 V ds)|^p`` over bridge paths."""
    _check_seed(seed)
    acc = [np.sum(np.abs(f) ** p) for f, _ in _functional_blocks(query, V, z, int(n_paths), int(n_steps), seed)]
    return math.fsum(acc) / int(n_paths)
