"""Truncated symmetric Fock space over a finite weighted basis.

A degree-n symmetric kernel is stored sparsely in the symmetrized monomial
basis ``e_m = sym(e_1^{(x) m_1} (x) ... (x) e_D^{(x) m_D})`` with ``|m| = n``.
The Gram matrix of this basis is diagonal,

    <e_m, e_m'> = delta_{m m'} * m_1! ... m_D! / n!.

With coefficients ``c_m`` the pairing against ``theta^{(x) n}`` is the
polynomial ``sum_m c_m theta^m``; we call it the *symbol* of the kernel.
Every kernel operation used here (symmetrized tensor products, contractions,
traces, substitutions) acts on symbols by multiplication, differentiation or
linear change of variables, which keeps the combinatorics exact.
"""

import json
import math
from itertools import combinations_with_replacement

import numpy as np
from scipy.special import gammaln

from .specfun import hermite_table

__all__ = [
    "WeightedBasis",
    "ChaosVector",
    "multi_indices",
    "gram_factor",
    "wick_product",
    "wiener_product",
    "trace_contract",
    "trace_norm_sq",
    "scale",
    "gamma_z",
    "jz_kernels",
    "sigma_dagger",
    "shift",
    "project_perp",
    "donsker_kernels",
    "wick_exponential",
    "evaluate",
    "s_transform",
    "dual_pairing",
    "pair_with_donsker",
    "norm",
    "scaled_donsker_s",
    "prod_delta_s",
    "to_json",
    "from_json",
]

_ZERO_TOL = 0.0


# ---------------------------------------------------------------------------
# sparse polynomial helpers (dict: exponent tuple -> complex)
# ---------------------------------------------------------------------------

def multi_indices(D, n):
    """All multi-indices ``m`` of length ``D`` with ``|m| = n``, sorted."""
    out = []
    for combo in combinations_with_replacement(range(D), n):
        m = [0] * D
        for j in combo:
            m[j] += 1
        out.append(tuple(m))
    return sorted(out, reverse=True)


def gram_factor(m):
    """``prod_j m_j! / |m|!`` as a float."""
    n = sum(m)
    return math.exp(sum(gammaln(k + 1) for k in m) - gammaln(n + 1))


def _add(acc, key, val):
    if val != 0:
        acc[key] = acc.get(key, 0.0) + val


def _clean(poly):
    return {k: complex(v) for k, v in poly.items() if v != 0}


def _poly_mul(a, b):
    out = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            _add(out, tuple(x + y for x, y in zip(ka, kb)), va * vb)
    return out


def _poly_deriv(a, j):
    out = {}
    for k, v in a.items():
        if k[j] > 0:
            kk = list(k)
            kk[j] -= 1
            _add(out, tuple(kk), v * k[j])
    return out


def _poly_deriv_multi(a, r):
    out = a
    for j, rj in enumerate(r):
        for _ in range(rj):
            out = _poly_deriv(out, j)
            if not out:
                return out
    return out


def _poly_directional(a, eta):
    """``(eta . grad) a``."""
    out = {}
    for j, ej in enumerate(eta):
        if ej != 0:
            for k, v in _poly_deriv(a, j).items():
                _add(out, k, ej * v)
    return out


def _poly_laplacian(a, D):
    out = {}
    for j in range(D):
        for k, v in _poly_deriv(_poly_deriv(a, j), j).items():
            _add(out, k, v)
    return out


def _poly_scale(a, c):
    return {k: v * c for k, v in a.items()} if c != 0 else {}


def _linear_form(row):
    D = len(row)
    out = {}
    for j, c in enumerate(row):
        if c != 0:
            e = [0] * D
            e[j] = 1
            out[tuple(e)] = complex(c)
    return out


def _poly_substitute(a, M):
    """Return ``b(theta) = a(M theta)`` for a ``D x D`` matrix ``M``."""
    M = np.asarray(M, dtype=complex)
    D = M.shape[0]
    forms = [_linear_form(M[j]) for j in range(D)]
    powers = [[{(0,) * D: 1.0}] for _ in range(D)]
    out = {}
    for k, v in a.items():
        term = {(0,) * D: complex(v)}
        for j, kj in enumerate(k):
            while len(powers[j]) <= kj:
                powers[j].append(_poly_mul(powers[j][-1], forms[j]))
            if kj:
                term = _poly_mul(term, powers[j][kj])
        for kk, vv in term.items():
            _add(out, kk, vv)
    return out


def _poly_eval(a, theta):
    theta = np.asarray(theta, dtype=complex)
    total = 0.0 + 0.0j
    for k, v in a.items():
        total += v * np.prod(theta ** np.asarray(k))
    return complex(total)


def _power_of_linear(eta, n):
    """Monomial coefficients of ``(eta . theta)^n``."""
    eta = np.asarray(eta, dtype=complex)
    out = {}
    lg_n = gammaln(n + 1)
    for m in multi_indices(len(eta), n):
        c = np.prod(eta ** np.asarray(m))
        if c != 0:
            out[m] = complex(c) * math.exp(lg_n - sum(gammaln(k + 1) for k in m))
    return out


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

class WeightedBasis:
    """Finite orthonormal basis ``e_1..e_D`` with norm weights ``lambda_j > 1``.

    Parameters
    ----------
    D : int
        Dimension.
    weights : array_like, optional
        Strictly increasing weights, all ``> 1``.  Default ``lambda_j = j + 1``.
    """

    def __init__(self, D, weights=None):
        D = int(D)
        if D < 1:
            raise ValueError("dimension must be positive")
        if weights is None:
            weights = np.arange(2, D + 2, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (D,):
            raise ValueError("need one weight per basis vector")
        if np.any(weights <= 1.0) or np.any(np.diff(weights) <= 0):
            raise ValueError("weights must be > 1 and strictly increasing")
        self.D = D
        self.weights = weights
        self.weights.setflags(write=False)

    def __eq__(self, other):
        return (
            isinstance(other, WeightedBasis)
            and self.D == other.D
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash((self.D, self.weights.tobytes()))

    def __repr__(self):
        return f"WeightedBasis(D={self.D}, weights={self.weights.tolist()})"

    def hs_norm_sq(self, p):
        """``||i_{p,0}||_HS^2 = sum_j lambda_j^(-2p)``."""
        return float(np.sum(self.weights ** (-2.0 * p)))


class ChaosVector:
    """Finite chaos expansion ``(phi^(n))_{n <= n_trunc}``.

    Parameters
    ----------
    basis : WeightedBasis
    kernels : dict
        ``{n: {multi_index: coefficient}}``.  Zero coefficients are dropped.
    n_trunc : int
        Truncation degree; kernels above it are discarded and flagged.
    overflow : bool
        Set when an operation produced nonzero kernels above ``n_trunc``.
    """

    def __init__(self, basis, kernels=None, n_trunc=None, overflow=False):
        self.basis = basis
        kernels = kernels or {}
        if n_trunc is None:
            n_trunc = max(kernels, default=0)
        self.n_trunc = int(n_trunc)
        clean = {}
        dropped = False
        for n, ker in kernels.items():
            n = int(n)
            ker = _clean(ker)
            if not ker:
                continue
            for m in ker:
                if len(m) != basis.D or sum(m) != n or min(m) < 0:
                    raise ValueError(f"multi-index {m} does not fit degree {n}")
            if n > self.n_trunc:
                dropped = True
                continue
            clean[n] = ker
        self._kernels = clean
        self.overflow = bool(overflow or dropped)

    # construction helpers
    @classmethod
    def constant(cls, basis, c, n_trunc=0):
        """The constant functional ``c``."""
        return cls(basis, {0: {(0,) * basis.D: c}}, n_trunc)

    @classmethod
    def linear(cls, basis, v, n_trunc=1):
        """``<omega, v>`` as a degree-1 chaos vector."""
        return cls(basis, {1: _linear_form(np.asarray(v, dtype=complex))}, n_trunc)

    @classmethod
    def from_symbols(cls, basis, symbols, n_trunc=None):
        """Build from a single polynomial split by total degree."""
        ker = {}
        for m, c in symbols.items():
            ker.setdefault(sum(m), {})[m] = c
        return cls(basis, ker, n_trunc)

    def kernel(self, n):
        """Copy of the degree-n coefficient dict (empty if absent)."""
        return dict(self._kernels.get(int(n), {}))

    @property
    def degrees(self):
        return sorted(self._kernels)

    def coefficient(self, m):
        return self._kernels.get(sum(m), {}).get(tuple(m), 0.0)

    def symbol(self):
        """All kernels merged into one polynomial in ``theta``."""
        out = {}
        for ker in self._kernels.values():
            out.update(ker)
        return out

    def __repr__(self):
        return (
            f"ChaosVector(D={self.basis.D}, n_trunc={self.n_trunc}, "
            f"degrees={self.degrees}, overflow={self.overflow})"
        )

    def allclose(self, other, atol=1e-12):
        """Coefficientwise comparison including truncation-independent zeros."""
        keys = set(self.symbol()) | set(other.symbol())
        return all(
            abs(self.coefficient(m) - other.coefficient(m)) <= atol for m in keys
        )

    def max_abs_diff(self, other):
        keys = set(self.symbol()) | set(other.symbol())
        return max(
            (abs(self.coefficient(m) - other.coefficient(m)) for m in keys), default=0.0
        )


def _check_basis(*vectors):
    b = vectors[0].basis
    for v in vectors[1:]:
        if v.basis != b:
            raise ValueError("basis mismatch")
    return b


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------

def wick_product(phi, psi, n_trunc=None):
    """Wick product: ``Xi^(n) = sum_k phi^(k) (x)^ psi^(n-k)``.

    On symbols this is polynomial multiplication, so the S-transform is
    multiplicative.  The result is truncated at ``min`` of the input
    truncations unless ``n_trunc`` is given.
    """
    basis = _check_basis(phi, psi)
    if n_trunc is None:
        n_trunc = min(phi.n_trunc, psi.n_trunc)
    out = {}
    for p in phi.degrees:
        for q in psi.degrees:
            for k, v in _poly_mul(phi.kernel(p), psi.kernel(q)).items():
                _add(out.setdefault(p + q, {}), k, v)
    return ChaosVector(basis, out, n_trunc, phi.overflow or psi.overflow)


def _contraction_symbols(a, b, k, D):
    """``sum_{|r|=k} d^r a d^r b / r!``: the weighted k-fold contraction."""
    out = {}
    for r in multi_indices(D, k):
        da = _poly_deriv_multi(a, r)
        if not da:
            continue
        db = _poly_deriv_multi(b, r)
        if not db:
            continue
        w = math.exp(-sum(gammaln(x + 1) for x in r))
        for kk, v in _poly_mul(da, db).items():
            _add(out, kk, w * v)
    return out


def wiener_product(phi, psi, n_trunc=None):
    """Pointwise product of two chaos vectors.

    Kernels follow the contraction formula

        f^(l) = sum_{m+n=l} sum_k k! C(m+k,k) C(n+k,k) phi^(m+k) (x)_k psi^(n+k).

    Combined with the symbol form of ``(x)_k`` every term collapses to
    ``sum_{|r|=k} d^r a d^r b / r!`` with ``a, b`` the kernel symbols.
    By default the result keeps all degrees up to the sum of the input
    truncations, which is exact for finite inputs.
    """
    basis = _check_basis(phi, psi)
    if n_trunc is None:
        n_trunc = phi.n_trunc + psi.n_trunc
    out = {}
    for p in phi.degrees:
        a = phi.kernel(p)
        for q in psi.degrees:
            b = psi.kernel(q)
            for k in range(min(p, q) + 1):
                for kk, v in _contraction_symbols(a, b, k, basis.D).items():
                    _add(out.setdefault(p + q - 2 * k, {}), kk, v)
    return ChaosVector(basis, out, n_trunc, phi.overflow or psi.overflow)


# ---------------------------------------------------------------------------
# traces and scaling
# ---------------------------------------------------------------------------

def trace_contract(kernel, k, D):
    """Iterated trace ``tr^k`` of a homogeneous kernel given as a symbol dict.

    Parameters
    ----------
    kernel : dict
        Coefficients of a degree ``n + 2k`` kernel.
    k : int
        Number of trace contractions.
    D : int
        Basis dimension.

    Returns
    -------
    dict
        Coefficients of the degree ``n`` kernel.
    """
    k = int(k)
    if not kernel:
        return {}
    deg = {sum(m) for m in kernel}
    if len(deg) != 1:
        raise ValueError("kernel must be homogeneous")
    p = deg.pop()
    if k < 0 or 2 * k > p:
        raise ValueError(f"cannot take {k} traces of a degree-{p} kernel")
    out = dict(kernel)
    for i in range(k):
        q = p - 2 * i
        # one trace: symbol -> Laplacian / (q (q - 1))
        out = _poly_scale(_poly_laplacian(out, D), 1.0 / (q * (q - 1)))
    return out


def trace_norm_sq(basis, p):
    """``|Tr|_{-p}^2`` from the Gram factors of ``Tr = sum_j e_j (x) e_j``."""
    total = 0.0
    for j in range(basis.D):
        m = [0] * basis.D
        m[j] = 2
        total += basis.weights[j] ** (-2.0 * p * 2) * gram_factor(m)
    return total


def scale(phi, z):
    """Scaling ``sigma_z phi(omega) = phi(z omega)`` on kernels.

        phi~^(n) = z^n sum_k (n+2k)! / (k! n!) ((z^2 - 1)/2)^k tr^k phi^(n+2k)
    """
    z = complex(z)
    if z == 1:
        return ChaosVector(phi.basis, {n: phi.kernel(n) for n in phi.degrees},
                           phi.n_trunc, phi.overflow)
    D = phi.basis.D
    c = (z * z - 1.0) / 2.0
    out = {}
    for p in phi.degrees:
        tr = phi.kernel(p)
        for k in range(p // 2 + 1):
            n = p - 2 * k
            if k > 0:
                tr = _poly_scale(_poly_laplacian(tr, D), 1.0 / ((n + 2) * (n + 1)))
            if not tr:
                break
            w = z ** n * math.exp(gammaln(p + 1) - gammaln(k + 1) - gammaln(n + 1)) * c ** k
            for kk, v in tr.items():
                _add(out.setdefault(n, {}), kk, w * v)
    return ChaosVector(phi.basis, out, phi.n_trunc, phi.overflow)


def gamma_z(phi, z):
    """Second quantization ``Gamma_z``: multiply the degree-n kernel by ``z^n``."""
    z = complex(z)
    out = {n: _poly_scale(phi.kernel(n), z ** n) for n in phi.degrees}
    return ChaosVector(phi.basis, out, phi.n_trunc, phi.overflow)


def jz_kernels(basis, z, n_trunc):
    """Kernels of ``J_z`` whose S-transform is ``exp(-(1 - z^2) <theta,theta> / 2)``."""
    z = complex(z)
    c = -0.5 * (1.0 - z * z)
    trace = {}
    for j in range(basis.D):
        m = [0] * basis.D
        m[j] = 2
        trace[tuple(m)] = 1.0
    out = {0: {(0,) * basis.D: 1.0}}
    power = {(0,) * basis.D: 1.0}
    for k in range(1, n_trunc // 2 + 1):
        power = _poly_mul(power, trace)
        out[2 * k] = _poly_scale(power, c ** k / math.factorial(k))
    return ChaosVector(basis, out, n_trunc)


def sigma_dagger(phi, z, n_trunc=None):
    """Adjoint scaling as the Wick product ``J_z <> Gamma_z phi``."""
    if n_trunc is None:
        n_trunc = phi.n_trunc
    return wick_product(jz_kernels(phi.basis, z, n_trunc), gamma_z(phi, z), n_trunc)


# ---------------------------------------------------------------------------
# shift and projection
# ---------------------------------------------------------------------------

def shift(phi, eta):
    """Translation ``tau_eta phi = phi(. + eta)`` on kernels.

        (tau_eta phi)^(l) = sum_k C(k+l, k) (eta^{(x) k}, phi^(k+l)).

    Contracting ``k`` slots with ``eta`` acts on symbols as
    ``l!/(k+l)! (eta . grad)^k``.
    """
    eta = np.asarray(eta, dtype=complex)
    if eta.shape != (phi.basis.D,):
        raise ValueError("eta must have one component per basis vector")
    out = {}
    for p in phi.degrees:
        a = phi.kernel(p)
        for k in range(p + 1):
            if k > 0:
                a = _poly_directional(a, eta)
            if not a:
                break
            w = 1.0 / math.factorial(k)
            for kk, v in a.items():
                _add(out.setdefault(p - k, {}), kk, w * v)
    return ChaosVector(phi.basis, out, phi.n_trunc, phi.overflow)


def _unit(eta, tol=1e-12):
    eta = np.asarray(eta, dtype=complex)
    if abs(np.sum(eta * eta) - 1.0) > tol or np.any(np.abs(eta.imag) > tol):
        raise ValueError("eta must be a real unit vector")
    return eta.real


def project_perp(phi, eta):
    """Compose with ``P_perp omega = omega - <omega, eta> eta``.

        phi~^(n) = sum_k (n+2k)! / (k! n!) (-1/2)^k
                   P_perp^{(x) n} (eta^{(x) 2k}, phi^(n+2k)).
    """
    eta = _unit(eta)
    D = phi.basis.D
    if eta.shape != (D,):
        raise ValueError("eta must have one component per basis vector")
    P = np.eye(D) - np.outer(eta, eta)
    out = {}
    for p in phi.degrees:
        a = phi.kernel(p)
        for k in range(p // 2 + 1):
            if k > 0:
                a = _poly_directional(_poly_directional(a, eta), eta)
            if not a:
                break
            w = (-0.5) ** k / math.factorial(k)
            for kk, v in _poly_substitute(a, P).items():
                _add(out.setdefault(p - 2 * k, {}), kk, w * v)
    return ChaosVector(phi.basis, out, phi.n_trunc, phi.overflow)


# ---------------------------------------------------------------------------
# Donsker delta and exponentials
# ---------------------------------------------------------------------------

def _normalized_hermite(n, z):
    """``H_k(z) / sqrt(2^k k!)`` for ``k = 0..n`` by a scaled recurrence."""
    z = complex(z)
    h = np.empty(n + 1, dtype=complex)
    h[0] = 1.0
    if n >= 1:
        h[1] = math.sqrt(2.0) * z
    for k in range(1, n):
        h[k + 1] = math.sqrt(2.0 / (k + 1)) * z * h[k] - math.sqrt(k / (k + 1)) * h[k - 1]
    return h


def donsker_kernels(basis, eta, a, N):
    """Chaos kernels of ``delta(<omega, eta> - a)`` up to degree ``N``.

        f^(n) = exp(-a^2 / (2 <eta,eta>)) / sqrt(2 pi <eta,eta>)
                * H_n(a / sqrt(2 <eta,eta>)) (2 <eta,eta>)^(-n/2) / n! * eta^{(x) n}

    Square roots use the principal branch.  Up to degree 150 the plain
    Hermite recurrence is used; above it a normalized recurrence avoids
    overflow of ``H_n`` and ``n!``.
    """
    eta = np.asarray(eta, dtype=complex)
    if eta.shape != (basis.D,):
        raise ValueError("eta must have one component per basis vector")
    s = complex(np.sum(eta * eta))
    if s == 0 or (s.imag == 0 and s.real < 0):
        raise ValueError("<eta, eta> lies on the branch cut")
    a = complex(a)
    N = int(N)
    root2s = np.sqrt(2.0 * s)
    pref = np.exp(-a * a / (2.0 * s)) / np.sqrt(2.0 * np.pi * s)
    arg = a / root2s
    if N <= 150:
        H = hermite_table(N, arg)
        scal = [pref * H[n] * root2s ** (-n) / math.factorial(n) for n in range(N + 1)]
    else:
        h = _normalized_hermite(N, arg)
        sroot = np.sqrt(s)
        scal = [
            pref * h[n] * sroot ** (-n) * math.exp(-0.5 * gammaln(n + 1))
            for n in range(N + 1)
        ]
    # (eta . theta)^n coefficients carry n!/m!; fold n! into the scalar in log space
    out = {}
    for n in range(N + 1):
        if scal[n] == 0:
            continue
        ker = {}
        for m in multi_indices(basis.D, n):
            c = np.prod(eta ** np.asarray(m))
            if c != 0:
                ker[m] = scal[n] * complex(c) * math.exp(
                    gammaln(n + 1) - sum(gammaln(k + 1) for k in m)
                )
        out[n] = ker
    return ChaosVector(basis, out, N)


def wick_exponential(basis, xi, N):
    """Kernels ``xi^{(x) n} / n!`` of ``:exp <omega, xi>:`` up to degree ``N``."""
    xi = np.asarray(xi, dtype=complex)
    out = {n: _poly_scale(_power_of_linear(xi, n), 1.0 / math.factorial(n))
           for n in range(N + 1)}
    return ChaosVector(basis, out, N)


# ---------------------------------------------------------------------------
# evaluation, transforms, pairings, norms
# ---------------------------------------------------------------------------

def evaluate(phi, x):
    """Value ``sum_n <:x^{(x) n}:, phi^(n)>`` at a point of ``R^D`` or ``C^D``.

    Wick powers factor coordinatewise into probabilists' Hermite
    polynomials ``He_m(x_j) = 2^(-m/2) H_m(x_j / sqrt 2)``.
    """
    x = np.asarray(x, dtype=complex)
    if x.shape != (phi.basis.D,):
        raise ValueError("point must have one component per basis vector")
    nmax = max(phi.degrees, default=0)
    He = hermite_table(nmax, x / math.sqrt(2.0))
    He *= (2.0 ** (-0.5 * np.arange(nmax + 1)))[:, None]
    total = 0.0 + 0.0j
    cols = np.arange(phi.basis.D)
    for n in phi.degrees:
        for m, c in phi.kernel(n).items():
            total += c * np.prod(He[np.asarray(m), cols])
    return complex(total)


def s_transform(phi, theta):
    """Truncated ``S phi(theta) = sum_n <phi^(n), theta^{(x) n}>``."""
    theta = np.asarray(theta, dtype=complex)
    if theta.shape != (phi.basis.D,):
        raise ValueError("theta must have one component per basis vector")
    return _poly_eval(phi.symbol(), theta)


def dual_pairing(Phi, phi):
    """Bilinear pairing ``sum_n n! <Phi^(n), phi^(n)>`` with Gram weights."""
    _check_basis(Phi, phi)
    total = 0.0 + 0.0j
    for n in set(Phi.degrees) & set(phi.degrees):
        A = Phi.kernel(n)
        for m, b in phi.kernel(n).items():
            if m in A:
                total += A[m] * b * gram_factor(m) * math.factorial(n)
    return complex(total)


def pair_with_donsker(phi, eta, a):
    """``<<delta(<., eta> - a), phi>> = (2 pi)^(-1/2) e^(-a^2/2) E(P tau_{a eta} phi)``.

    ``eta`` must be a real unit vector.  The expectation is the degree-0
    kernel after shifting by ``a eta`` and projecting out ``eta``.
    """
    eta = _unit(eta)
    a = complex(a)
    projected = project_perp(shift(phi, a * eta), eta)
    e0 = projected.coefficient((0,) * phi.basis.D)
    return complex((2.0 * math.pi) ** -0.5 * np.exp(-a * a / 2.0) * e0)


def norm(phi, p, q, beta=0.0):
    """Squared norm ``sum_n (n!)^(1+beta) 2^(nq) |phi^(n)|_p^2``.

    ``|e_m|_p^2 = prod_j lambda_j^(2 p m_j) * prod_j m_j! / n!``.
    The value returned is the square of the Hilbertian norm.
    """
    if not -1.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [-1, 1]")
    lam = phi.basis.weights
    total = 0.0
    for n in phi.degrees:
        s = 0.0
        for m, c in phi.kernel(n).items():
            s += abs(c) ** 2 * gram_factor(m) * float(np.prod(lam ** (2.0 * p * np.asarray(m))))
        total += math.exp((1.0 + beta) * gammaln(n + 1)) * 2.0 ** (n * q) * s
    return total


# ---------------------------------------------------------------------------
# closed-form S-transforms of scaled deltas
# ---------------------------------------------------------------------------

def scaled_donsker_s(eta_dot_theta, eta_sq, a, z):
    """``S sigma_z delta(<., eta> - a)(theta)`` as a closed form.

        (sqrt(2 pi) z |eta|)^(-1) exp(-(a - z <theta, eta>)^2 / (2 z^2 |eta|^2))
    """
    z = complex(z)
    u = complex(eta_dot_theta)
    a = complex(a)
    nrm = np.sqrt(complex(eta_sq))
    return complex(
        np.exp(-((a - z * u) ** 2) / (2.0 * z * z * eta_sq)) / (math.sqrt(2 * math.pi) * z * nrm)
    )


def prod_delta_s(etas, a, z, theta):
    """S-transform of ``prod_j sigma_z delta(<., eta_j> - a_j)``.

    Parameters
    ----------
    etas : array_like, shape (n, D)
        Linearly independent vectors.
    a : array_like, shape (n,)
    z : complex
    theta : array_like, shape (D,)

    Returns
    -------
    complex
        ``((2 pi z^2)^n det M)^(-1/2) exp(-v^T M^-1 v / 2)`` with
        ``v = <eta, theta> - a / z`` and ``M`` the Gram matrix.
    """
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=complex))
    z = complex(z)
    theta = np.asarray(theta, dtype=complex)
    n = etas.shape[0]
    M = etas @ etas.T
    v = etas @ theta - a / z
    det = np.linalg.det(M)
    if det <= 0:
        raise ValueError("eta vectors must be linearly independent")
    quad = v @ np.linalg.solve(M, v)
    # (2 pi z^2)^(n/2) = ((2 pi)^(1/2) z)^n on the principal branch for Re z > 0
    pref = (math.sqrt(2 * math.pi) * z) ** (-n) / math.sqrt(det)
    return complex(pref * np.exp(-0.5 * quad))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def to_json(phi):
    """Serialize to ``{basis:{D,weights}, kernels:[{degree, entries:[...]}]}``."""
    doc = {
        "basis": {"D": phi.basis.D, "weights": phi.basis.weights.tolist()},
        "n_trunc": phi.n_trunc,
        "kernels": [
            {
                "degree": n,
                "entries": [
                    {"multi_index": list(m), "re": c.real, "im": c.imag}
                    for m, c in sorted(phi.kernel(n).items(), reverse=True)
                ],
            }
            for n in phi.degrees
        ],
    }
    return doc


def from_json(doc):
    """Inverse of :func:`to_json`; accepts a dict or a JSON string."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    basis = WeightedBasis(doc["basis"]["D"], doc["basis"].get("weights"))
    kernels = {}
    for block in doc["kernels"]:
        n = int(block["degree"])
        ker = {}
        for e in block["entries"]:
            ker[tuple(int(v) for v in e["multi_index"])] = complex(e["re"], e.get("im", 0.0))
        kernels[n] = ker
    n_trunc = doc.get("n_trunc", max(kernels, default=0))
    return ChaosVector(basis, kernels, n_trunc)
