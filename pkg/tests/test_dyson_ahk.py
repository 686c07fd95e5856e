import math

import numpy as np
import pytest
from scipy.integrate import quad

from wnpath.closedform import PropagatorQuery, t_free
from wnpath.dyson import (
    FourierMeasure,
    ahk_bound,
    ahk_box_order,
    ahk_order,
    ahk_t_transform,
    ccr_check,
    ehrenfest_check,
    keyfh_check,
    pinned_factorization_check,
    transition_x,
    transition_x_regularized,
    transition_xddot,
    transition_xdot,
)
from wnpath.errors import DomainError

Q = PropagatorQuery(0.3, -0.5, 0.0, 1.0)
COS = FourierMeasure.cosine(0.2)


def first_order_oracle(q, m):
    """Order one from the Gaussian ``y`` integral, leaving one ``tau`` quadrature."""
    x0, x = float(q.x0[0].real), float(q.x[0].real)
    T = q.duration

    def integrand(tau):
        ybar = x0 + tau / T * (x - x0)
        return sum(w * np.exp(1j * a[0] * ybar - 1j * a[0] ** 2 * tau * (T - tau) / (2 * T))
                   for a, w in zip(m.alphas, m.weights))

    re = quad(lambda s: integrand(s).real, 0, T, epsabs=1e-14)[0]
    im = quad(lambda s: integrand(s).imag, 0, T, epsabs=1e-14)[0]
    return -1j * t_free(q) * (re + 1j * im)


def test_empty_measure_is_free():
    rep = ahk_t_transform(Q, FourierMeasure.empty())
    assert rep.total == t_free(Q)
    assert all(v == 0 for v in rep.values[1:])


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        ahk_t_transform(Q, FourierMeasure.cosine(0.1, d=2))


@pytest.mark.parametrize("m", [COS, FourierMeasure([[0.5], [-1.5], [2.0]], [0.1, 0.05j, -0.1])])
def test_first_order_gaussian_oracle(m):
    val, err = ahk_order(Q, m, 1, budget=1e-12)
    assert abs(val - first_order_oracle(Q, m)) < 1e-11


@pytest.mark.parametrize("n", [2, 3])
def test_box_route_agrees(n):
    a, _ = ahk_order(Q, COS, n, budget=1e-12)
    b = ahk_box_order(Q, COS, n, n_gl=16, panels=4)
    assert abs(a - b) < 1e-7


def test_orders_within_bounds():
    rep = ahk_t_transform(Q, COS, tol=1e-8)
    for v, b in zip(rep.values, rep.bounds):
        assert abs(v) <= b * (1 + 1e-12)
    assert rep.tail_bound < 1e-8
    assert abs(ahk_bound(2, COS, 1.0, 1) - 0.04 / 2 * (2 * np.pi) ** -0.5) < 1e-15


def test_kicked_series_terminates():
    s = 0.4
    m = FourierMeasure([[1.0], [-1.0]], [0.1, 0.1], kick_times=[s])
    rep = ahk_t_transform(Q, m)
    assert rep.tail_bound == 0.0
    assert all(v == 0 for v in rep.values[2:])
    # one kick: Gaussian y integral at the kick time
    ybar = 0.3 + s * (-0.8)
    ref = -1j * t_free(Q) * 0.2 * np.cos(ybar) * np.exp(-1j * s * (1 - s) / 2)
    assert abs(rep.values[1] - ref) < 1e-14


def test_transition_free_line():
    m = FourierMeasure.empty()
    k0 = t_free(Q)
    for s in (0.2, 0.5, 0.9):
        assert abs(transition_x(Q, m, s) - k0 * (0.3 - 0.8 * s)) < 1e-14
        assert abs(transition_xdot(Q, m, s) - k0 * (-0.8)) < 1e-14
    assert transition_xddot(Q, m, 0.5) == 0


def test_transition_near_start():
    e_i = ahk_t_transform(Q, COS, tol=1e-10).total
    assert abs(transition_x(Q, COS, 1e-6) - 0.3 * e_i) < 1e-6


def test_transition_domain():
    with pytest.raises(DomainError):
        transition_x(Q, COS, 1.0)
    kicked = FourierMeasure([[1.0]], [0.1], kick_times=[0.5])
    with pytest.raises(DomainError):
        transition_xdot(Q, kicked, 0.5)


def test_regularized_route_matches():
    s = 0.4
    reg = transition_x_regularized(Q, COS, s, 1e-3)
    assert abs(reg - transition_x(Q, COS, s)) < 1e-4


def test_velocity_is_derivative_of_position():
    s, h = 0.4, 3e-3
    cd = (transition_x(Q, COS, s + h) - transition_x(Q, COS, s - h)) / (2 * h)
    assert abs(cd - transition_xdot(Q, COS, s)) < 1e-5


def test_ccr_free():
    _, ex = ccr_check(Q, FourierMeasure.empty(), 0.4)
    assert abs(ex + 1j * t_free(Q)) < 1e-8


def test_ccr_interacting():
    q = PropagatorQuery(0.3, -0.5, 0.0, 1.0)
    m = FourierMeasure.cosine(0.1)
    vals, ex = ccr_check(q, m, 0.4)
    e_i = ahk_t_transform(q, m, tol=1e-9).total
    assert abs(ex + 1j * e_i) < 1e-4
    # the finite-eps values approach the limit
    errs = [abs(v + 1j * e_i) for v in vals]
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.slow
def test_ccr_off_diagonal_vanishes():
    q = PropagatorQuery([0.3, 0.1], [-0.5, 0.2], 0.0, 1.0)
    m = FourierMeasure.cosine(0.1, d=2, axis=0)
    _, ex = ccr_check(q, m, 0.4, k=0, l=1, n_max=4, tol=1e-8)
    assert abs(ex) < 1e-5


def test_ehrenfest_weak_coupling():
    resid, e_i = ehrenfest_check(Q, FourierMeasure.cosine(0.05), 0.5)
    assert abs(resid) < 1e-8 * abs(e_i)
    resid, _ = ehrenfest_check(Q, FourierMeasure.empty(), 0.5)
    assert resid == 0


def test_acceleration_linear_at_weak_coupling():
    a1 = transition_xddot(Q, FourierMeasure.cosine(0.01), 0.5)
    a2 = transition_xddot(Q, FourierMeasure.cosine(0.02), 0.5)
    assert abs(a2 / a1 - 2) < 0.05


@pytest.mark.parametrize("y", [0.2, -0.6])
def test_pinned_factorization(y):
    resid, left, right = pinned_factorization_check(Q, FourierMeasure.cosine(0.1), 0.4, y)
    assert abs(resid) < 1e-9


def test_keyfh_routes():
    series, quad_route = keyfh_check(Q, FourierMeasure.cosine(0.1), 0.4, center=0.1, width=0.8)
    assert abs(series - quad_route) < 1e-9


def test_theta_zero_is_propagator():
    from wnpath.closedform import GridFunction

    zero = GridFunction.from_callable(lambda s: 0 * s, lambda s: 0 * s, 0.0, 1.0)
    a = ahk_t_transform(Q, COS, theta=zero, tol=1e-9).total
    b = ahk_t_transform(Q, COS, tol=1e-9).total
    assert abs(a - b) < 1e-12


def test_constant_theta_shifts_endpoint():
    # a constant theta on the free line acts like a shift of the endpoint
    from wnpath.closedform import GridFunction

    c = 0.3
    th = GridFunction.from_callable(lambda s: c + 0 * s, lambda s: 0 * s, 0.0, 1.0)
    val = ahk_t_transform(Q, FourierMeasure.empty(), theta=th).total
    T = 1.0
    ref = (2j * np.pi * T) ** -0.5 * np.exp(-0.5j * c * c * T - (c * T - 0.8) ** 2 / (2j * T))
    assert abs(val - ref) < 1e-14
