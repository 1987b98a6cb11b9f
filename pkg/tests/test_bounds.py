import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaystab.bounds import (alpha0_star, alpha1, alpha2, compute_bounds, lambda_max_p2, lambda_min_p1,
                              r_hat, r_star, solve_b1)
from delaystab.model import bound_constants, validate_system
from conftest import scalar, two_state


mpmath.mp.dps = 50


def g_literal(b, x):
    b, x = mpmath.mpf(b), mpmath.mpf(x)
    return mpmath.sin(b) ** 4 * (x * x + b * b) - x * x


@pytest.mark.parametrize("x", [1e-3, 1e-1, 1.0, 10.0, 1e3])
def test_b1_root_and_bracket(x):
    b1 = solve_b1(x, 1.0)
    assert 0 < b1 < math.pi / 2
    assert abs(g_literal(b1, x)) <= 1e-10
    assert g_literal(b1 - 1e-6, x) < 0 < g_literal(b1 + 1e-6, x)


def test_b1_examples():
    b1 = solve_b1(1.0, 1.0)
    assert g_literal(0.99, 1) < 0 < g_literal(1.0, 1)
    assert 0.99 < b1 < 1.0
    assert round(b1, 3) == 0.999
    assert solve_b1(1e-3, 1.0) == pytest.approx(0.100, abs=1e-3)
    assert solve_b1(1e-3, 1.0) == pytest.approx(1e-3 ** (1 / 3), rel=1e-2)
    assert math.pi / 2 - solve_b1(1e8, 1.0) < 1e-3
    with pytest.raises(ValueError):
        solve_b1(0.0, 1.0)


def test_b1_depends_on_product_only():
    assert solve_b1(2.0, 0.5) == solve_b1(0.5, 2.0) == solve_b1(1.0, 1.0)


def test_alpha1_value_and_scaling():
    b1 = solve_b1(1.0, 1.0)
    a = alpha1(np.eye(2), 1.0, 1.0, b1)
    assert a == pytest.approx(math.exp(-2) * math.cos(b1) ** 2 / 4, rel=1e-14)
    # the quoted 0.00988 is rounded from cos(0.999) ~ 0.5414; the exact product is 0.009900
    assert a == pytest.approx(mpmath.exp(-2) * mpmath.cos(mpmath.findroot(
        lambda b: mpmath.sin(b) ** 4 * (1 + b * b) - 1, 1.0)) ** 2 / 4, rel=1e-12)
    assert a == pytest.approx(0.00988, abs=3e-5)
    assert alpha1(3.0 * np.eye(2), 1.0, 1.0, b1) == pytest.approx(3 * a, rel=1e-14)
    with pytest.raises(ValueError):
        alpha1(np.eye(2), 0.0, 1.0, b1)


def test_alpha2_cases():
    s = scalar(a0=0.0, a1=1.0, h=1.0)
    bs = bound_constants(s)
    assert alpha2(0.0, s, bs) == pytest.approx(1.0)
    assert alpha2(0.7, s, bs) == pytest.approx(4 * 0.7 + 1, rel=1e-14)
    s = two_state(0.3, 0.1)
    bs = bound_constants(s)
    a1, a2 = alpha2(0.4, s, bs), alpha2(0.8, s, bs)
    assert a2 - a1 == pytest.approx(a1 - s.H, rel=1e-12)


def test_alpha0_star_without_kernel():
    s = scalar(a0=-1.0, a1=0.3, g=0.0)
    assert lambda_max_p2(s) == 0.0
    a01 = -1.0 / ((s.m + 1) * lambda_min_p1(s))
    assert alpha0_star(s) == pytest.approx(max(a01, 0.0))


def test_alpha0_star_kernel_scaling():
    s = two_state(0.3, 0.1)
    c = 1.7
    assert lambda_max_p2(s.scaled(c)) == pytest.approx(c * c * lambda_max_p2(s), rel=1e-12)


def test_alpha0_star_reference_row_positive():
    assert alpha0_star(two_state(0.1, -0.1)) > 0


def test_negative_alpha0_falls_back_to_zero():
    # A0 + A0^T - H I > 0 with A1 = 0 gives lambda_min(P1) = 0: no admissible positive value
    s = validate_system({"A": [2 * np.eye(2), np.zeros((2, 2))], "G": [np.zeros((2, 2))], "h": 1.0})
    assert abs(lambda_min_p1(s)) < 1e-12
    notes = []
    with pytest.warns(RuntimeWarning):
        assert alpha0_star(s, notes) == 0.0
    assert notes


def test_orders_reference_row():
    bs = compute_bounds(two_state(0.1, -0.1), nu=0.9)
    assert 2 <= bs.r_star <= bs.r_hat
    assert bs.alpha0 == pytest.approx(0.5 * bs.alpha0_star)
    bs0 = compute_bounds(two_state(0.1, -0.1), nu=0.9, alpha0_fraction=0.0)
    assert bs0.r_star == bs0.r_hat
    with pytest.raises(ValueError):
        compute_bounds(two_state(0.1, -0.1), nu=0.9, alpha0_fraction=1.0)


def test_order_floor():
    bs = compute_bounds(two_state(0.1, -0.1), nu=0.9)
    bs.alpha2 = 0.0
    assert r_hat(bs, 0.1) == 2
    bs.alpha1 = 0.0
    with pytest.raises(ValueError):
        r_hat(bs, 0.1)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(-2.0, 2.0), st.floats(0.01, 5.0), st.floats(0.0, 0.99))
def test_r_star_never_exceeds_r_hat(h, p, nu, frac):
    s = two_state(h, p)
    try:
        bs = compute_bounds(s, nu=nu, alpha0_fraction=frac)
    except ValueError:
        return  # order not representable
    assert bs.r_star <= bs.r_hat
    again = compute_bounds(s, nu=nu, alpha0_fraction=frac)
    assert again.as_dict() == bs.as_dict()
