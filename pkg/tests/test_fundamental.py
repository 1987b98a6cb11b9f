import math

import numpy as np
import pytest

from delaystab.fundamental import FundamentalBoundError, assemble_P, compute_fundamental, eval_K
from delaystab.model import bound_constants
from conftest import scalar, two_state, vehicle_chain


def test_exponential_decay():
    g = compute_fundamental(scalar(), N=100)
    assert np.max(np.abs(g.samples[:, 0, 0] - np.exp(-g.times))) < 1e-8


def test_identity_at_zero():
    for s in (scalar(), two_state(0.3, 0.1), vehicle_chain(1.0, 2.0)):
        g = compute_fundamental(s, N=50)
        np.testing.assert_array_equal(g.samples[0], np.eye(s.n))
        np.testing.assert_array_equal(eval_K(g, 0.0), np.eye(s.n))


def test_pure_kernel_gives_cosine():
    g = compute_fundamental(scalar(a0=0.0, g=-1.0), N=200)
    assert eval_K(g, 1.0)[0, 0] == pytest.approx(math.cos(1.0), abs=1e-10)
    assert np.max(np.abs(g.samples[:, 0, 0] - np.cos(g.times))) < 1e-10


def test_eval_rules():
    g = compute_fundamental(two_state(0.3, 0.1), N=40)
    np.testing.assert_array_equal(eval_K(g, -0.3), np.zeros((2, 2)))
    k = 17
    assert np.array_equal(eval_K(g, k * g.delta), g.samples[k])
    mid = eval_K(g, (k + 0.5) * g.delta)
    np.testing.assert_allclose(mid, 0.5 * (g.samples[k] + g.samples[k + 1]), rtol=1e-12)
    with pytest.raises(ValueError):
        eval_K(g, g.H * 1.01)
    stack = eval_K(g, np.array([-1.0, 0.0, g.H]))
    assert stack.shape == (3, 2, 2)


def test_assemble_P():
    g = compute_fundamental(scalar(), N=100)
    P3 = assemble_P(g, 3)
    np.testing.assert_allclose(P3, [[1.0, math.exp(-0.5), math.exp(-1.0)]], atol=1e-9)
    s = two_state(0.2, 2.0)
    g = compute_fundamental(s, N=40)
    P2 = assemble_P(g, 2)
    np.testing.assert_array_equal(P2[:, :2], np.eye(2))
    np.testing.assert_array_equal(P2[:, 2:], g.samples[-1])
    with pytest.raises(ValueError):
        assemble_P(g, 1)


def test_fourth_order_convergence():
    # A0 = 0 with nilpotent G makes K polynomial on [0, H]; use a generic system
    s = scalar(a0=-1.0, a1=0.5, g=0.8, h=1.0)
    ref = compute_fundamental(s, N=640).samples[-1]
    errs = [np.abs(compute_fundamental(s, N=N).samples[-1] - ref).max() for N in (10, 20, 40)]
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(rates) > 3.5


def test_pre_and_post_forms_agree():
    s = vehicle_chain(0.8, 2.2)
    a = compute_fundamental(s, N=100, form="pre").samples
    b = compute_fundamental(s, N=100, form="post").samples
    assert np.abs(a - b).max() < 1e-9


def test_growth_bound_and_derivative_bound():
    for s in (two_state(0.5, 0.5), vehicle_chain(3.0, 0.1), scalar(a0=0.3, a1=-2.0, g=1.0)):
        g = compute_fundamental(s, N=100)
        bs = bound_constants(s)
        norms = np.linalg.norm(g.samples, 2, axis=(1, 2))
        assert np.all(norms <= np.exp(bs.M1 * g.times) * (1 + 1e-12))
        assert g.deriv_sup <= bs.L


def test_bad_arguments():
    with pytest.raises(ValueError):
        compute_fundamental(scalar(), N=2)
    with pytest.raises(ValueError):
        compute_fundamental(scalar(), form="sideways")


def test_bound_violation_is_hard_failure():
    with pytest.raises(FundamentalBoundError):
        compute_fundamental(scalar(a0=1.0), N=10, bound_tol=-0.5)
