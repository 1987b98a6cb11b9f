import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import hilbert

import delaystab.criterion as crit
from delaystab.criterion import (Numerics, OrderTooLargeError, Verdict, analyze, assemble_Kr, assemble_Pr,
                                 assemble_test_matrix, check_order, find_instability_witness,
                                 is_positive_definite, stability_test_thm8, stability_test_thm9)
from delaystab.fundamental import compute_fundamental, eval_K
from delaystab.lyapunov import build_lyapunov_matrix, eval_U
from conftest import scalar, two_state


@pytest.fixture(scope="module")
def stable_rep():
    return build_lyapunov_matrix(two_state(0.25, -0.8))


@pytest.fixture(scope="module")
def unstable_rep():
    return build_lyapunov_matrix(two_state(0.2, 2.0))


def test_pd_small_cases():
    r = is_positive_definite(np.eye(3))
    assert r.pd and r.margin == pytest.approx(1.0)
    r = is_positive_definite(np.diag([1.0, -1.0]))
    assert not r.pd and r.margin == pytest.approx(-1.0)
    r = is_positive_definite(hilbert(4))
    assert r.pd and r.margin == pytest.approx(9.67e-5, rel=1e-3)
    assert r.margin == pytest.approx(np.linalg.eigvalsh(hilbert(4))[0], rel=1e-10)


def test_pd_rejects_nonsymmetric():
    with pytest.raises(ValueError, match="not symmetric"):
        is_positive_definite(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_pd_marginal():
    r = is_positive_definite(np.diag([1.0, 1e-13]))
    assert r.marginal and not r.pd


def test_pivot_path(monkeypatch):
    monkeypatch.setattr(crit, "DENSE_EIG_LIMIT", 0)
    r = is_positive_definite(np.diag([4.0, 2.0, -3.0, 1.0]))
    assert not r.pd and r.margin_kind == "pivot" and r.margin == pytest.approx(-3.0)
    r = is_positive_definite(np.diag([4.0, 0.25]))
    assert r.pd and r.margin == pytest.approx(0.25)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2 ** 31 - 1))
def test_pd_agrees_with_eigenvalues(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    M = X @ X.T + rng.uniform(-3, 3) * np.eye(n)
    lam = np.linalg.eigvalsh(M)[0]
    res = is_positive_definite(M)
    if abs(lam) > 1e-8 * np.abs(M).max():
        assert res.pd == (lam > 0)
        assert res.margin == pytest.approx(lam, rel=1e-8, abs=1e-10)


def test_Kr_structure(stable_rep):
    rep = stable_rep
    np.testing.assert_array_equal(assemble_Kr(rep, 1), 0.5 * (eval_U(rep, 0.0) + eval_U(rep, 0.0).T))
    K2 = assemble_Kr(rep, 2)
    UH = eval_U(rep, rep.H)
    np.testing.assert_array_equal(K2[:2, 2:], UH)
    np.testing.assert_array_equal(K2[2:, :2], UH.T)
    K7 = assemble_Kr(rep, 7)
    assert np.array_equal(K7, K7.T)
    for i in range(6):
        for j in range(i, 7):
            np.testing.assert_array_equal(K7[2 * i:2 * i + 2, 2 * j:2 * j + 2], K7[0:2, 2 * (j - i):2 * (j - i) + 2])
    with pytest.raises(ValueError):
        assemble_Kr(rep, 0)


def test_nested_grid_is_principal_submatrix(stable_rep):
    K4, K10 = assemble_Kr(stable_rep, 4), assemble_Kr(stable_rep, 10)
    idx = np.concatenate([np.arange(2 * i, 2 * i + 2) for i in range(0, 10, 3)])
    np.testing.assert_allclose(K10[np.ix_(idx, idx)], K4, atol=1e-14)


def test_test_matrix(stable_rep):
    s = two_state(0.25, -0.8)
    g = compute_fundamental(s, N=200)
    P3 = assemble_Pr(g, 3)
    np.testing.assert_array_equal(P3[:, 4:], eval_K(g, s.H))
    X = assemble_test_matrix(stable_rep, 3, 0.2, g)
    np.testing.assert_allclose(X, assemble_Kr(stable_rep, 3) - 0.2 * P3.T @ P3, atol=1e-14)
    with pytest.raises(ValueError):
        assemble_test_matrix(stable_rep, 3, 0.2)


def test_subgrid_certifies_failure(unstable_rep, monkeypatch):
    monkeypatch.setattr(crit, "SUBGRID_LIMIT", 40)
    ot = check_order(unstable_rep, 101)
    assert not ot.result.pd and ot.tested_r < 101 and 100 % (ot.tested_r - 1) == 0


def test_order_too_large(stable_rep):
    with pytest.raises(OrderTooLargeError):
        check_order(stable_rep, 60, max_dense=100)


def test_witness(stable_rep, unstable_rep):
    assert find_instability_witness(stable_rep, 26) is None
    w = find_instability_witness(unstable_rep, 507)
    assert w is not None and 2 <= w <= 507
    assert not check_order(unstable_rep, w, subgrid=False).result.pd
    assert not check_order(unstable_rep, 2 * (w - 1) + 1, subgrid=False).result.pd


def test_witness_at_first_candidate():
    rep = build_lyapunov_matrix(two_state(0.5, 0.5))
    assert not is_positive_definite(assemble_Kr(rep, 2)).pd
    assert find_instability_witness(rep, 50) == 2


def test_scalar_delayed_decay_is_stable():
    rep = stability_test_thm8(scalar(a0=0.0, a1=-1.0, h=0.1))
    assert rep.verdict_thm8 == Verdict.STABLE and rep.pd_margin > 0 and rep.consistent


def test_reference_rows_verdicts():
    st8 = stability_test_thm8(two_state(0.25, -0.8))
    assert st8.verdict_thm8 == Verdict.STABLE and st8.verdict_thm9 is None
    st9 = stability_test_thm9(two_state(0.2, 2.0))
    assert st9.verdict_thm9 == Verdict.UNSTABLE and st9.verdict_thm8 is None
    assert st9.consistent


def test_zero_alpha0_makes_both_tests_equal():
    rep = analyze(two_state(0.25, -0.8), Numerics(alpha0_fraction=0.0))
    assert rep.r_hat == rep.r_star
    assert rep.verdict_thm8 == rep.verdict_thm9
    assert rep.pd_margin == rep.pd_margin_thm9


def test_lyapunov_condition_failure_verdict():
    rep = analyze(scalar(a0=0.0, a1=-math.pi / 2))
    assert rep.verdict_thm8 == rep.verdict_thm9 == Verdict.LYAPUNOV_CONDITION_FAILS
    assert rep.consistent


def test_report_serialises():
    d = analyze(two_state(0.1, -0.1)).to_dict()
    assert d["verdict_thm8"] == "Stable" and isinstance(d["bounds"]["nu"], float)
