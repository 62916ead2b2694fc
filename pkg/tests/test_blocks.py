import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latticeops import acceptance
from latticeops.blocks import (
    SOFTCALL_MAX_WINDOW, InductionHooks, PermutationMap, backward_induct,
    backward_induct_state_dependent, joint_step_matrix, snowball_permutation,
    softcall_permutation, window_popcount,
)
from latticeops.errors import DimensionMismatch, InvalidArgument, SizeCapExceeded

from conftest import random_stochastic


@pytest.fixture(scope="module")
def props3():
    return acceptance.block_toy(3)


def _random_perm(rng, n, K):
    return PermutationMap(rng.integers(0, n, (n, K)), rng.integers(0, K, (n, K)))


# ---------------------------------------------------------------- permutations

def test_snowball_identity_when_coupon_carries_over():
    p = snowball_permutation(1.0, 0.5, lambda y: np.zeros_like(y), 6, np.arange(3.0))
    assert np.array_equal(p.K, np.tile(np.arange(6), (3, 1)))
    assert np.array_equal(p.Y, np.repeat(np.arange(3)[:, None], 6, axis=1))
    assert p.clamped == 0


def test_snowball_memoryless_coupon():
    p = snowball_permutation(0.0, 0.25, lambda y: np.full_like(y, 0.8), 8, np.arange(4.0))
    assert np.all(p.K == 3)


def test_snowball_arithmetic_example():
    p = snowball_permutation(0.5, 1.0, lambda y: np.full_like(y, 0.6), 6, np.arange(2.0))
    assert p.K[0, 3] == 2


def test_snowball_clamps_and_counts():
    p = snowball_permutation(1.0, 1.0, lambda y: np.full_like(y, 2.0), 4, np.arange(2.0))
    assert p.K.max() == 3
    assert p.clamped == 2 * 2  # k = 2, 3 overflow on both rows


@pytest.mark.parametrize("dC,K", [(0.0, 4), (-1.0, 4), (1.0, 1)])
def test_snowball_rejects_bad_grid(dC, K):
    with pytest.raises(InvalidArgument):
        snowball_permutation(0.5, dC, lambda y: y, K, np.arange(2.0))


def test_softcall_all_zero_indicator_flushes_window():
    N = 4
    p = softcall_permutation(lambda y: np.zeros_like(y), N, np.arange(3.0))
    k = np.arange(2**N)
    for _ in range(N):
        k = p.K[0, k]
    assert np.all(k == 0)


def test_softcall_shift_append_example():
    p = softcall_permutation(lambda y: np.ones_like(y), 2, np.arange(1.0))
    assert p.K[0, 0b10] == 0b01


def test_softcall_window_cap():
    with pytest.raises(SizeCapExceeded):
        softcall_permutation(lambda y: np.zeros_like(y), SOFTCALL_MAX_WINDOW + 1, np.arange(2.0))


def test_softcall_rejects_non_indicator():
    with pytest.raises(InvalidArgument):
        softcall_permutation(lambda y: np.full_like(y, 2.0), 2, np.arange(2.0))


def test_window_popcount():
    assert window_popcount(8).tolist() == [0, 1, 1, 2, 1, 2, 2, 3]


def test_permutation_out_of_range():
    with pytest.raises(InvalidArgument):
        PermutationMap(np.array([[0, 2]]), np.array([[0, 1]]))
    with pytest.raises(DimensionMismatch):
        PermutationMap(np.zeros((2, 2), int), np.zeros((2, 3), int))


def test_permutation_matrix_matches_apply(rng):
    p = _random_perm(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    assert np.allclose(p.matrix() @ w.ravel(), p.apply(w).ravel(), atol=0, rtol=0)


# ---------------------------------------------------------------- backward induction

def test_identity_permutations_reduce_to_plain_induction(rng):
    Us = [random_stochastic(rng, 5) for _ in range(4)]
    vT = rng.normal(size=(5, 1))
    v0 = backward_induct(Us, [PermutationMap.identity(5, 1)] * 4, vT)
    assert np.allclose(v0, Us[0] @ Us[1] @ Us[2] @ Us[3] @ vT, atol=1e-14)


def test_unit_propagators_relabel(rng):
    n, K = 3, 5
    perms = [_random_perm(rng, n, K) for _ in range(3)]
    vT = rng.normal(size=(n, K))
    v0 = backward_induct([np.eye(n)] * 3, perms, vT)
    for y, k in itertools.product(range(n), range(K)):
        yy, kk = y, k
        for p in perms:
            yy, kk = p.Y[yy, kk], p.K[yy, kk]
        assert v0[y, k] == vT[yy, kk]


def test_snowball_vs_path_enumeration(props3):
    v, perms = acceptance.snowball_value(props3)
    assert np.abs(v - acceptance.snowball_enumeration(props3)).max() <= 1e-10
    assert sum(p.clamped for p in perms) == 0


def test_softcall_vs_path_enumeration():
    props = acceptance.block_toy(acceptance.SOFTCALL["periods"])
    v = acceptance.softcall_value(props)
    assert np.abs(v - acceptance.softcall_enumeration(props)).max() <= 1e-10


def test_snowball_vs_joint_matrix(props3):
    # same induction through the explicit (nK) x (nK) lifted matrices, without the tensor shortcut
    s = acceptance.SNOWBALL
    v, perms = acceptance.snowball_value(props3)
    K = s["K"]
    coupons = np.tile(s["dC"] * np.arange(K), 4)
    # coupons are paid at t_1..t_n, the last one on the terminal grid
    v_ref = np.full(4 * K, s["principal"]) + coupons
    for i in range(len(props3), 0, -1):
        v_ref = joint_step_matrix([props3[i - 1].u] * K, perms[i - 1]) @ v_ref
        if i - 1 > 0:
            v_ref = v_ref + coupons
    assert np.abs(v.ravel() - v_ref).max() <= 1e-12


def test_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        backward_induct([np.eye(3)], [], np.zeros((3, 2)))
    with pytest.raises(DimensionMismatch):
        backward_induct([np.eye(3)], [PermutationMap.identity(4, 2)], np.zeros((3, 2)))
    with pytest.raises(DimensionMismatch):
        backward_induct([np.eye(3)], [PermutationMap.identity(3, 2)], np.zeros(3))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(-3, 3))
def test_linearity(seed, alpha):
    rng = np.random.default_rng(seed)
    n, K = 4, 3
    Us = [random_stochastic(rng, n) for _ in range(3)]
    perms = [_random_perm(rng, n, K) for _ in range(3)]
    g1, g2 = rng.normal(size=(n, K)), rng.normal(size=(n, K))
    lhs = backward_induct(Us, perms, alpha * g1 + g2)
    rhs = alpha * backward_induct(Us, perms, g1) + backward_induct(Us, perms, g2)
    assert np.abs(lhs - rhs).max() <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), exercise=st.booleans())
def test_monotonicity(seed, exercise):
    rng = np.random.default_rng(seed)
    n, K = 4, 3
    Us = [random_stochastic(rng, n) for _ in range(3)]
    perms = [_random_perm(rng, n, K) for _ in range(3)]
    g2 = rng.normal(size=(n, K))
    g1 = g2 + rng.uniform(0, 1, size=(n, K))
    strike = rng.normal(size=(n, K))
    ex = (lambda i: strike) if exercise else None
    assert np.all(backward_induct(Us, perms, g1, ex) >= backward_induct(Us, perms, g2, ex) - 1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_early_exercise_dominates(seed):
    rng = np.random.default_rng(seed)
    n, K = 4, 3
    Us = [random_stochastic(rng, n) for _ in range(3)]
    perms = [_random_perm(rng, n, K) for _ in range(3)]
    g = rng.normal(size=(n, K))
    strike = rng.normal(size=(n, K))
    plain = backward_induct(Us, perms, g)
    assert np.all(backward_induct(Us, perms, g, lambda i: strike) >= plain - 1e-15)


def test_hooks_order(rng):
    # cash flow then event then exercise, each on v_i
    calls = []
    hooks = InductionHooks(cashflows=lambda i, v: calls.append(("c", i)) or np.zeros_like(v),
                           events=lambda i, v: calls.append(("e", i)) or v,
                           exercise=lambda i: calls.append(("x", i)) or np.full((2, 1), -np.inf))
    backward_induct([np.eye(2)] * 2, [PermutationMap.identity(2, 1)] * 2, np.zeros((2, 1)), hooks=hooks)
    assert calls == [("c", 2), ("e", 2), ("x", 2), ("c", 1), ("e", 1), ("x", 1),
                     ("c", 0), ("e", 0), ("x", 0)]


# ---------------------------------------------------------------- state dependent

def test_state_dependent_equal_blocks(rng):
    n, K = 4, 3
    Us = [random_stochastic(rng, n) for _ in range(3)]
    perms = [_random_perm(rng, n, K) for _ in range(3)]
    g = rng.normal(size=(n, K))
    a = backward_induct(Us, perms, g)
    b = backward_induct_state_dependent([[U] * K for U in Us], perms, g)
    assert np.array_equal(a, b)


def test_state_dependent_regime_toy_vs_joint(rng):
    n, K = 4, 2
    periods = 3
    Uk = [[random_stochastic(rng, n) for _ in range(K)] for _ in range(periods)]
    perms = [_random_perm(rng, n, K) for _ in range(periods)]
    g = rng.normal(size=(n, K))
    v = backward_induct_state_dependent(Uk, perms, g)
    w = g.ravel()
    for i in range(periods, 0, -1):
        w = joint_step_matrix(Uk[i - 1], perms[i - 1]) @ w
    assert np.abs(v.ravel() - w).max() <= 1e-10


def test_state_dependent_zero_terminal(rng):
    Uk = [[random_stochastic(rng, 3) for _ in range(2)] for _ in range(2)]
    perms = [PermutationMap.identity(3, 2)] * 2
    assert np.all(backward_induct_state_dependent(Uk, perms, np.zeros((3, 2))) == 0)


def test_state_dependent_wrong_block_count(rng):
    with pytest.raises(DimensionMismatch):
        backward_induct_state_dependent([[np.eye(3)]], [PermutationMap.identity(3, 2)], np.zeros((3, 2)))
