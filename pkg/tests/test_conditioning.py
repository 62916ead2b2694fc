import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latticeops import acceptance
from latticeops.conditioning import (
    ConditioningTree, JointConditioner, build_factor_bundle, correlate_factors,
    factor_correlation, path_kernel, price_multifactor, split_propagator, tensor_chain_oracle,
)
from latticeops.errors import DimensionMismatch, InfeasibleConditioning, InvalidArgument

from conftest import random_stochastic


def _toy(rng, n=4, N=2):
    return [random_stochastic(rng, n) for _ in range(N)]


@pytest.fixture(scope="module")
def smooth_bundle():
    props, tree, anchor = acceptance.conditioning_toy(N=6, n=12)
    return build_factor_bundle(props, tree, anchor)


# ---------------------------------------------------------------- split

def test_two_point_split():
    U = np.array([[0.5, 0.5], [0.5, 0.5]])
    plus, minus = split_propagator(U, 0.5)
    assert np.array_equal(plus, [[0.0, 1.0], [0.0, 1.0]])
    assert np.array_equal(minus, [[1.0, 0.0], [1.0, 0.0]])


def test_near_one_split_recovers_propagator(rng):
    U = random_stochastic(rng, 6)
    plus, _ = split_propagator(U, 1 - 1e-9)
    assert np.abs(plus - U).max() <= 1e-8


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), q=st.floats(0.01, 0.99), n=st.integers(2, 12))
def test_split_reconstruction_and_dominance(seed, q, n):
    rng = np.random.default_rng(seed)
    U = random_stochastic(rng, n)
    plus, minus = split_propagator(U, q)
    assert np.abs(q * plus + (1 - q) * minus - U).max() <= 1e-14
    assert plus.min() >= 0 and minus.min() >= 0
    assert np.abs(plus.sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(minus.sum(axis=1) - 1).max() <= 1e-12
    # upper tails: P_plus(Y >= y) >= P_minus(Y >= y)
    tail_p = np.cumsum(plus[:, ::-1], axis=1)
    tail_m = np.cumsum(minus[:, ::-1], axis=1)
    assert np.all(tail_p >= tail_m - 1e-12)


@pytest.mark.parametrize("q_up,q_down", [(0.0, 1.0), (1.0, 0.0), (0.3, 0.6), (-0.1, 1.1)])
def test_split_rejects_degenerate_probabilities(q_up, q_down):
    with pytest.raises(InvalidArgument):
        split_propagator(np.eye(2), q_up, q_down)


# ---------------------------------------------------------------- bundles

def test_single_step_bundle(rng):
    U = random_stochastic(rng, 5)
    b = build_factor_bundle([U], ConditioningTree.symmetric(1), 2)
    plus, minus = split_propagator(U, 0.5)
    assert np.allclose(b.cond[1][1], plus[2], atol=1e-15)
    assert np.allclose(b.cond[1][0], minus[2], atol=1e-15)
    assert b.marginal_defect() <= 1e-15
    assert b.max_rescale_deviation <= 1e-15


def test_two_step_marginal(rng):
    b = build_factor_bundle(_toy(rng), ConditioningTree.symmetric(2, 0.5), 1)
    assert b.marginal_defect() <= 1e-12
    assert np.abs(b.joint(2).sum(axis=0) - b.marginal[2]).max() <= 1e-12


def test_uninformative_split(rng):
    props = _toy(rng, 5, 3)
    b = build_factor_bundle(props, ConditioningTree.symmetric(3), 0, splitter=lambda u, q, qd: (u, u))
    for j in range(4):
        binom = np.array([math.comb(j, m) for m in range(j + 1)]) / 2**j
        assert np.abs(b.joint(j) - binom[:, None] * b.marginal[j][None, :]).max() <= 1e-15


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 5), n=st.integers(2, 8))
def test_marginals_and_recombination(seed, N, n):
    rng = np.random.default_rng(seed)
    qs = rng.uniform(0.2, 0.8, size=(2 * N + 1, N))
    tree = ConditioningTree(N, 0.1, lambda h, i: qs[h + N, i])
    b = build_factor_bundle(_toy(rng, n, N), tree, int(rng.integers(n)))
    assert b.marginal_defect() <= 1e-12
    for j in range(N + 1):
        J = b.joint(j)
        assert J.min() >= 0
        assert abs(J.sum() - 1) <= 1e-10
        assert np.abs(b.cond[j].sum(axis=1) - 1).max() <= 1e-10
    # every h-path to the same node gives the same conditional law
    for moves in itertools.product((False, True), repeat=N):
        assert np.abs(path_kernel(b, moves) - b.cond[N][sum(moves)]).max() <= 1e-12


def test_support_gap_fill_is_reported(smooth_bundle):
    # quantile splits truncate row supports, so some node columns need the rank-one fill
    assert smooth_bundle.marginal_defect() <= 1e-12
    assert 0.0 < smooth_bundle.supplemented_mass <= 1.0
    for op in smooth_bundle.edge_ops.values():
        assert op.min() >= 0


def test_infeasible_split_reported(rng):
    U = random_stochastic(rng, 3)

    def bad(u, q, qd):
        E = np.array([[0.5, -0.5, 0.0]] * 3)
        return u + E, u - E * q / qd

    with pytest.raises(InfeasibleConditioning):
        build_factor_bundle([U], ConditioningTree.symmetric(1), 0, splitter=bad)


def test_bundle_dimension_checks(rng):
    with pytest.raises(DimensionMismatch):
        build_factor_bundle(_toy(rng, 3, 2), ConditioningTree.symmetric(3), 0)
    with pytest.raises(InvalidArgument):
        build_factor_bundle(_toy(rng, 3, 2), ConditioningTree.symmetric(2), 5)
    with pytest.raises(InvalidArgument):
        ConditioningTree(0, 1.0, lambda h, i: 0.5)


# ---------------------------------------------------------------- correlation

def test_independent_joint_factorizes(rng):
    tree = ConditioningTree.symmetric(3)
    b1 = build_factor_bundle(_toy(rng, 4, 3), tree, 1)
    b2 = build_factor_bundle(_toy(rng, 5, 3), tree, 3)
    f = correlate_factors([b1, b2], JointConditioner.independent(tree))
    for j in range(4):
        pc = f[0].c_probabilities(j)
        joint = np.einsum("c,ca,cb->ab", pc, f[0].conditional(j), f[1].conditional(j))
        assert np.abs(joint - np.outer(b1.marginal[j], b2.marginal[j])).max() <= 1e-12


@pytest.mark.parametrize("w", [0.0, 0.3, 0.5, 0.8, 1.0])
def test_marginal_preserved_under_any_joint(smooth_bundle, w):
    f = correlate_factors([smooth_bundle], JointConditioner.synchronized(w))[0]
    for j in range(smooth_bundle.tree.N + 1):
        assert np.abs(f.kernels[j].sum(axis=0) - smooth_bundle.marginal[j]).max() <= 1e-12


def test_synchronization_sweep_monotone(smooth_bundle):
    N = smooth_bundle.tree.N
    corr = [factor_correlation(correlate_factors([smooth_bundle] * 2, JointConditioner.synchronized(w)), N)
            for w in (0.5, 0.7, 0.9, 1.0)]
    assert abs(corr[0]) <= 1e-12
    assert all(b > a for a, b in zip(corr, corr[1:]))
    assert corr[-1] > 0


def test_joint_conditioner_validation(smooth_bundle):
    bad = JointConditioner(lambda h, c, i: 0.5, lambda h, c, i: 0.5, lambda h, c, i: 0.1,
                           lambda h, c, i: -0.1)
    with pytest.raises(InvalidArgument):
        correlate_factors([smooth_bundle], bad)
    # h-marginal must agree with the tree
    skew = JointConditioner(lambda h, c, i: 0.4, lambda h, c, i: 0.3, lambda h, c, i: 0.2,
                            lambda h, c, i: 0.1)
    with pytest.raises(InvalidArgument):
        correlate_factors([smooth_bundle], skew)
    with pytest.raises(InvalidArgument):
        JointConditioner.synchronized(1.5)


def test_mismatched_schedules(rng, smooth_bundle):
    other = build_factor_bundle(_toy(rng, 4, 2), ConditioningTree.symmetric(2), 0)
    with pytest.raises(DimensionMismatch):
        correlate_factors([smooth_bundle, other], JointConditioner.synchronized(0.7))


# ---------------------------------------------------------------- pricing

def test_additive_payoff_ignores_correlation(rng, smooth_bundle):
    N, n = smooth_bundle.tree.N, smooth_bundle.n
    fa, fb = rng.normal(size=n), rng.normal(size=n)
    one = np.ones(n)
    singles = float(smooth_bundle.marginal[N] @ fa + smooth_bundle.marginal[N] @ fb)
    for w in (0.5, 0.9, 1.0):
        f = correlate_factors([smooth_bundle] * 2, JointConditioner.synchronized(w))
        price = price_multifactor([[fa, one], [one, fb]], f, N).price
        assert price == pytest.approx(singles, abs=1e-12)


def test_product_of_indicators_independent(rng):
    tree = ConditioningTree.symmetric(3)
    b1 = build_factor_bundle(_toy(rng, 4, 3), tree, 0)
    b2 = build_factor_bundle(_toy(rng, 4, 3), tree, 2)
    f = correlate_factors([b1, b2], JointConditioner.independent(tree))
    i1, i2 = np.array([0, 0, 1, 1.0]), np.array([1, 0, 0, 1.0])
    price = price_multifactor([[i1, i2]], f, 3).price
    assert price == pytest.approx(float(b1.marginal[3] @ i1) * float(b2.marginal[3] @ i2), abs=1e-12)


def test_dense_payoff_matches_separable(rng, smooth_bundle):
    N, n = smooth_bundle.tree.N, smooth_bundle.n
    f = correlate_factors([smooth_bundle] * 2, JointConditioner.synchronized(0.8))
    a, b = rng.normal(size=n), rng.normal(size=n)
    sep = price_multifactor([[a, b]], f, N).price
    dense = price_multifactor(np.outer(a, b), f, N).price
    assert sep == pytest.approx(dense, abs=1e-12)


def test_operation_count_linear_in_factors(smooth_bundle):
    N, n = smooth_bundle.tree.N, smooth_bundle.n
    counts = []
    for k in (1, 2, 4, 8):
        f = correlate_factors([smooth_bundle] * k, JointConditioner.synchronized(0.7))
        counts.append(price_multifactor([[np.ones(n)] * k], f, N).op_count)
    assert counts == [counts[0] * k for k in (1, 2, 4, 8)]


def test_digital_basket_vs_tensor_chain():
    props, tree, _ = acceptance.conditioning_toy(N=8, n=8)
    anchors = (3, 4)
    b1 = build_factor_bundle(props, tree, anchors[0])
    b2 = build_factor_bundle(props, tree, anchors[1])
    w = 0.9
    f = correlate_factors([b1, b2], JointConditioner.synchronized(w))
    digital = (np.add.outer(np.arange(8), np.arange(8)) >= 8).astype(float)
    approx = price_multifactor(digital, f, tree.N).price
    joint = tensor_chain_oracle(props, props, anchors, w)
    # the oracle chain preserves each factor's law exactly
    assert np.abs(joint.sum(axis=1) - b1.marginal[-1]).max() <= 1e-12
    assert np.abs(joint.sum(axis=0) - b2.marginal[-1]).max() <= 1e-12
    exact = float((joint * digital).sum())
    print(f"digital basket: conditioning {approx:.6f} tensor chain {exact:.6f} diff {approx - exact:+.2e}")
    assert 0 <= approx <= 1 and 0 <= exact <= 1
