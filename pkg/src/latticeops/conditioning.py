"""Dynamic conditioning: correlate single-factor lattices through binomial conditioning trees.

Each factor gets a binomial process h with a split U = q_up U_+ + q_down U_- of its
per-step propagator. Node operators are chosen so that, from a fixed anchor state,
every h-path ending at the same node yields the same conditional law of y (conditional
recombination); marginals are preserved exactly. A shared second binomial process c,
correlated with each h, couples the factors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, InfeasibleConditioning, InvalidArgument

logger = logging.getLogger(__name__)

RECOMBINATION_RULE = "proportional"


def _matrix(u):
    return np.asarray(getattr(u, "u", u), dtype=float)


def _check_q(q_up, q_down):
    if not (0 < q_up < 1 and 0 < q_down < 1):
        raise InvalidArgument(f"conditioning probabilities must lie in (0, 1), got {q_up}, {q_down}")
    if abs(q_up + q_down - 1) > 1e-14:
        raise InvalidArgument("q_up + q_down must equal 1")


def split_propagator(U, q_up: float, q_down: float | None = None):
    """Quantile split along the state order.

    U_plus carries the upper q_up-quantile of each row rescaled by 1/q_up and
    U_minus the complement rescaled by 1/q_down, so q_up U_plus + q_down U_minus = U.
    """
    q_down = 1 - q_up if q_down is None else q_down
    _check_q(q_up, q_down)
    u = _matrix(U)
    above = np.cumsum(u[:, ::-1], axis=1)[:, ::-1] - u  # mass strictly above each state
    top = np.minimum(u, np.maximum(0.0, q_up - above))
    plus = top / q_up
    minus = (u - top) / q_down
    return plus, minus


@dataclass(frozen=True, slots=True)
class ConditioningTree:
    """Binomial process h with h_0 = 0 and moves +-1 at steps i = 0..N-1."""

    N: int
    dT: float
    q_up: Callable

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidArgument("conditioning tree needs N >= 1 steps")
        if not self.dT > 0:
            raise InvalidArgument("step length must be positive")

    @classmethod
    def symmetric(cls, N: int, dT: float = 1.0) -> "ConditioningTree":
        return cls(N, dT, lambda h, i: 0.5)

    def up(self, h: int, i: int) -> float:
        q = float(self.q_up(h, i))
        _check_q(q, 1 - q)
        return q

    def node_probabilities(self) -> list[np.ndarray]:
        """P(h_j = -j + 2m) for m = 0..j, j = 0..N."""
        out = [np.array([1.0])]
        for i in range(self.N):
            prev = out[-1]
            nxt = np.zeros(i + 2)
            for m, p in enumerate(prev):
                q = self.up(2 * m - i, i)
                nxt[m + 1] += p * q
                nxt[m] += p * (1 - q)
            out.append(nxt)
        return out


@dataclass(frozen=True, slots=True, eq=False)
class FactorBundle:
    """Anchored conditional laws of one factor on its conditioning tree.

    cond[j][m] is the law of y_j given h_j = -j + 2m (same for every h-path);
    joint(j) = P(h) cond is the bundle kernel from the anchor. edge_ops[(j, m_prev, up)] are
    the node operators over step j-1 -> j.
    """

    tree: ConditioningTree
    anchor: int
    node_prob: list
    cond: list
    marginal: list
    edge_ops: dict
    rule: str = RECOMBINATION_RULE
    max_rescale_deviation: float = 0.0
    supplemented_mass: float = 0.0

    @property
    def n(self) -> int:
        return self.marginal[0].shape[0]

    def joint(self, j: int) -> np.ndarray:
        """Ubar(anchor, 0, T; y, h, T_j) as an array (j+1, n)."""
        return self.node_prob[j][:, None] * self.cond[j]

    def marginal_defect(self) -> float:
        return max(float(np.abs(self.joint(j).sum(axis=0) - self.marginal[j]).max())
                   for j in range(self.tree.N + 1))


def build_factor_bundle(propagators: Sequence, tree: ConditioningTree, anchor: int,
                        splitter: Callable = split_propagator, tol: float = 1e-15) -> FactorBundle:
    """Build conditional laws and node operators step by step.

    The unconstrained value at node (j, h) mixes the split-product contributions of both
    predecessors. Each edge operator is the split operator with its columns rescaled so that
    the anchored composition reproduces that value (extreme nodes need no rescaling).
    Columns the split operator cannot reach from a predecessor are filled with the target
    mass directly; the largest such mass is reported as ``supplemented_mass``. Negative
    target mass (possible only with a custom splitter) raises InfeasibleConditioning.
    """
    if len(propagators) != tree.N:
        raise DimensionMismatch(f"{len(propagators)} propagators for a tree with {tree.N} steps")
    U0 = _matrix(propagators[0])
    n = U0.shape[0]
    if not 0 <= anchor < n:
        raise InvalidArgument("anchor state out of range")
    node_prob = tree.node_probabilities()
    start = np.zeros(n)
    start[anchor] = 1.0
    cond = [start[None, :]]
    marginal = [start]
    edges = {}
    worst = 0.0
    supplemented = 0.0
    for i, U in enumerate(propagators):
        u = _matrix(U)
        if u.shape != (n, n):
            raise DimensionMismatch(f"step {i}: propagator shape {u.shape}")
        j = i + 1
        contrib = {}
        splits = {}
        a = np.zeros((j + 1, n))
        for m in range(j):
            h = 2 * m - i
            q = tree.up(h, i)
            plus, minus = splitter(u, q, 1 - q)
            splits[m] = (plus, minus)
            c = cond[i][m]
            contrib[(m, True)] = c @ plus
            contrib[(m, False)] = c @ minus
            a[m + 1] += node_prob[i][m] * q * contrib[(m, True)]
            a[m] += node_prob[i][m] * (1 - q) * contrib[(m, False)]
        new_cond = np.zeros_like(a)
        for m2 in range(j + 1):
            if node_prob[j][m2] > 0:
                new_cond[m2] = a[m2] / node_prob[j][m2]
        if new_cond.min() < -1e-14:
            m2, y = np.unravel_index(int(np.argmin(new_cond)), new_cond.shape)
            raise InfeasibleConditioning(j, (2 * int(m2) - j, int(y)), float(-new_cond.min()))
        new_cond = np.maximum(new_cond, 0.0)
        for (m, up), b in contrib.items():
            target = new_cond[m + 1 if up else m]
            plus, minus = splits[m]
            base = plus if up else minus
            pos = b > tol
            r = np.zeros(n)
            r[pos] = target[pos] / b[pos]
            if np.any(pos):
                worst = max(worst, float(np.abs(r[pos] - 1).max()))
            op = base * r[None, :]
            short = (~pos) & (target > 0)
            if np.any(short):
                # columns the split operator cannot reach from this predecessor: rank-one fill
                op[:, short] = target[short][None, :]
                supplemented = max(supplemented, float(target[short].sum()))
            edges[(j, m, up)] = op
        cond.append(new_cond)
        marginal.append(marginal[-1] @ u)
    return FactorBundle(tree=tree, anchor=anchor, node_prob=node_prob, cond=cond, marginal=marginal,
                        edge_ops=edges, max_rescale_deviation=worst, supplemented_mass=supplemented)


def path_kernel(bundle: FactorBundle, moves: Sequence[bool]) -> np.ndarray:
    """Law of y_j along one h-path from the anchor using the node operators."""
    v = bundle.cond[0][0].copy()
    m = 0
    for i, up in enumerate(moves):
        v = v @ bundle.edge_ops[(i + 1, m, bool(up))]
        m += int(bool(up))
    return v


@dataclass(frozen=True, slots=True)
class JointConditioner:
    """q_pp, q_pm, q_mp, q_mm as functions (h, c, i); first sign refers to h, second to c."""

    q_pp: Callable
    q_pm: Callable
    q_mp: Callable
    q_mm: Callable
    label: str = ""

    def probs(self, h, c, i):
        q = np.array([f(h, c, i) for f in (self.q_pp, self.q_pm, self.q_mp, self.q_mm)], dtype=float)
        if np.any(q < 0) or abs(q.sum() - 1) > 1e-12:
            raise InvalidArgument(f"joint conditioner probabilities invalid at (h={h}, c={c}, i={i}): {q}")
        return q

    @classmethod
    def independent(cls, tree: ConditioningTree, c_up: float = 0.5) -> "JointConditioner":
        return cls(lambda h, c, i: tree.up(h, i) * c_up,
                   lambda h, c, i: tree.up(h, i) * (1 - c_up),
                   lambda h, c, i: (1 - tree.up(h, i)) * c_up,
                   lambda h, c, i: (1 - tree.up(h, i)) * (1 - c_up), "independent")

    @classmethod
    def synchronized(cls, w: float) -> "JointConditioner":
        """Symmetric trees only: same direction with probability w."""
        if not 0 <= w <= 1:
            raise InvalidArgument("synchronization weight must lie in [0, 1]")
        return cls(lambda h, c, i: w / 2, lambda h, c, i: (1 - w) / 2,
                   lambda h, c, i: (1 - w) / 2, lambda h, c, i: w / 2, f"sync({w})")


def joint_node_probabilities(tree: ConditioningTree, joint: JointConditioner, tol: float = 1e-12):
    """W_j(h, c) for j = 0..N as arrays indexed [m_h, m_c]; checks the h-marginal matches the tree."""
    out = [np.ones((1, 1))]
    for i in range(tree.N):
        prev = out[-1]
        nxt = np.zeros((i + 2, i + 2))
        for mh in range(i + 1):
            for mc in range(i + 1):
                p = prev[mh, mc]
                if p == 0:
                    continue
                h, c = 2 * mh - i, 2 * mc - i
                q = joint.probs(h, c, i)
                if abs(q[0] + q[1] - tree.up(h, i)) > tol:
                    raise InvalidArgument(f"joint conditioner h-marginal disagrees with the tree at step {i}")
                nxt[mh + 1, mc + 1] += p * q[0]
                nxt[mh + 1, mc] += p * q[1]
                nxt[mh, mc + 1] += p * q[2]
                nxt[mh, mc] += p * q[3]
        out.append(nxt)
    return out


@dataclass(frozen=True, slots=True, eq=False)
class CorrelatedFactor:
    """Utilde(anchor, 0, T; y, c, T_j) for every j, arrays (j+1, n)."""

    bundle: FactorBundle
    W: list
    kernels: list

    def c_probabilities(self, j: int) -> np.ndarray:
        return self.W[j].sum(axis=0)

    def conditional(self, j: int) -> np.ndarray:
        """Law of y_j given c_j, rows indexed by c; zero rows where P(c) = 0."""
        pc = self.c_probabilities(j)
        out = np.zeros_like(self.kernels[j])
        ok = pc > 0
        out[ok] = self.kernels[j][ok] / pc[ok, None]
        return out


def correlate_factors(bundles: Sequence[FactorBundle], joints: Sequence[JointConditioner] | JointConditioner):
    """Resum each factor's conditional kernels against its (h, c) joint law."""
    if isinstance(joints, JointConditioner):
        joints = [joints] * len(bundles)
    if len(joints) != len(bundles):
        raise DimensionMismatch("need one joint conditioner per factor")
    N = bundles[0].tree.N
    out = []
    for b, jc in zip(bundles, joints):
        if b.tree.N != N or abs(b.tree.dT - bundles[0].tree.dT) > 1e-15:
            raise DimensionMismatch("all bundles must share the conditioning schedule")
        W = joint_node_probabilities(b.tree, jc)
        kernels = [W[j].T @ b.cond[j] for j in range(N + 1)]
        out.append(CorrelatedFactor(bundle=b, W=W, kernels=kernels))
    for j in range(N + 1):
        ref = out[0].c_probabilities(j)
        for f in out[1:]:
            if np.abs(f.c_probabilities(j) - ref).max() > 1e-12:
                raise InvalidArgument("factors disagree on the law of the shared conditioning process")
    return out


@dataclass(frozen=True, slots=True)
class MultiFactorPrice:
    price: float
    op_count: int
    rule: str = RECOMBINATION_RULE


def price_multifactor(payoff, factors: Sequence[CorrelatedFactor], j: int) -> MultiFactorPrice:
    """Sum_c P(c) E[payoff | c] with factors conditionally independent given c_j.

    ``payoff`` is either a list of separable terms, each a list of per-factor vectors whose
    product forms the term, or a dense array over the joint factor states. The operation
    count tallies per-factor vector contractions (linear in the number of factors for
    separable payoffs).
    """
    pc = factors[0].c_probabilities(j)
    conds = [f.conditional(j) for f in factors]
    ops = 0
    if isinstance(payoff, np.ndarray):
        if payoff.ndim != len(factors):
            raise DimensionMismatch("dense payoff must have one axis per factor")
        total = 0.0
        for ci, p in enumerate(pc):
            if p == 0:
                continue
            t = payoff
            for c in reversed(conds):
                t = t @ c[ci]
                ops += 1
            total += p * float(t)
        return MultiFactorPrice(total, ops)
    total = 0.0
    for term in payoff:
        if len(term) != len(factors):
            raise DimensionMismatch("each separable term needs one vector per factor")
        for ci, p in enumerate(pc):
            if p == 0:
                continue
            prod = 1.0
            for c, f in zip(conds, term):
                prod *= float(c[ci] @ np.asarray(f, dtype=float))
                ops += 1
            total += p * prod
    return MultiFactorPrice(total, ops)


def factor_correlation(factors: Sequence[CorrelatedFactor], j: int, values=None) -> float:
    """Exact correlation of g(y^(1)), g(y^(2)) at T_j under the conditional-independence model."""
    if len(factors) != 2:
        raise InvalidArgument("correlation is defined for a pair of factors")
    g = [np.arange(f.bundle.n, dtype=float) if values is None else np.asarray(values[k], dtype=float)
         for k, f in enumerate(factors)]
    pc = factors[0].c_probabilities(j)
    conds = [f.conditional(j) for f in factors]
    m = [float(pc @ (c @ gk)) for c, gk in zip(conds, g)]
    v = [float(pc @ (c @ gk**2)) - mk**2 for c, gk, mk in zip(conds, g, m)]
    cross = float(pc @ ((conds[0] @ g[0]) * (conds[1] @ g[1])))
    return (cross - m[0] * m[1]) / np.sqrt(v[0] * v[1])


def tensor_chain_oracle(propagators_a: Sequence, propagators_b: Sequence, anchors, w: float,
                        splitter: Callable = split_propagator) -> np.ndarray:
    """Exact two-factor chain where both factors use symmetric splits and move in the same
    split direction with probability (1 + (2w - 1)^2)/2 at every step. Returns the joint law
    of (y_a, y_b) at the final step from the anchors."""
    same = 0.5 * (1 + (2 * w - 1) ** 2)
    na = _matrix(propagators_a[0]).shape[0]
    nb = _matrix(propagators_b[0]).shape[0]
    P = np.zeros((na, nb))
    P[anchors[0], anchors[1]] = 1.0
    for Ua, Ub in zip(propagators_a, propagators_b):
        pa, ma = splitter(_matrix(Ua), 0.5, 0.5)
        pb, mb = splitter(_matrix(Ub), 0.5, 0.5)
        nxt = np.zeros_like(P)
        for prob, A, B in ((same / 2, pa, pb), (same / 2, ma, mb),
                           ((1 - same) / 2, pa, mb), ((1 - same) / 2, ma, pb)):
            nxt += prob * A.T @ P @ B
        P = nxt
    return P
