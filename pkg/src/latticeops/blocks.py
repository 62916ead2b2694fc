"""Backward induction through block-factorized lifted propagators.

The value grid v(y, k) has one column per conditioning state k. One step is
v_{i-1} = Pi_i ((U_i x I) v_i): a single n x n by n x K product followed by a
gather along the permutation targets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .abelian import round_half_away
from .errors import DimensionMismatch, InvalidArgument, SizeCapExceeded

logger = logging.getLogger(__name__)

SOFTCALL_MAX_WINDOW = 12


@dataclass(frozen=True, slots=True, eq=False)
class PermutationMap:
    """Targets (Y, K) for every (y, k) as two integer n x K arrays."""

    Y: np.ndarray
    K: np.ndarray
    clamped: int = 0

    def __post_init__(self):
        if self.Y.shape != self.K.shape or self.Y.ndim != 2:
            raise DimensionMismatch("permutation target arrays must share an n x K shape")
        n, k = self.Y.shape
        if self.Y.min() < 0 or self.Y.max() >= n or self.K.min() < 0 or self.K.max() >= k:
            raise InvalidArgument("permutation targets out of range")

    @property
    def shape(self):
        return self.Y.shape

    @classmethod
    def identity(cls, n: int, K: int) -> "PermutationMap":
        Y, Kk = np.meshgrid(np.arange(n), np.arange(K), indexing="ij")
        return cls(Y, Kk)

    def apply(self, w: np.ndarray) -> np.ndarray:
        """(Pi w)(y, k) = w(Y(y,k), K(y,k))."""
        return w[self.Y, self.K]

    def matrix(self) -> np.ndarray:
        n, K = self.shape
        P = np.zeros((n * K, n * K))
        rows = np.arange(n * K)
        P[rows, (self.Y * K + self.K).ravel()] = 1.0
        return P


def snowball_permutation(f: float, dC: float, Phi: Callable, K: int, coords=None) -> PermutationMap:
    """K(y, k) = round((f dC k + Phi(y)) / dC), clamped to [0, K-1]; Y(y, k) = y."""
    if not dC > 0:
        raise InvalidArgument("coupon spacing must be positive")
    if K < 2:
        raise InvalidArgument("coupon grid needs K >= 2")
    y = np.asarray(coords, dtype=float)
    phi = np.broadcast_to(np.asarray(Phi(y), dtype=float), y.shape)
    k = np.arange(K)
    raw = round_half_away((f * dC * k[None, :] + phi[:, None]) / dC)
    clamped = int(((raw < 0) | (raw > K - 1)).sum())
    if clamped:
        logger.warning("snowball permutation clamped %d targets", clamped)
    Kt = np.clip(raw, 0, K - 1)
    Y = np.repeat(np.arange(len(y))[:, None], K, axis=1)
    return PermutationMap(Y, Kt, clamped)


def window_popcount(K: int) -> np.ndarray:
    return np.array([bin(k).count("1") for k in range(K)])


def softcall_permutation(Sigma: Callable, N: int, coords=None) -> PermutationMap:
    """Window shift (s1..sN) -> (s2..sN, Sigma(y)); s1 is the most significant bit."""
    if not 1 <= N <= SOFTCALL_MAX_WINDOW:
        raise SizeCapExceeded(f"soft-call window {N} outside 1..{SOFTCALL_MAX_WINDOW}")
    y = np.asarray(coords, dtype=float)
    sig = np.broadcast_to(np.asarray(Sigma(y)).astype(int), y.shape)
    if np.any((sig != 0) & (sig != 1)):
        raise InvalidArgument("barrier indicator must take values 0 or 1")
    K = 2**N
    k = np.arange(K)
    Kt = ((k[None, :] << 1) & (K - 1)) | sig[:, None]
    Y = np.repeat(np.arange(len(y))[:, None], K, axis=1)
    return PermutationMap(Y, Kt)


def _matrix(u):
    return np.asarray(getattr(u, "u", u), dtype=float)


@dataclass(frozen=True, slots=True)
class InductionHooks:
    """cashflows(i, v) -> array added to v_i; events(i, v) -> v_i replaced; exercise(i) -> grid."""

    cashflows: Callable | None = None
    events: Callable | None = None
    exercise: Callable | None = None


def _prepare(i, v, hooks: InductionHooks | None):
    if hooks is None:
        return v
    if hooks.cashflows is not None:
        v = v + hooks.cashflows(i, v)
    if hooks.events is not None:
        v = hooks.events(i, v)
    if hooks.exercise is not None:
        v = np.maximum(v, hooks.exercise(i))
    return v


def backward_induct(propagators: Sequence, perms: Sequence[PermutationMap], terminal: np.ndarray,
                    early_exercise: Callable | None = None, hooks: InductionHooks | None = None,
                    ) -> np.ndarray:
    """v_{i-1} = Pi_i ((U_i x I) v_i) for i = n..1, starting from the terminal grid.

    ``early_exercise(i)`` returns an exercise-value grid compared entrywise after each step.
    Hooks are applied to v_i (cash flows at t_i, then events, then exercise) before the step
    into period i, and to v_0 at the end.
    """
    if len(propagators) != len(perms):
        raise DimensionMismatch("need one permutation per propagator")
    v = np.array(terminal, dtype=float)
    if v.ndim != 2:
        raise DimensionMismatch("terminal value grid must be n x K")
    n_per = len(propagators)
    v = _prepare(n_per, v, hooks)
    for i in range(n_per, 0, -1):
        U = _matrix(propagators[i - 1])
        perm = perms[i - 1]
        if U.shape != (v.shape[0], v.shape[0]) or perm.shape != v.shape:
            raise DimensionMismatch(f"step {i}: propagator {U.shape}, grid {v.shape}, perm {perm.shape}")
        v = perm.apply(U @ v)
        if early_exercise is not None:
            v = np.maximum(v, early_exercise(i - 1))
        v = _prepare(i - 1, v, hooks)
    return v


def backward_induct_state_dependent(propagators_per_k: Sequence[Sequence], perms: Sequence[PermutationMap],
                                    terminal: np.ndarray, early_exercise: Callable | None = None,
                                    hooks: InductionHooks | None = None) -> np.ndarray:
    """As backward_induct with a direct sum of per-column propagators U_{i,k}."""
    if len(propagators_per_k) != len(perms):
        raise DimensionMismatch("need one permutation per period")
    v = np.array(terminal, dtype=float)
    n, K = v.shape
    v = _prepare(len(perms), v, hooks)
    for i in range(len(perms), 0, -1):
        Us = propagators_per_k[i - 1]
        if len(Us) != K:
            raise DimensionMismatch(f"step {i}: {len(Us)} propagators for {K} columns")
        # columns sharing a propagator object go through one product
        groups: dict[int, list[int]] = {}
        for k, U in enumerate(Us):
            groups.setdefault(id(U), []).append(k)
        w = np.empty_like(v)
        for cols in groups.values():
            U = _matrix(Us[cols[0]])
            if U.shape != (n, n):
                raise DimensionMismatch(f"step {i}, column {cols[0]}: propagator {U.shape}")
            w[:, cols] = U @ v[:, cols]
        v = perms[i - 1].apply(w)
        if early_exercise is not None:
            v = np.maximum(v, early_exercise(i - 1))
        v = _prepare(i - 1, v, hooks)
    return v


def joint_step_matrix(propagators_k: Sequence, perm: PermutationMap) -> np.ndarray:
    """Full (n K) x (n K) lifted step Pi (direct sum of U_k); used as an oracle."""
    n, K = perm.shape
    B = np.zeros((n * K, n * K))
    for k, U in enumerate(propagators_k):
        idx = np.arange(n) * K + k
        B[np.ix_(idx, idx)] = _matrix(U)
    return perm.matrix() @ B
