"""From generators to propagators.

Fast exponentiation squares the elementary step (I + dt q) n times. The
squaring is carried out on the increment A = U - I, using
(I + A)^2 = I + (2A + A^2), which keeps full relative accuracy for tiny dt.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, NumericalFailure, SeriesDivergence
from .generator import GeneratorMatrix, SchedulePiece, as_schedule
from .spectral import SpectralDecomposition, apply_function, spectral_decompose

logger = logging.getLogger(__name__)

CLIP_TOL = 1e-12
ROW_TOL = 1e-10
SIMPSON_PANELS = 16


class StochasticityAudit:
    """Process-wide record of every propagator validated."""

    def __init__(self):
        self._lock = threading.Lock()
        self.checks = 0
        self.violations: list[str] = []

    def record(self, ok: bool, detail: str = ""):
        with self._lock:
            self.checks += 1
            if not ok:
                self.violations.append(detail)

    def reset(self):
        with self._lock:
            self.checks = 0
            self.violations = []

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self.checks, len(self.violations)


AUDIT = StochasticityAudit()


def stochasticity_defect(u: np.ndarray, conserving: bool) -> tuple[float, float]:
    """(most negative entry, worst row-sum breach) for a candidate propagator."""
    rs = u.sum(axis=1)
    neg = float(min(0.0, u.min()))
    if conserving:
        breach = float(np.abs(rs - 1.0).max())
    else:
        breach = float(max(0.0, (rs - 1.0).max()))
    return neg, breach


@dataclass(frozen=True, eq=False)
class Propagator:
    """Stochastic (or sub-stochastic, when not conserving) transition matrix on [t0, t1]."""

    u: np.ndarray
    t0: float = 0.0
    t1: float = 0.0
    conserving: bool = True
    source: str = ""

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise InvalidArgument(f"propagator must be square, got {u.shape}")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        neg, breach = stochasticity_defect(u, self.conserving)
        ok = neg >= -CLIP_TOL and breach <= ROW_TOL
        AUDIT.record(ok, f"{self.source or 'propagator'}: min entry {neg:.3e}, row breach {breach:.3e}")
        if not ok:
            raise NumericalFailure(
                f"propagator from {self.source or 'unknown'} is not stochastic: "
                f"min entry {neg:.3e}, row-sum breach {breach:.3e}")

    @property
    def n(self) -> int:
        return self.u.shape[0]

    def then(self, other: "Propagator") -> "Propagator":
        """Chapman-Kolmogorov composition self(t0, t1) * other(t1, t2)."""
        return make_propagator(self.u @ other.u, self.t0, other.t1,
                               self.conserving and other.conserving, "composition")


def make_propagator(u, t0, t1, conserving=True, source="") -> Propagator:
    """Clip round-off negatives, renormalize conserving rows, validate."""
    u = np.array(u, dtype=float)
    small = (u < 0) & (u >= -CLIP_TOL)
    u[small] = 0.0
    if conserving:
        rs = u.sum(axis=1)
        good = rs > 0
        u[good] /= rs[good][:, None]
    return Propagator(u, float(t0), float(t1), conserving, source)


@dataclass(frozen=True, slots=True)
class FastExpPlan:
    dt: float
    n_doublings: int
    t: float

    def __post_init__(self):
        if self.t / self.dt != 2.0**self.n_doublings:
            raise InvalidArgument("plan violates t/dt = 2^n")


def _min_diag(q) -> float:
    d = np.real(np.diag(np.asarray(q)))
    return float(d.min()) if d.size else 0.0


def plan_fast_exp(gen, t: float, extra_doublings: int = 0, min_diagonal: float | None = None) -> FastExpPlan:
    """Smallest n with 1 + (t/2^n) * min_y q(y,y) >= 1/2, plus optional extra doublings.

    ``gen`` may be a GeneratorMatrix or a (possibly complex) matrix; for complex
    matrices the real part of the diagonal is used.
    """
    if not (t > 0) or not math.isfinite(t):
        raise InvalidArgument(f"horizon must be positive, got {t}")
    if extra_doublings < 0:
        raise InvalidArgument("extra doublings cannot loosen the FE1 step")
    dmin = _min_diag(getattr(gen, "q", gen)) if min_diagonal is None else float(min_diagonal)
    n = 0
    while 1.0 + (t / 2.0**n) * dmin < 0.5:
        n += 1
    n += int(extra_doublings)
    return FastExpPlan(dt=t / 2.0**n, n_doublings=n, t=float(t))


def fast_exp_matrix(q: np.ndarray, plan: FastExpPlan) -> np.ndarray:
    """(I + dt q)^(2^n) for a real or complex square matrix."""
    q = np.asarray(q)
    A = plan.dt * q
    for _ in range(plan.n_doublings):
        A = 2.0 * A + A @ A
    out = A.copy()
    out[np.diag_indices_from(out)] += 1.0
    return out


def fast_exponentiate(gen: GeneratorMatrix, t: float, t0: float = 0.0,
                      extra_doublings: int = 0, plan: FastExpPlan | None = None) -> Propagator:
    """Propagator over [t0, t0 + t] by repeated squaring of the FE1 step."""
    if t == 0:
        return make_propagator(np.eye(gen.n), t0, t0, gen.conserving, "identity")
    if plan is None:
        plan = plan_fast_exp(gen, t, extra_doublings)
    u = fast_exp_matrix(gen.q, plan)
    neg = float(u.min())
    if neg < -CLIP_TOL:
        logger.warning("fast exponentiation produced entry %.3e below clip tolerance", neg)
    return make_propagator(u, t0, t0 + t, gen.conserving, f"fast_exp(n={plan.n_doublings})")


def path_ordered_exponential(schedule, maps: Sequence | None = None,
                             extra_doublings: int = 0) -> Propagator:
    """Time-ordered product of piecewise fast exponentials.

    ``maps[k]`` (row-stochastic, or None) is applied at the knot between
    piece k and piece k+1.
    """
    pieces = as_schedule(schedule)
    if maps is not None and len(maps) != len(pieces) - 1:
        raise InvalidArgument(f"expected {len(pieces) - 1} knot maps, got {len(maps)}")
    n = pieces[0].gen.n
    u = np.eye(n)
    conserving = True
    for k, piece in enumerate(pieces):
        step = fast_exponentiate(piece.gen, piece.t1 - piece.t0, piece.t0, extra_doublings)
        u = u @ step.u
        conserving &= piece.gen.conserving
        if maps is not None and k < len(maps) and maps[k] is not None:
            m = np.asarray(maps[k], dtype=float)
            if m.shape != (n, n) or m.min() < -CLIP_TOL or np.abs(m.sum(axis=1) - 1).max() > ROW_TOL:
                raise InvalidArgument(f"mapping operator at knot {k} is not row-stochastic")
            u = u @ m
    return make_propagator(u, pieces[0].t0, pieces[-1].t1, conserving, "path_ordered")


def _piece_at(pieces, s):
    for p in pieces:
        if s < p.t1:
            return p.gen.q
    return pieces[-1].gen.q


def dyson_truncated(schedule, order: int, t: float | None = None) -> np.ndarray:
    """Partial sum I + sum_{k<=order} of time-ordered integrals of the generator.

    Composite Simpson quadrature (16 panels per smooth piece) evaluates the
    nested integrals; intended as a small-t oracle only.
    """
    if order not in (1, 2, 3):
        raise InvalidArgument("Dyson order must be 1, 2 or 3")
    pieces = as_schedule(schedule, t)
    t_start = pieces[0].t0
    t_end = pieces[-1].t1 if t is None else float(t)
    if not (t_start < t_end <= pieces[-1].t1 + 1e-15):
        raise InvalidArgument("Dyson horizon outside the schedule")
    norm = max(float(np.abs(p.gen.q).sum(axis=1).max()) for p in pieces)
    x = norm * (t_end - t_start)
    bound = x ** (order + 1) / math.factorial(order + 1) * math.exp(x)
    if bound >= 1.0:
        raise SeriesDivergence(f"Dyson remainder bound {bound:.3g} >= 1; horizon too long")
    knots = sorted({t_start, t_end, *[p.t0 for p in pieces if t_start < p.t0 < t_end]})
    n = pieces[0].gen.n
    m = SIMPSON_PANELS
    base_w = np.ones(m + 1)
    base_w[1:-1:2], base_w[2:-1:2] = 4.0, 2.0

    def nodes(a, b):
        # Simpson nodes on [a, b], split at generator knots so each segment is smooth
        cuts = [a] + [k for k in knots if a < k < b] + [b]
        out = []
        for lo, hi in zip(cuts, cuts[1:]):
            q = _piece_at(pieces, 0.5 * (lo + hi))
            w = base_w * (hi - lo) / (3 * m)
            out.extend((float(r), q, float(wi)) for r, wi in zip(np.linspace(lo, hi, m + 1), w))
        return out

    cache: dict = {}

    def F(k, s):
        # F_k(s) = int_{t_start}^{s} F_{k-1}(r) L(r) dr
        if k == 0:
            return np.eye(n)
        if s <= t_start:
            return np.zeros((n, n))
        key = (k, s)
        if key not in cache:
            acc = np.zeros((n, n))
            for r, q, w in nodes(t_start, s):
                acc += w * (F(k - 1, r) @ q)
            cache[key] = acc
        return cache[key]

    total = np.eye(n)
    for k in range(1, order + 1):
        total = total + F(k, t_end)
    return total


def spectral_propagator(dec: SpectralDecomposition, t: float, t0: float = 0.0,
                        conserving: bool = True) -> Propagator:
    u = apply_function(dec, lambda lam: np.exp(t * lam), real=True)
    return make_propagator(u, t0, t0 + t, conserving, "spectral")


__all__ = [
    "AUDIT", "FastExpPlan", "Propagator", "StochasticityAudit", "dyson_truncated",
    "fast_exp_matrix", "fast_exponentiate", "make_propagator", "path_ordered_exponential",
    "plan_fast_exp", "spectral_decompose", "apply_function", "spectral_propagator",
]
