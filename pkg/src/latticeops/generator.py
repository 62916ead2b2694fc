"""Markov generators on lattices and their transformations.

Covers diffusion generators, lattice symbols, measure changes (including
Girsanov drift changes), numeraire changes and Bochner subordination by
Bernstein functions.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    CourantViolation,
    InvalidArgument,
    InvalidMeasureChange,
    InvalidNumeraire,
    NumericalFailure,
    ValidationError,
)
from .lattice import Boundary, Lattice, OperatorKind, derivative_operator
from .spectral import apply_function, spectral_decompose

logger = logging.getLogger(__name__)

OFFDIAG_TOL = 1e-12
CLIP_TOL = 1e-10
G_FLOOR = 1e-300


def row_sum_tolerance(q: np.ndarray, base: float = 1e-10) -> float:
    """Absolute row-sum tolerance, widened only for very stiff matrices."""
    scale = float(np.abs(q).max()) if q.size else 0.0
    return base * max(1.0, scale * 1e-4)


class ZeroVolatility(ValidationError, ZeroDivisionError):
    pass


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Dense rate matrix with Markov-generator invariants.

    ``killing`` marks sub-Markov generators (e.g. with a discount rate), whose
    rows may sum to a nonpositive number instead of zero.
    """

    q: np.ndarray
    lattice: Lattice | None = None
    killing: bool = False
    tol: float = 1e-10

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise InvalidArgument(f"generator must be square, got shape {q.shape}")
        if self.lattice is not None and self.lattice.n_points != q.shape[0]:
            raise InvalidArgument("generator size does not match its lattice")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        check_generator(q, self.lattice, killing=self.killing, tol=self.tol)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def absorbing(self) -> bool:
        return self.lattice is not None and self.lattice.boundary is Boundary.ABSORBING

    @property
    def conserving(self) -> bool:
        return not (self.killing or self.absorbing)

    def with_matrix(self, q, killing=None, tol=None) -> "GeneratorMatrix":
        return GeneratorMatrix(q, self.lattice, self.killing if killing is None else killing,
                               self.tol if tol is None else tol)


def check_generator(q: np.ndarray, lattice: Lattice | None = None, killing=False, tol=1e-10):
    """Validate MG1 (nonnegative off-diagonals) and MG2 (row sums)."""
    off = q - np.diag(np.diag(q))
    worst = float(off.min()) if q.size else 0.0
    if worst < -max(OFFDIAG_TOL, tol * 1e-2):
        raise ValidationError(f"negative off-diagonal rate {worst:.3e}")
    rs = q.sum(axis=1)
    rtol = row_sum_tolerance(q, tol)
    if lattice is not None and lattice.boundary is Boundary.ABSORBING:
        for r in lattice.boundary_rows():
            if np.any(q[r] != 0.0):
                raise ValidationError(f"absorbing boundary row {r} must vanish")
    if killing:
        if np.any(rs > rtol):
            raise ValidationError(f"row sum {rs.max():.3e} exceeds zero for a killing generator")
    elif np.any(np.abs(rs) > rtol):
        raise ValidationError(f"row sums deviate from zero by {np.abs(rs).max():.3e}")


@dataclass(frozen=True, slots=True)
class CoefficientField:
    """Drift mu(x, t) and volatility sigma(x, t), both vectorized in x."""

    mu: Callable
    sigma: Callable

    @classmethod
    def constant(cls, mu: float, sigma: float) -> "CoefficientField":
        return cls(mu=lambda x, t=0.0: np.full(np.shape(x), float(mu)),
                   sigma=lambda x, t=0.0: np.full(np.shape(x), float(sigma)))

    def evaluate(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        mu = np.broadcast_to(np.asarray(self.mu(x, t), dtype=float), x.shape)
        sig = np.broadcast_to(np.asarray(self.sigma(x, t), dtype=float), x.shape)
        return mu, sig


def build_diffusion_generator(lat: Lattice, coeff: CoefficientField, t: float = 0.0) -> GeneratorMatrix:
    """q = mu * Nabla + (sigma^2 / 2) * Delta with boundary rows from the lattice."""
    x = lat.points
    mu, sig = coeff.evaluate(x, t)
    h = lat.h
    diff = sig**2 / (2 * h * h)
    adv = np.abs(mu) / (2 * h)
    bad = np.flatnonzero(lat.interior_mask() & ~(diff > adv))
    if bad.size:
        i = int(bad[0])
        raise CourantViolation(float(x[i]), diff[i] + mu[i] / (2 * h), diff[i] - mu[i] / (2 * h))
    nabla = derivative_operator(lat, OperatorKind.NABLA).matrix
    delta = derivative_operator(lat, OperatorKind.DELTA).matrix
    q = mu[:, None] * nabla + (sig**2 / 2)[:, None] * delta
    q = _rebalance(q, lat)
    return GeneratorMatrix(q, lat)


def _rebalance(q: np.ndarray, lat: Lattice | None = None, row_target=None) -> np.ndarray:
    """Set the diagonal so each row sums to ``row_target`` (default 0)."""
    q = np.array(q, dtype=float)
    np.fill_diagonal(q, 0.0)
    target = 0.0 if row_target is None else row_target
    np.fill_diagonal(q, target - q.sum(axis=1))
    if lat is not None and lat.boundary is Boundary.ABSORBING:
        for r in lat.boundary_rows():
            q[r] = 0.0
    return q


def symbol(gen: GeneratorMatrix, x_index: int, p: float) -> complex:
    """sum_y q(x, y) exp(i p (y - x)) at an interior lattice point."""
    lat = gen.lattice
    if lat is not None and x_index in lat.boundary_rows():
        raise InvalidArgument(f"symbol requires an interior point, got index {x_index}")
    cols = np.arange(gen.n)
    if lat is not None:
        d = lat.displacement(x_index, cols)
    else:
        d = (cols - x_index).astype(float)
    return complex(np.sum(gen.q[x_index] * np.exp(1j * p * d)))


def diffusion_symbol(mu: float, sigma: float, h: float, p) -> np.ndarray:
    """Closed form of the diffusion symbol: i mu sin(ph)/h + sigma^2 (cos ph - 1)/h^2."""
    p = np.asarray(p, dtype=float)
    return 1j * mu * np.sin(p * h) / h + sigma**2 * (np.cos(p * h) - 1) / h**2


# ---------------------------------------------------------------- measure changes

@dataclass(frozen=True, slots=True)
class MeasureChangeField:
    """Positive function G(y, y', t) of lattice coordinates (vectorized)."""

    G: Callable

    def matrix(self, lat: Lattice | None, n: int, t: float = 0.0) -> np.ndarray:
        if lat is None:
            y = np.arange(n, dtype=float)
            Y1, Y2 = y[:, None], y[None, :]
        else:
            y = lat.points
            # periodic targets are unwrapped to the minimal image of the source
            Y1 = y[:, None] * np.ones((1, n))
            Y2 = Y1 + lat.displacement_matrix()
        return np.broadcast_to(np.asarray(self.G(Y1, Y2, t), dtype=float), (n, n)).copy()


def apply_measure_change(gen: GeneratorMatrix, G: MeasureChangeField, t: float = 0.0) -> GeneratorMatrix:
    """q'(y, y') = G(y, y') q(y, y') / G(y, y) off-diagonal; diagonal rebalanced.

    Each row keeps its original total (zero for conserving rows).
    """
    q = gen.q
    n = gen.n
    g = G.matrix(gen.lattice, n, t)
    off = ~np.eye(n, dtype=bool)
    support = off & (q > 0)
    if np.any(~np.isfinite(g[support])) or np.any(g[support] < G_FLOOR):
        raise InvalidMeasureChange("measure change function must be positive where rates are positive")
    gd = np.diag(g).copy()
    if np.any(~np.isfinite(gd)) or np.any(gd < G_FLOOR):
        raise InvalidMeasureChange("measure change function must be positive on the diagonal")
    out = np.where(support, g * q / gd[:, None], 0.0)
    rows = q.sum(axis=1)
    out = _rebalance(out, gen.lattice, row_target=np.where(gen.killing, rows, 0.0))
    return gen.with_matrix(out)


def girsanov_drift_change(gen: GeneratorMatrix, coeff: CoefficientField, mu_bar: Callable,
                          t: float = 0.0):
    """Change the drift of a diffusion generator from mu to mu_bar.

    Uses G(y, y') = exp(a(y) (y' - y)) with a = (mu_bar - mu) / sigma^2.
    Returns the transformed generator and the measure-change field.
    """
    lat = gen.lattice
    if lat is None:
        raise InvalidArgument("Girsanov drift change needs a lattice-based generator")
    x = lat.points
    mu, sig = coeff.evaluate(x, t)
    if np.any(sig == 0):
        raise ZeroVolatility("sigma vanishes on the lattice; drift change undefined")
    mb = np.broadcast_to(np.asarray(mu_bar(x, t), dtype=float), x.shape)
    a = (mb - mu) / sig**2
    x0, h = lat.x0, lat.h

    def G(y1, y2, tt=0.0, _a=a):
        idx = np.clip(np.rint((np.asarray(y1) - x0) / h).astype(int), 0, lat.n_points - 1)
        return np.exp(_a[idx] * (np.asarray(y2) - np.asarray(y1)))

    field_ = MeasureChangeField(G)
    return apply_measure_change(gen, field_, t), field_


def generator_moments(gen: GeneratorMatrix, x_index: int | None = None):
    """First and second local moments sum_y q(x,y)(y-x)^k for k = 1, 2."""
    lat = gen.lattice
    d = lat.displacement_matrix() if lat is not None else (
        np.arange(gen.n)[None, :] - np.arange(gen.n)[:, None]).astype(float)
    m1 = np.sum(gen.q * d, axis=1)
    m2 = np.sum(gen.q * d**2, axis=1)
    if x_index is None:
        return m1, m2
    return float(m1[x_index]), float(m2[x_index])


# ---------------------------------------------------------------- schedules and numeraires

@dataclass(frozen=True, eq=False)
class SchedulePiece:
    gen: GeneratorMatrix
    t0: float
    t1: float

    def __post_init__(self):
        if not (self.t1 > self.t0):
            raise InvalidArgument(f"empty schedule interval [{self.t0}, {self.t1}]")


def as_schedule(obj, t: float | None = None) -> list[SchedulePiece]:
    """Normalize a generator, a piece, or a sequence of pieces/tuples to a schedule."""
    if isinstance(obj, GeneratorMatrix):
        if t is None:
            raise InvalidArgument("a horizon is required for a constant generator")
        return [SchedulePiece(obj, 0.0, float(t))]
    if isinstance(obj, SchedulePiece):
        return [obj]
    pieces = []
    for item in obj:
        if isinstance(item, SchedulePiece):
            pieces.append(item)
        else:
            g, (a, b) = item
            pieces.append(SchedulePiece(g, float(a), float(b)))
    for prev, nxt in zip(pieces, pieces[1:]):
        if abs(prev.t1 - nxt.t0) > 1e-12 * max(1.0, abs(prev.t1)):
            raise InvalidArgument(f"schedule intervals are not contiguous at t={prev.t1}")
        if prev.gen.n != nxt.gen.n:
            raise InvalidArgument("schedule generators differ in size")
    if not pieces:
        raise InvalidArgument("empty schedule")
    return pieces


def diffusion_schedule(lat: Lattice, coeff: CoefficientField, knots: Sequence[float]) -> list[SchedulePiece]:
    """Piecewise-constant-in-time diffusion, coefficients frozen at interval midpoints."""
    knots = [float(k) for k in knots]
    return [SchedulePiece(build_diffusion_generator(lat, coeff, 0.5 * (a + b)), a, b)
            for a, b in zip(knots, knots[1:])]


def _time_derivative(g: Callable, x, t, dg_dt=None):
    if dg_dt is not None:
        return np.asarray(dg_dt(x, t), dtype=float)
    d = 1e-3 * max(1.0, abs(t))
    f = lambda s: np.asarray(g(x, s), dtype=float)
    return (8 * (f(t + d) - f(t - d)) - (f(t + 2 * d) - f(t - 2 * d))) / (12 * d)


def apply_numeraire_change(schedule, g: Callable, dg_dt: Callable | None = None,
                           tol: float = 1e-8) -> list[SchedulePiece]:
    """L' = g^{-1} L g + g^{-1} dg/dt on each schedule piece.

    ``g(x, t)`` must be positive and space-time harmonic, dg/dt + L g = 0,
    which is checked at both ends of every piece. The transformed generator
    is evaluated at the start of each piece.
    """
    pieces = as_schedule(schedule)
    out = []
    for piece in pieces:
        lat = piece.gen.lattice
        x = lat.points if lat is not None else np.arange(piece.gen.n, dtype=float)
        for tk in (piece.t0, piece.t1):
            gv = np.asarray(g(x, tk), dtype=float)
            if np.any(~np.isfinite(gv)) or np.any(gv <= 0):
                raise InvalidNumeraire(f"numeraire must be positive at t={tk}")
            dg = _time_derivative(g, x, tk, dg_dt)
            Lg = piece.gen.q @ gv
            res = float(np.abs(dg + Lg).max())
            scale = max(1.0, float(np.abs(dg).max()), float(np.abs(Lg).max()))
            if res > tol * scale:
                raise InvalidNumeraire(
                    f"numeraire is not space-time harmonic at t={tk}: residual {res:.3e}")
        gv = np.asarray(g(x, piece.t0), dtype=float)
        dg = _time_derivative(g, x, piece.t0, dg_dt)
        q = piece.gen.q * gv[None, :] / gv[:, None]
        q[np.diag_indices_from(q)] += dg / gv
        off = ~np.eye(len(gv), dtype=bool)
        q = np.where(off, q, 0.0)
        q = _rebalance(q, lat)
        out.append(SchedulePiece(GeneratorMatrix(q, lat), piece.t0, piece.t1))
    return out


# ---------------------------------------------------------------- subordination

class BernsteinKind(enum.Enum):
    POISSON = "poisson"
    STABLE = "stable"
    GAMMA = "gamma"
    LINEAR = "linear"


@dataclass(frozen=True, slots=True)
class BernsteinFunction:
    """Laplace exponent of a subordinator.

    poisson: c (1 - exp(-lam)); stable: lam**alpha; gamma: log(1 + nu lam) / nu;
    linear: lam.
    """

    kind: BernsteinKind
    param: float = 0.0

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, BernsteinKind) else BernsteinKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p = self.param
        if kind is BernsteinKind.POISSON and not p > 0:
            raise InvalidArgument("Poisson intensity c must be positive")
        if kind is BernsteinKind.STABLE and not (1e-3 <= p <= 1 - 1e-3):
            raise InvalidArgument("stable index alpha must lie in (0, 1), at least 1e-3 from the ends")
        if kind is BernsteinKind.GAMMA and not p > 0:
            raise InvalidArgument("gamma variance rate nu must be positive")
        grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 200)])
        vals = np.real(self(grid))
        if abs(vals[0]) > 1e-15 or np.any(np.diff(vals) < -1e-12 * np.abs(vals[1:])):
            raise InvalidArgument(f"{kind.value} is not a Bernstein function for param={p}")

    @classmethod
    def poisson(cls, c):
        return cls(BernsteinKind.POISSON, float(c))

    @classmethod
    def stable(cls, alpha):
        return cls(BernsteinKind.STABLE, float(alpha))

    @classmethod
    def gamma(cls, nu):
        return cls(BernsteinKind.GAMMA, float(nu))

    @classmethod
    def linear(cls):
        return cls(BernsteinKind.LINEAR, 0.0)

    def __call__(self, lam):
        lam = np.asarray(lam)
        k, p = self.kind, self.param
        if k is BernsteinKind.POISSON:
            return p * (1 - np.exp(-lam))
        if k is BernsteinKind.STABLE:
            return np.where(lam == 0, 0.0, np.power(lam.astype(complex), p))
        if k is BernsteinKind.GAMMA:
            return np.log1p(p * lam) / p
        return lam * 1.0


def _clip_and_rebalance(q: np.ndarray, lat, what: str) -> np.ndarray:
    off = ~np.eye(q.shape[0], dtype=bool)
    worst = float(q[off].min()) if q.shape[0] > 1 else 0.0
    if worst < -CLIP_TOL:
        raise NumericalFailure(f"{what}: negative off-diagonal rate {worst:.3e} beyond clipping tolerance")
    q = np.where(off & (q < 0), 0.0, q)
    return _rebalance(q, lat)


def subordinate(gen: GeneratorMatrix, phi: BernsteinFunction) -> GeneratorMatrix:
    """L' = -phi(-L) by functional calculus on the eigendecomposition."""
    dec = spectral_decompose(gen)
    q = apply_function(dec, lambda lam: -phi(-lam), real=True)
    q = _clip_and_rebalance(q, gen.lattice, "subordination")
    return GeneratorMatrix(q, gen.lattice, tol=1e-8)


def subordinate_asymmetric(gen: GeneratorMatrix, phi_up: BernsteinFunction,
                           phi_down: BernsteinFunction, price_map: Callable) -> GeneratorMatrix:
    """Separate jump laws for moves that raise or lower the price F(y).

    Off-diagonal rates toward states with higher F come from -phi_up(-L),
    those toward lower F from -phi_down(-L); the diagonal closes the rows.
    """
    lat = gen.lattice
    y = lat.points if lat is not None else np.arange(gen.n, dtype=float)
    F = np.asarray(price_map(y), dtype=float)
    dF = np.diff(F)
    if not (np.all(dF > 0) or np.all(dF < 0)):
        raise InvalidArgument("price map must be strictly monotone on the lattice")
    dec = spectral_decompose(gen)
    up = apply_function(dec, lambda lam: -phi_up(-lam), real=True)
    down = apply_function(dec, lambda lam: -phi_down(-lam), real=True)
    rises = F[None, :] > F[:, None]
    q = np.where(rises, up, down)
    q = _clip_and_rebalance(q, lat, "asymmetric subordination")
    return GeneratorMatrix(q, lat, tol=1e-8)
