"""Bridge moments by epsilon-deformation, moment matching and volatility-product pricing."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .abelian import PathFunctionalSpec, UniformGrid, round_half_away, state_coordinates
from .errors import DegenerateMoments, InvalidArgument, StepInstability
from .generator import GeneratorMatrix, as_schedule
from .propagation import fast_exp_matrix, plan_fast_exp
from .special import gammainc_lower, lower_gamma, norm_cdf

logger = logging.getLogger(__name__)

DEGENERATE_RTOL = 1e-6
RICHARDSON_TOL = 1e-4
# epsilon step relative to T * |V|; smaller steps let round-off dominate the second differences
STEP_SCALE = 1e-3
BRIDGE_FLOOR = 1e-12


# ---------------------------------------------------------------- deformation

@dataclass(frozen=True, slots=True, eq=False)
class DeformationPotential:
    """V(y1,y2) = phi(y1) delta + L(y1,y2) c(y1,y2) with c the jump increment."""

    phi: np.ndarray
    c: np.ndarray
    V: np.ndarray


def deformation_potential(gen: GeneratorMatrix, spec: PathFunctionalSpec, t: float = 0.0,
                          grid: UniformGrid | None = None) -> DeformationPotential:
    y = state_coordinates(gen)
    phi = spec.running(y, t)
    c = spec.increments(y, t)
    if grid is not None:
        c = round_half_away(c / grid.delta) * grid.delta
    off = ~np.eye(gen.n, dtype=bool)
    c = np.where(off & (gen.q != 0), c, 0.0)
    V = gen.q * c
    V[np.diag_indices(gen.n)] += phi
    return DeformationPotential(phi=phi, c=c, V=V)


def deformed_generator(gen: GeneratorMatrix, pots, eps, mode: str = "tilt") -> np.ndarray:
    """L_eps for one or several potentials.

    mode="tilt": off-diagonal L exp(sum eps_i c_i), diagonal L + sum eps_i phi_i. Its
    epsilon-derivatives at 0 are exact joint moments for jump functionals.
    mode="linear": L + sum eps_i V_i, exact for first moments and for running integrals.
    """
    q = gen.q
    if mode == "linear":
        out = q.astype(float).copy()
        for e, pot in zip(eps, pots):
            out += e * pot.V
        return out
    if mode != "tilt":
        raise InvalidArgument(f"unknown deformation mode {mode!r}")
    expo = sum(e * pot.c for e, pot in zip(eps, pots))
    off = ~np.eye(gen.n, dtype=bool)
    out = np.where(off, q * np.exp(expo), q)
    diag = sum(e * pot.phi for e, pot in zip(eps, pots))
    out[np.diag_indices(gen.n)] += diag
    return out


@dataclass(frozen=True, slots=True, eq=False)
class MomentSet:
    """Unnormalized bridge moments E[I^k delta(y_T - y2) | y_0 = y1] and the bridge probabilities.

    For bivariate sets m1, m2 refer to the first functional, n1, n2 to the second and m11 is
    the mixed moment.
    """

    prob: np.ndarray
    m1: np.ndarray
    m2: np.ndarray | None = None
    m3: np.ndarray | None = None
    n1: np.ndarray | None = None
    n2: np.ndarray | None = None
    m11: np.ndarray | None = None
    eps: float = 0.0
    richardson_error: float = 0.0

    def conditional(self, name: str) -> np.ndarray:
        """Moment divided by the bridge probability; NaN where the bridge is below 1e-12."""
        m = getattr(self, name)
        if m is None:
            raise InvalidArgument(f"moment {name} was not computed")
        out = np.full(m.shape, np.nan)
        ok = self.prob > BRIDGE_FLOOR
        out[ok] = m[ok] / self.prob[ok]
        return out


class _Evaluator:
    """Pexp of deformed generators with one shared fast-exponentiation plan per piece."""

    def __init__(self, schedule, T, specs, grids, mode, extra_doublings, eps_max):
        self.pieces = as_schedule(schedule, T)
        self.mode = mode
        self.pots = []
        self.plans = []
        for piece in self.pieces:
            pots = [deformation_potential(piece.gen, s, piece.t0, g) for s, g in zip(specs, grids)]
            self.pots.append(pots)
            d = np.diag(piece.gen.q).copy()
            for pot in pots:
                # the scalar part is peeled off below, which can at most double the diagonal spread
                d -= 2 * eps_max * np.abs(pot.phi)
            self.plans.append(plan_fast_exp(piece.gen, piece.t1 - piece.t0, extra_doublings,
                                            min_diagonal=float(d.min())))
        self.norm = max(float(np.abs(p.V).sum(axis=1).max()) for pots in self.pots for p in pots)
        self.T = self.pieces[-1].t1 - self.pieces[0].t0
        self._cache = {}

    def __call__(self, *eps) -> np.ndarray:
        key = tuple(float(e) for e in eps)
        if key not in self._cache:
            n = self.pieces[0].gen.n
            u = np.eye(n)
            for piece, pots, plan in zip(self.pieces, self.pots, self.plans):
                qd = deformed_generator(piece.gen, pots, key, self.mode)
                # a scalar shift commutes with everything, so exp(s dt) is applied exactly
                shift = float(np.trace(qd - piece.gen.q).real) / n
                qd[np.diag_indices(n)] -= shift
                u = u @ fast_exp_matrix(qd, plan) * math.exp(shift * (piece.t1 - piece.t0))
            self._cache[key] = u
        return self._cache[key]


def _stencil(f, order: int, e: float) -> np.ndarray:
    if order == 1:
        return (f(e) - f(-e)) / (2 * e)
    if order == 2:
        return (f(e) - 2 * f(0.0) + f(-e)) / e**2
    if order == 3:
        return (f(2 * e) - 2 * f(e) + 2 * f(-e) - f(-2 * e)) / (2 * e**3)
    raise InvalidArgument("moment orders up to 3 are supported")


def _richardson(f, order: int, e: float):
    """Second-order stencil at e and e/2 combined; raises on relative disagreement > 1e-4."""
    d1 = _stencil(f, order, e)
    d2 = _stencil(f, order, e / 2)
    scale = max(float(np.abs(d2).max()), 1e-300)
    disagreement = float(np.abs(d1 - d2).max()) / scale
    if disagreement > RICHARDSON_TOL:
        raise StepInstability(disagreement, e)
    return (4 * d2 - d1) / 3, disagreement


def _eps_scale(ev: _Evaluator, base: float, eps: float | None) -> float:
    if eps is not None:
        return float(eps)
    if ev.norm == 0 or ev.T == 0:
        return base
    return base / (ev.T * ev.norm)


def bridge_moments(schedule, spec: PathFunctionalSpec, T: float | None = None, orders: int = 2,
                   grid: UniformGrid | None = None, eps: float | None = None, mode: str = "tilt",
                   extra_doublings: int = 0) -> MomentSet:
    """Unnormalized bridge moments of I_T up to ``orders`` by differentiating Pexp(L_eps) at 0."""
    if orders not in (1, 2, 3):
        raise InvalidArgument("orders must be 1, 2 or 3")
    scale = STEP_SCALE if orders < 3 else 5e-3
    probe = _Evaluator(schedule, T, [spec], [grid], mode, extra_doublings, 0.0)
    e = _eps_scale(probe, scale, eps)
    ev = _Evaluator(schedule, T, [spec], [grid], mode, extra_doublings, 2 * e)
    prob = ev(0.0)
    if ev.norm == 0:
        z = np.zeros_like(prob)
        return MomentSet(prob=prob, m1=z, m2=z if orders > 1 else None, m3=z if orders > 2 else None)
    out, worst = {}, 0.0
    for k in range(1, orders + 1):
        out[k], dis = _richardson(lambda x: ev(x), k, e)
        worst = max(worst, dis)
    return MomentSet(prob=prob, m1=out[1], m2=out.get(2), m3=out.get(3), eps=e, richardson_error=worst)


def bridge_moments_bivariate(schedule, spec1: PathFunctionalSpec, spec2: PathFunctionalSpec,
                             T: float | None = None, grids=(None, None), eps: float | None = None,
                             mode: str = "tilt", extra_doublings: int = 0) -> MomentSet:
    """Moments of (I1, I2) on bridges: m1, m2, n1, n2 and the mixed m11 (4-point cross stencil)."""
    probe = _Evaluator(schedule, T, [spec1, spec2], list(grids), mode, extra_doublings, 0.0)
    e = _eps_scale(probe, STEP_SCALE, eps)
    ev = _Evaluator(schedule, T, [spec1, spec2], list(grids), mode, extra_doublings, 2 * e)
    prob = ev(0.0, 0.0)
    m1, d_a = _richardson(lambda x: ev(x, 0.0), 1, e)
    m2, d_b = _richardson(lambda x: ev(x, 0.0), 2, e)
    n1, d_c = _richardson(lambda x: ev(0.0, x), 1, e)
    n2, d_d = _richardson(lambda x: ev(0.0, x), 2, e)

    def cross(h):
        return (ev(h, h) - ev(h, -h) - ev(-h, h) + ev(-h, -h)) / (4 * h * h)

    c1, c2 = cross(e), cross(e / 2)
    scale = max(float(np.abs(c2).max()), 1e-300)
    d_e = float(np.abs(c1 - c2).max()) / scale if np.abs(c2).max() > 0 else 0.0
    if d_e > RICHARDSON_TOL:
        raise StepInstability(d_e, e)
    m11 = (4 * c2 - c1) / 3
    return MomentSet(prob=prob, m1=m1, m2=m2, n1=n1, n2=n2, m11=m11, eps=e,
                     richardson_error=max(d_a, d_b, d_c, d_d, d_e))


def dyson_first_order(gen: GeneratorMatrix, V: np.ndarray, T: float, panels: int = 64,
                      extra_doublings: int = 8) -> np.ndarray:
    """int_0^T exp(sL) V exp((T-s)L) ds by composite Simpson (independent first-moment oracle)."""
    if panels % 2:
        panels += 1
    s = np.linspace(0.0, T, panels + 1)
    h = T / panels
    w = np.ones(panels + 1)
    w[1:-1:2], w[2:-1:2] = 4, 2
    plan_cache = {}

    def expm(t):
        if t == 0:
            return np.eye(gen.n)
        if t not in plan_cache:
            plan_cache[t] = fast_exp_matrix(gen.q, plan_fast_exp(gen, t, extra_doublings))
        return plan_cache[t]

    total = np.zeros((gen.n, gen.n))
    for si, wi in zip(s, w):
        total += wi * expm(si) @ V @ expm(T - si)
    return total * h / 3


# ---------------------------------------------------------------- matching

class DistKind(enum.Enum):
    CHI_SQUARE = "chi_square"
    LOGNORMAL = "lognormal"
    PEARSON3 = "pearson3"

    @classmethod
    def parse(cls, v) -> "DistKind":
        if isinstance(v, cls):
            return v
        try:
            return cls(str(v).lower())
        except ValueError:
            raise InvalidArgument(f"unknown distribution {v!r}") from None


@dataclass(frozen=True, slots=True)
class ChiSquareFit:
    a: float
    scale: float

    def raw_moments(self):
        a, s = self.a, self.scale
        return a * s, a * (a + 2) * s * s, a * (a + 2) * (a + 4) * s**3


@dataclass(frozen=True, slots=True)
class LogNormalFit:
    mu: float
    sigma: float

    def raw_moments(self):
        return tuple(math.exp(k * self.mu + 0.5 * k * k * self.sigma**2) for k in (1, 2, 3))


@dataclass(frozen=True, slots=True)
class PearsonFit:
    a: float
    b: float
    p: float

    def raw_moments(self):
        a, b, p = self.a, self.b, self.p
        m = a + b * p
        return m, m * m + b * b * p, m**3 + 3 * b * b * p * m + 2 * b**3 * p


@dataclass(frozen=True, slots=True)
class BiLogNormalFit:
    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    rho: float

    def ratio_moments(self):
        """E[X1/X2] and E[(X1/X2)^2] of the fitted distribution."""
        m, v = self.ratio_params()
        return math.exp(m + 0.5 * v), math.exp(2 * m + 2 * v)

    def ratio_params(self):
        """log(X1/X2) ~ N(m, v)."""
        v = self.sigma1**2 + self.sigma2**2 - 2 * self.rho * self.sigma1 * self.sigma2
        return self.mu1 - self.mu2, max(v, 0.0)


def _variance(m1, m2):
    var = m2 - m1 * m1
    if not var > 0:
        raise DegenerateMoments(f"nonpositive variance m2 - m1^2 = {var:.3e}")
    return var


def match_chi_square(m1: float, m2: float) -> ChiSquareFit:
    if not m1 > 0:
        raise DegenerateMoments("chi-square matching needs m1 > 0")
    a = 2 * m1 * m1 / _variance(m1, m2)
    return ChiSquareFit(a=a, scale=m1 / a)


def match_lognormal(m1: float, m2: float) -> LogNormalFit:
    if not m1 > 0:
        raise DegenerateMoments("lognormal matching needs m1 > 0")
    _variance(m1, m2)
    return LogNormalFit(mu=math.log(m1 * m1 / math.sqrt(m2)), sigma=math.sqrt(math.log(m2 / (m1 * m1))))


def match_pearson3(m1: float, m2: float, m3: float) -> PearsonFit:
    var = _variance(m1, m2)
    skew = m3 + 2 * m1**3 - 3 * m1 * m2
    if skew == 0:
        raise DegenerateMoments("Pearson III matching needs nonzero third central moment")
    return PearsonFit(a=m1 - 2 * var * var / skew, b=skew / (2 * var), p=4 * var**3 / skew**2)


def match_bilognormal(m10: float, m01: float, m20: float, m02: float, m11: float) -> BiLogNormalFit:
    f1, f2 = match_lognormal(m10, m20), match_lognormal(m01, m02)
    if not m11 > 0:
        raise DegenerateMoments("bivariate lognormal matching needs a positive mixed moment")
    if f1.sigma == 0 or f2.sigma == 0:
        raise DegenerateMoments("bivariate lognormal matching needs nondegenerate marginals")
    rho = math.log(m11 / (m10 * m01)) / (f1.sigma * f2.sigma)
    if abs(rho) > 1 + 1e-9:
        raise DegenerateMoments(f"fitted correlation {rho:.6g} outside [-1, 1]")
    return BiLogNormalFit(f1.mu, f2.mu, f1.sigma, f2.sigma, max(-1.0, min(1.0, rho)))


def ratio_moments_closed_form(m10, m01, m20, m02, m11):
    """Ratio moments written directly in the raw moments (cross-check of the fitted form)."""
    first = m10**2 * m02 / (m01**2 * m11)
    second = m10**4 * m02**3 * m20 / (m01**4 * m11**4)
    return first, second


# ---------------------------------------------------------------- capped expectations

def chi_square_cdf(x: float, a: float) -> float:
    return float(gammainc_lower(a / 2, x / 2)) if x > 0 else 0.0


def capped_mean_chi_square(fit: ChiSquareFit, cap: float) -> float:
    """E[min(X, cap)] for X = scale * chi2_a."""
    K = cap / fit.scale
    return fit.scale * (K * (1 - chi_square_cdf(K, fit.a)) + fit.a * chi_square_cdf(K, fit.a + 2))


def capped_sqrt_chi_square(fit: ChiSquareFit, cap: float) -> float:
    """E[min(sqrt X, sqrt cap)] for X = scale * chi2_a."""
    K = cap / fit.scale
    tail = math.sqrt(2) * float(lower_gamma((fit.a + 1) / 2, K / 2)) / math.gamma(fit.a / 2)
    return math.sqrt(fit.scale) * (math.sqrt(K) * (1 - chi_square_cdf(K, fit.a)) + tail)


def capped_mean_lognormal(fit: LogNormalFit, cap: float) -> float:
    mu, s = fit.mu, fit.sigma
    lc = math.log(cap)
    return (math.exp(mu + 0.5 * s * s) * float(norm_cdf((lc - mu - s * s) / s))
            + cap * (1 - float(norm_cdf((lc - mu) / s))))


def capped_sqrt_lognormal(fit: LogNormalFit, cap: float) -> float:
    mu, s = fit.mu, fit.sigma
    lc = math.log(cap)
    return (math.exp((4 * mu + s * s) / 8) * float(norm_cdf((lc - mu - 0.5 * s * s) / s))
            + math.sqrt(cap) * (1 - float(norm_cdf((lc - mu) / s))))


def capped_mean_pearson3(fit: PearsonFit, cap: float) -> float:
    a, b, p = fit.a, fit.b, fit.p
    if b > 0:
        z = (cap - a) / b
        if z <= 0:
            return cap
        P = float(gammainc_lower(p, z))
        return cap + (a + b * p - cap) * P - b * math.exp(p * math.log(z) - z - math.lgamma(p))
    z = (a - cap) / -b
    if z <= 0:
        return a + b * p
    P = float(gammainc_lower(p, z))
    P1 = float(gammainc_lower(p + 1, z))
    return cap * P + a * (1 - P) + b * p * (1 - P1)


def capped_sqrt_pearson3(fit: PearsonFit, cap: float) -> float:
    from .quadrature import integrate

    a, b, p = fit.a, fit.b, fit.p
    if a < 0 and b < 0:
        raise DegenerateMoments("Pearson fit puts mass on negative values")

    def f(g):
        g = np.asarray(g, dtype=float)
        dens = np.exp((p - 1) * np.log(g) - g - math.lgamma(p))
        x = np.maximum(a + b * g, 0.0)
        return np.minimum(np.sqrt(x), math.sqrt(cap)) * dens

    val, _ = integrate(f, 0.0, math.inf, tol=1e-12)
    return val


_CAPPED = {
    DistKind.CHI_SQUARE: (match_chi_square, capped_mean_chi_square, capped_sqrt_chi_square),
    DistKind.LOGNORMAL: (match_lognormal, capped_mean_lognormal, capped_sqrt_lognormal),
    DistKind.PEARSON3: (match_pearson3, capped_mean_pearson3, capped_sqrt_pearson3),
}


# ---------------------------------------------------------------- pricing

@dataclass(frozen=True, slots=True)
class SwapPrice:
    price: float
    excluded_weight: float
    n_bridges: int
    details: dict = field(default_factory=dict)


def instantaneous_variance(gen: GeneratorMatrix, price_map) -> tuple[np.ndarray, np.ndarray]:
    """v(y1,y2) = L(y1,y2) log^2(S(y2)/S(y1)) off the diagonal, and a mask of excluded states.

    States whose row has no outgoing rate are flagged as excluded (infinite variance convention).
    """
    y = state_coordinates(gen)
    S = np.asarray(price_map(y), dtype=float)
    if np.any(~(S > 0)):
        raise InvalidArgument("price map must be positive on the lattice")
    logs = np.log(S)
    v = gen.q * (logs[None, :] - logs[:, None]) ** 2
    v[np.diag_indices(gen.n)] = 0.0
    off = gen.q.copy()
    off[np.diag_indices(gen.n)] = 0.0
    excluded = off.sum(axis=1) == 0
    return v, excluded


def _bridge_values(moments: MomentSet, x0: int, dist: DistKind, cap: float, which: int,
                   rel_tol: float = 1e-10):
    """Per-bridge capped expectations for one starting state; returns (values, weights, excluded)."""
    prob = moments.prob[x0]
    m1 = moments.conditional("m1")[x0]
    m2 = moments.conditional("m2")[x0]
    m3 = moments.conditional("m3")[x0] if (dist is DistKind.PEARSON3) else None
    match, mean_fn, sqrt_fn = _CAPPED[dist]
    fn = mean_fn if which == 1 else sqrt_fn
    vals = np.zeros_like(prob)
    excluded = 0.0
    for y2 in range(len(prob)):
        if prob[y2] <= BRIDGE_FLOOR:
            continue
        a, b = m1[y2], m2[y2]
        if a >= 0 and abs(b - a * a) <= rel_tol * max(a * a, 1e-300):
            # point mass
            vals[y2] = min(a, cap) if which == 1 else math.sqrt(min(a, cap))
            continue
        try:
            fit = match(a, b) if dist is not DistKind.PEARSON3 else match(a, b, m3[y2])
            vals[y2] = fn(fit, cap)
        except DegenerateMoments as exc:
            logger.info("bridge %d -> %d excluded: %s", x0, y2, exc)
            excluded += prob[y2]
            vals[y2] = 0.0
    return vals, prob, excluded


def price_variance_swap(moments: MomentSet, x0: int, SR: float, f: float = 6.2,
                        dist="chi_square") -> SwapPrice:
    """E[min(RV, f SR^2)] - SR^2 aggregated over terminal states with the bridge weights."""
    dist = DistKind.parse(dist)
    if not SR > 0 or not f > 0:
        raise InvalidArgument("swap rate and cap factor must be positive")
    cap = f * SR * SR
    vals, w, excl = _bridge_values(moments, x0, dist, cap, 1)
    return SwapPrice(float(np.dot(w, vals) - SR * SR), float(excl), int((w > BRIDGE_FLOOR).sum()),
                     {"cap": cap, "dist": dist.value})


def price_volatility_swap(moments: MomentSet, x0: int, SR: float, f: float = 6.2,
                          dist="lognormal") -> SwapPrice:
    """E[min(sqrt RV, sqrt(f) SR)] - SR."""
    dist = DistKind.parse(dist)
    if not SR > 0 or not f > 0:
        raise InvalidArgument("swap rate and cap factor must be positive")
    cap = f * SR * SR
    vals, w, excl = _bridge_values(moments, x0, dist, cap, 2)
    return SwapPrice(float(np.dot(w, vals) - SR), float(excl), int((w > BRIDGE_FLOOR).sum()),
                     {"cap": cap, "dist": dist.value})


def capped_ratio_quadrature(fit: BiLogNormalFit, cv_max: float, n_inner: int = 64,
                            n_outer: int = 48) -> float:
    """E[min(X1/X2, CVmax)] = CVmax + E[(X1/X2 - CVmax) 1{X1 < X2 CVmax}] by nested quadrature.

    The outer variable is the standard normal z2 driving log X2, integrated by composite
    Gauss-Legendre (n_outer nodes per panel) on [-12, 12] with panels clustered where the
    cap starts to bind. Given z2, log X1 is normal and is integrated by Gauss-Legendre
    up to log(X2 CVmax).
    """
    gl_x, gl_w = np.polynomial.legendre.leggauss(n_inner)
    go_x, go_w = np.polynomial.legendre.leggauss(n_outer)
    mu1, mu2, s1, s2, rho = fit.mu1, fit.mu2, fit.sigma1, fit.sigma2, fit.rho
    sd = s1 * math.sqrt(max(1 - rho * rho, 0.0))
    lc = math.log(cv_max)
    edges = {-12.0, 12.0}
    slope = s2 - rho * s1
    if abs(slope) > 1e-14:
        # log(X2 CVmax) meets the conditional median of log X1 at z*
        z_star = (mu1 - mu2 - lc) / slope
        width = max(sd, 1e-3 * abs(slope)) / abs(slope)
        for k in (-8, -4, -2, -1, 0, 1, 2, 4, 8):
            z = z_star + k * width
            if -12 < z < 12:
                edges.add(z)
    edges = sorted(edges)
    z2 = np.concatenate([0.5 * (b - a) * go_x + 0.5 * (a + b) for a, b in zip(edges, edges[1:])])
    wz = np.concatenate([0.5 * (b - a) * go_w for a, b in zip(edges, edges[1:])])
    wz = wz * np.exp(-0.5 * z2 * z2) / math.sqrt(2 * math.pi)
    log_x2 = mu2 + s2 * z2
    m = mu1 + rho * s1 * z2
    top = log_x2 + lc
    if sd < 1e-14:
        g = np.minimum(np.exp(m - log_x2) - cv_max, 0.0)
        return cv_max + float(wz @ g)
    lo = m - 12 * sd
    hi = np.minimum(top, m + 12 * sd)
    active = hi > lo
    half = np.where(active, 0.5 * (hi - lo), 0.0)
    w = lo[:, None] + half[:, None] * (gl_x[None, :] + 1)
    dens = np.exp(-0.5 * ((w - m[:, None]) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    inner = half * (((np.exp(w - log_x2[:, None]) - cv_max) * dens) @ gl_w)
    return cv_max + float(wz @ inner)


def capped_ratio_exact(fit: BiLogNormalFit, cv_max: float) -> float:
    """The same expectation using log(X1/X2) ~ N(mu1 - mu2, s1^2 + s2^2 - 2 rho s1 s2)."""
    m, v = fit.ratio_params()
    if v == 0:
        return min(math.exp(m), cv_max)
    return capped_mean_lognormal(LogNormalFit(m, math.sqrt(v)), cv_max)


def price_conditional_variance_swap(moments: MomentSet, x0: int, SR: float, cv_max: float,
                                    n_inner: int = 64, n_outer: int = 48) -> SwapPrice:
    """E[min(I1/I2, CVmax)] - SR^2 with a bivariate lognormal fit per bridge."""
    prob = moments.prob[x0]
    c = {k: moments.conditional(k)[x0] for k in ("m1", "m2", "n1", "n2", "m11")}
    vals = np.zeros_like(prob)
    excluded = 0.0
    cross = []
    for y2 in range(len(prob)):
        if prob[y2] <= BRIDGE_FLOOR:
            continue
        m10, m20, m01, m02, m11 = (c["m1"][y2], c["m2"][y2], c["n1"][y2], c["n2"][y2], c["m11"][y2])
        if not m01 > 1e-12:
            excluded += prob[y2]
            continue
        # second moments from finite differences resolve relative variances only to ~1e-7
        deg1 = abs(m20 - m10 * m10) <= DEGENERATE_RTOL * max(m10 * m10, 1e-300)
        deg2 = abs(m02 - m01 * m01) <= DEGENERATE_RTOL * max(m01 * m01, 1e-300)
        if deg2:
            # occupation time deterministic: the ratio is I1 / const
            t = m01
            if deg1:
                vals[y2] = min(m10 / t, cv_max)
            else:
                try:
                    vals[y2] = capped_mean_lognormal(match_lognormal(m10 / t, m20 / t**2), cv_max)
                except DegenerateMoments:
                    excluded += prob[y2]
            continue
        try:
            fit = match_bilognormal(m10, m01, m20, m02, m11)
        except DegenerateMoments as exc:
            logger.info("bridge %d -> %d excluded: %s", x0, y2, exc)
            excluded += prob[y2]
            continue
        vals[y2] = capped_ratio_quadrature(fit, cv_max, n_inner, n_outer)
        cross.append(abs(vals[y2] - capped_ratio_exact(fit, cv_max)))
    return SwapPrice(float(np.dot(prob, vals) - SR * SR), float(excluded), int((prob > BRIDGE_FLOOR).sum()),
                     {"cv_max": cv_max, "quadrature_vs_exact": max(cross) if cross else 0.0})
