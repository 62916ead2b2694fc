"""Special functions needed by the closed-form kernels and capped expectations.

Modified Bessel I_nu (power series plus Hankel asymptotics, with an
exponentially scaled variant) and the regularized incomplete gamma
functions (series plus continued fraction).
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgument

SERIES_MAX_Z = 20.0
_EPS = 1e-17


def _log_series_start(nu: float, z: np.ndarray) -> np.ndarray:
    # log of (z/2)^nu / Gamma(nu + 1)
    try:
        lg = math.lgamma(nu + 1.0)
    except OverflowError:
        # nu near the double range: the leading term is exp(-inf) for every representable z
        return np.full(np.shape(z), -np.inf)
    with np.errstate(divide="ignore"):
        return nu * np.log(z / 2.0) - lg


def _log_ive_series(nu: float, z: np.ndarray) -> np.ndarray:
    """log(exp(-z) I_nu(z)) by the power series; all terms are positive for nu > -1.

    Terms are kept relative to a per-element log scale so that a leading
    term below the double range does not zero the whole sum.
    """
    out = np.full_like(z, -np.inf)
    pos = z > 0
    if not np.any(pos):
        return out
    zp = z[pos]
    log_scale = _log_series_start(nu, zp) - zp
    term = np.ones_like(zp)
    total = term.copy()
    q = (zp / 2.0) ** 2
    k = 0
    # the terms peak near k ~ z/2; stop once they are negligible past the peak
    kmax = int(np.max(zp)) + 60
    while k < kmax:
        k += 1
        term = term * q / (k * (k + nu))
        total += term
        big = total > 1e200
        if np.any(big):
            term[big] *= 1e-200
            total[big] *= 1e-200
            log_scale[big] += 200 * math.log(10.0)
        if k > 0.5 * np.max(zp) + 2 and np.all(term <= _EPS * total):
            break
    out[pos] = np.log(total) + log_scale
    return out


def _ive_hankel(nu: float, z: np.ndarray) -> np.ndarray:
    """exp(-z) I_nu(z) from the large-argument expansion, truncated at its smallest term."""
    mu = 4.0 * nu * nu
    total = np.ones_like(z)
    term = np.ones_like(z)
    prev = np.full_like(z, np.inf)
    active = np.ones(z.shape, dtype=bool)
    for k in range(1, 80):
        new = term * (-(mu - (2 * k - 1) ** 2)) / (k * 8.0 * z)
        # asymptotic series: stop where terms start growing
        grow = np.abs(new) >= np.abs(term)
        active &= ~grow
        if not np.any(active):
            break
        term = np.where(active, new, term)
        total = np.where(active, total + new, total)
        if np.all(np.abs(new[active]) <= 1e-17 * np.abs(total[active])):
            break
    return total / np.sqrt(2.0 * np.pi * z)


def _check_order(nu: float, z):
    nu = float(nu)
    if nu < -1.0:
        raise InvalidArgument(f"order must be >= -1, got {nu}")
    if nu == -1.0:
        nu = 1.0  # I_{-1} = I_1
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0) or np.any(np.isnan(z_arr)):
        raise InvalidArgument("argument must be nonnegative")
    return nu, z_arr


def bessel_log_ive(nu: float, z) -> np.ndarray:
    """log(exp(-z) I_nu(z)) for nu >= -1, z >= 0, without underflow."""
    nu, z_arr = _check_order(nu, z)
    scalar = z_arr.ndim == 0
    z_arr = np.atleast_1d(z_arr)
    out = np.empty_like(z_arr)
    zero = z_arr == 0
    with np.errstate(divide="ignore"):
        out[zero] = 0.0 if nu == 0 else (np.inf if nu < 0 else -np.inf)
    big = (z_arr > SERIES_MAX_Z) & (4 * nu * nu <= z_arr)
    small = ~zero & ~big
    if np.any(small):
        out[small] = _log_ive_series(nu, z_arr[small])
    if np.any(big):
        out[big] = np.log(_ive_hankel(nu, z_arr[big]))
    return out[0] if scalar else out


def bessel_ive(nu: float, z) -> np.ndarray:
    """Exponentially scaled modified Bessel function exp(-z) I_nu(z), nu >= -1, z >= 0."""
    with np.errstate(under="ignore"):
        return np.exp(bessel_log_ive(nu, z))


def bessel_i(nu: float, z) -> np.ndarray:
    """Modified Bessel function of the first kind I_nu(z)."""
    z_arr = np.asarray(z, dtype=float)
    with np.errstate(over="ignore"):
        return bessel_ive(nu, z_arr) * np.exp(z_arr)


# ---------------------------------------------------------------- incomplete gamma

_GAMMA_TOL = 1e-15
_GAMMA_MAXIT = 10000


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by the series, x < a + 1
    ap, s, d = a, 1.0 / a, 1.0 / a
    for _ in range(_GAMMA_MAXIT):
        ap += 1.0
        d *= x / ap
        s += d
        if abs(d) < abs(s) * _GAMMA_TOL:
            break
    return s * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz continued fraction, x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAXIT):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_TOL:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def _gammainc_scalar(a: float, x: float) -> tuple[float, float]:
    if not a > 0:
        raise InvalidArgument(f"shape parameter must be positive, got {a}")
    if x < 0 or math.isnan(x):
        raise InvalidArgument(f"argument must be nonnegative, got {x}")
    if x == 0:
        return 0.0, 1.0
    if math.isinf(x):
        return 1.0, 0.0
    if x < a + 1.0:
        p = _gamma_series(a, x)
        return p, 1.0 - p
    q = _gamma_cf(a, x)
    return 1.0 - q, q


def gammainc_lower(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    f = np.vectorize(lambda aa, xx: _gammainc_scalar(float(aa), float(xx))[0], otypes=[float])
    out = f(a, x)
    return float(out) if np.ndim(out) == 0 else out


def gammainc_upper(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    f = np.vectorize(lambda aa, xx: _gammainc_scalar(float(aa), float(xx))[1], otypes=[float])
    out = f(a, x)
    return float(out) if np.ndim(out) == 0 else out


def lower_gamma(a, x):
    """Unregularized lower incomplete gamma function gamma(a, x)."""
    return gammainc_lower(a, x) * np.exp(np.vectorize(math.lgamma)(a))


def norm_cdf(x):
    """Standard normal distribution function."""
    f = np.vectorize(lambda v: 0.5 * math.erfc(-v / math.sqrt(2.0)), otypes=[float])
    out = f(x)
    return float(out) if np.ndim(out) == 0 else out
