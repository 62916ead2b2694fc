"""Closed-form transition kernels used as oracles.

Brownian motion on a periodic lattice via its diagonal Fourier symbol, and
continuum densities for CIR, quadratic-volatility, log-normal, CEV and
reflected Wiener processes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericalFailure, UnsupportedBoundary, UnsupportedParameter
from .lattice import Lattice, brillouin_modes
from .propagation import Propagator, make_propagator
from .special import bessel_log_ive

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- specs

@dataclass(frozen=True, slots=True)
class BrownianPeriodicSpec:
    mu: float
    sigma: float


@dataclass(frozen=True, slots=True)
class CIRSpec:
    lambda0: float
    lambda1: float
    nu0: float

    def __post_init__(self):
        if not self.nu0 > 0:
            raise InvalidArgument("CIR volatility nu0 must be positive")
        if not self.lambda0 > 0:
            raise InvalidArgument("CIR requires 2*lambda0/nu0^2 > 0")

    @property
    def order(self) -> float:
        return 2 * self.lambda0 / self.nu0**2 - 1


@dataclass(frozen=True, slots=True)
class QuadraticSpec:
    sigma0: float
    ybar: float
    ybarbar: float

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise InvalidArgument("sigma0 must be positive")
        if not self.ybar > self.ybarbar:
            raise InvalidArgument("quadratic model needs ybar > ybarbar")


@dataclass(frozen=True, slots=True)
class LogNormalSpec:
    sigma0: float
    ybar: float = 0.0

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise InvalidArgument("sigma0 must be positive")


@dataclass(frozen=True, slots=True)
class CEVSpec:
    sigma0: float
    theta: float
    ybar: float = 0.0

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise InvalidArgument("sigma0 must be positive")
        if self.theta == 0:
            raise UnsupportedParameter("CEV elasticity theta = 0 is degenerate")
        if -0.5 < self.theta < 0:
            raise UnsupportedParameter(
                f"theta={self.theta} in (-1/2, 0) gives a non-integrable density")

    @property
    def order(self) -> float:
        return 1.0 / (2.0 * self.theta)

    def volatility(self, y):
        return self.sigma0 / abs(self.theta) * (np.asarray(y) - self.ybar) ** (1 + self.theta)


@dataclass(frozen=True, slots=True)
class ReflectedWienerSpec:
    sigma0: float
    ybar: float = 0.0

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise InvalidArgument("sigma0 must be positive")


# ---------------------------------------------------------------- lattice kernel

def brownian_fourier_kernel(lat: Lattice, mu: float, sigma: float, T: float,
                            dt: float | None = None) -> Propagator:
    """Exact propagator of the periodic lattice diffusion from its Fourier symbol.

    With ``dt`` given, the time evolution is the discrete scheme
    (1 + dt * l(p))^(T/dt) instead of exp(T * l(p)).
    """
    if not lat.is_periodic:
        raise UnsupportedBoundary("Fourier kernel requires a periodic lattice")
    h = lat.h
    if not sigma**2 / (2 * h * h) > abs(mu) / (2 * h):
        raise InvalidArgument("Courant condition fails for the Fourier kernel")
    n = lat.n_points
    if T == 0:
        return make_propagator(np.eye(n), 0.0, 0.0, True, "fourier_kernel")
    p = brillouin_modes(lat).modes
    ell = -1j * mu * np.sin(h * p) / h + sigma**2 * (np.cos(h * p) - 1) / h**2
    if dt is None:
        evo = np.exp(T * ell)
    else:
        steps = T / dt
        if abs(steps - round(steps)) > 1e-9:
            raise InvalidArgument("T must be an integer multiple of dt")
        evo = (1 + dt * ell) ** int(round(steps))
    d = np.arange(n) * h
    row = (evo[None, :] * np.exp(1j * np.outer(d, p))).sum(axis=1) / n
    if np.abs(row.imag).max() > 1e-12:
        raise NumericalFailure(f"Fourier kernel has imaginary part {np.abs(row.imag).max():.3e}")
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return make_propagator(row.real[idx], 0.0, T, True, "fourier_kernel")


# ---------------------------------------------------------------- continuum kernels

def _positive(name, v):
    v = np.asarray(v, dtype=float)
    if np.any(~(v > 0)):
        raise InvalidArgument(f"{name} must be positive")
    return v


def cir_kernel(x, x0: float, t: float, lambda0: float, lambda1: float, nu0: float):
    """Transition density of the square-root process dx = (lambda0 + lambda1 x) dt + nu0 sqrt(x) dW."""
    spec = CIRSpec(lambda0, lambda1, nu0)
    x = _positive("x", x)
    _positive("x0", x0)
    _positive("t", t)
    q = spec.order
    em1 = math.expm1(lambda1 * t)
    if em1 == 0.0:
        s = nu0**2 * t
        z = 4 * np.sqrt(x * x0) / s
        expo = -2 * (np.sqrt(x) - math.sqrt(x0)) ** 2 / s
        log_p = (q / 2) * np.log(x / x0) + expo - math.log(s / 2) + bessel_log_ive(q, z)
        return np.exp(log_p)
    e = math.exp(lambda1 * t)
    c = 2 * lambda1 / (nu0**2 * em1)
    z = 2 * c * np.sqrt(x * x0 * e)
    expo = -c * (np.sqrt(x) - math.sqrt(x0 * e)) ** 2
    # assembled in logs: the power and Bessel factors overflow separately for large orders
    log_p = math.log(c) + (q / 2) * (np.log(x / x0) - lambda1 * t) + expo + bessel_log_ive(q, z)
    return np.exp(log_p)


def _gauss_pair(a, b, s):
    # exp(-(a^2 + b^2)/(2s)) * sinh(ab/s), written without overflow
    return 0.5 * (np.exp(-(a - b) ** 2 / (2 * s)) - np.exp(-(a + b) ** 2 / (2 * s)))


def quadratic_kernel(y, y0: float, t: float, spec: QuadraticSpec):
    """Density for sigma(y) = sigma0 (y - ybar)(y - ybarbar)/(ybar - ybarbar), y > ybar."""
    yb, ybb, s0 = spec.ybar, spec.ybarbar, spec.sigma0
    y = np.asarray(y, dtype=float)
    if np.any(y <= yb) or y0 <= yb:
        raise InvalidArgument("quadratic kernel is defined for y, y0 > ybar")
    _positive("t", t)
    sig = s0 * (y - yb) * (y - ybb) / (yb - ybb)
    phi = np.log((y - ybb) / (y - yb))
    phi0 = math.log((y0 - ybb) / (y0 - yb))
    s = s0**2 * t
    ratio = np.sqrt((y0 - yb) * (y0 - ybb) / ((y - yb) * (y - ybb)))
    return 2 * math.exp(-s / 8) / (sig * math.sqrt(2 * math.pi * t)) * ratio * _gauss_pair(phi, phi0, s)


def quadratic_double_root_kernel(y, y0: float, t: float, sigma0: float, ybar: float):
    """Density for sigma(y) = sigma0 (y - ybar)^2, y > ybar."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= ybar) or y0 <= ybar:
        raise InvalidArgument("double-root kernel is defined for y, y0 > ybar")
    _positive("t", t)
    s = sigma0**2 * t
    a, b = 1 / (y - ybar), 1 / (y0 - ybar)
    pref = (y0 - ybar) / (sigma0 * math.sqrt(2 * math.pi * t) * (y - ybar) ** 3)
    return pref * (np.exp(-(a - b) ** 2 / (2 * s)) - np.exp(-(a + b) ** 2 / (2 * s)))


def lognormal_kernel(y, y0: float, t: float, spec: LogNormalSpec):
    """Driftless log-normal density for sigma(y) = sigma0 (y - ybar)."""
    y = np.asarray(y, dtype=float)
    yb, s0 = spec.ybar, spec.sigma0
    if np.any(y <= yb) or y0 <= yb:
        raise InvalidArgument("log-normal kernel is defined for y, y0 > ybar")
    _positive("t", t)
    s = s0**2 * t
    arg = np.log((y0 - yb) / (y - yb)) - s / 2
    return np.exp(-arg**2 / (2 * s)) / ((y - yb) * s0 * math.sqrt(2 * math.pi * t))


def cev_kernel(y, y0: float, t: float, spec: CEVSpec):
    """CEV density for sigma(y) = (sigma0/|theta|) (y - ybar)^(1 + theta), y > ybar."""
    y = np.asarray(y, dtype=float)
    yb, th, s0 = spec.ybar, spec.theta, spec.sigma0
    if np.any(y <= yb) or y0 <= yb:
        raise InvalidArgument("CEV kernel is defined for y, y0 > ybar")
    _positive("t", t)
    s = s0**2 * t
    a = (y - yb) ** (-2 * th)
    b = (y0 - yb) ** (-2 * th)
    z = np.sqrt(a * b) / s
    log_pref = math.log(abs(th) / s) + 0.5 * math.log(y0 - yb) - (1.5 + 2 * th) * np.log(y - yb)
    return np.exp(log_pref - (np.sqrt(a) - np.sqrt(b)) ** 2 / (2 * s) + bessel_log_ive(spec.order, z))


def reflected_wiener_kernel(y, y0: float, t: float, spec: ReflectedWienerSpec):
    """Brownian motion with volatility sigma0 reflected at ybar."""
    y = np.asarray(y, dtype=float)
    yb, s0 = spec.ybar, spec.sigma0
    if np.any(y < yb) or y0 < yb:
        raise InvalidArgument("reflected Wiener kernel is defined for y, y0 >= ybar")
    _positive("t", t)
    s = s0**2 * t
    return (np.exp(-(y - y0) ** 2 / (2 * s)) + np.exp(-(y + y0 - 2 * yb) ** 2 / (2 * s))) / (
        s0 * math.sqrt(2 * math.pi * t))
