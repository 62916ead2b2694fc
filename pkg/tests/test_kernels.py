import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latticeops.errors import InvalidArgument, UnsupportedBoundary, UnsupportedParameter
from latticeops.kernels import (
    CEVSpec,
    LogNormalSpec,
    QuadraticSpec,
    ReflectedWienerSpec,
    brownian_fourier_kernel,
    cev_kernel,
    cir_kernel,
    lognormal_kernel,
    quadratic_double_root_kernel,
    quadratic_kernel,
    reflected_wiener_kernel,
)
from latticeops.lattice import build_lattice, build_periodic_lattice
from latticeops.quadrature import integrate


def test_fourier_identity_at_zero():
    lat = build_periodic_lattice(0, 1, 16)
    np.testing.assert_array_equal(brownian_fourier_kernel(lat, 0.1, 0.3, 0.0).u, np.eye(16))


def test_fourier_symmetric_without_drift():
    lat = build_periodic_lattice(0, 1, 32)
    u = brownian_fourier_kernel(lat, 0.0, 0.3, 0.7).u
    np.testing.assert_allclose(u, u.T, atol=1e-15)


def test_fourier_requires_periodic():
    with pytest.raises(UnsupportedBoundary):
        brownian_fourier_kernel(build_lattice(0, 1, 16, "reflecting"), 0.0, 0.3, 1.0)


def test_fourier_discrete_scheme_semigroup():
    lat = build_periodic_lattice(0, 1, 16)
    a = brownian_fourier_kernel(lat, 0.05, 0.3, 0.5, dt=0.01).u
    b = brownian_fourier_kernel(lat, 0.05, 0.3, 1.0, dt=0.01).u
    np.testing.assert_allclose(a @ a, b, atol=1e-13)


def test_fourier_chapman_kolmogorov():
    lat = build_periodic_lattice(0, 1, 32)
    a = brownian_fourier_kernel(lat, 0.05, 0.3, 0.4).u
    b = brownian_fourier_kernel(lat, 0.05, 0.3, 0.8).u
    np.testing.assert_allclose(a @ a, b, atol=2e-5)


@pytest.mark.parametrize("lam1", [1e-6, -1e-6])
def test_cir_zero_mean_reversion_limit(lam1):
    x = np.array([0.02, 0.05, 0.1, 0.2])
    a = cir_kernel(x, 0.07, 1.0, 0.03, 0.0, 0.2)
    b = cir_kernel(x, 0.07, 1.0, 0.03, lam1, 0.2)
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)


def test_cir_against_noncentral_chi2():
    from scipy.stats import ncx2
    lam0, lam1, nu0, x0, t = 0.04, -0.5, 0.3, 0.06, 0.8
    e = math.exp(lam1 * t)
    c = 2 * lam1 / (nu0**2 * (e - 1))
    x = np.linspace(0.005, 0.3, 13)
    ref = 2 * c * ncx2.pdf(2 * c * x, 4 * lam0 / nu0**2, 2 * c * x0 * e)
    np.testing.assert_allclose(cir_kernel(x, x0, t, lam0, lam1, nu0), ref, rtol=1e-9)


def test_cir_normalizes():
    val, _ = integrate(lambda x: cir_kernel(x, 0.05, 1.0, 0.04, -0.3, 0.2), 1e-12, np.inf, tol=1e-9)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_lognormal_against_scipy():
    from scipy.stats import lognorm
    s0, t, y0 = 0.3, 1.5, 1.2
    y = np.linspace(0.2, 4, 11)
    s = s0 * math.sqrt(t)
    ref = lognorm.pdf(y, s, scale=y0 * math.exp(-s * s / 2))
    np.testing.assert_allclose(lognormal_kernel(y, y0, t, LogNormalSpec(s0)), ref, rtol=1e-12)


def test_lognormal_is_martingale():
    spec = LogNormalSpec(0.4, ybar=0.5)
    m, _ = integrate(lambda y: y * lognormal_kernel(y, 1.3, 1.0, spec), 0.5 + 1e-12, np.inf, tol=1e-10)
    assert m == pytest.approx(1.3, abs=1e-6)


def test_reflected_wiener_against_scipy():
    from scipy.stats import norm
    y = np.linspace(0, 3, 13)
    ref = norm.pdf(y, 0.7, 0.5) + norm.pdf(y, -0.7, 0.5)
    np.testing.assert_allclose(reflected_wiener_kernel(y, 0.7, 1.0, ReflectedWienerSpec(0.5)), ref, rtol=1e-13)


def test_quadratic_double_root_limit():
    y = np.array([1.1, 1.3, 1.7, 2.5])
    a = quadratic_double_root_kernel(y, 1.4, 0.5, 0.6, 1.0)
    # sigma0 (y - ybar)(y - ybarbar)/(ybar - ybarbar) tends to 0.6 (y - ybar)^2 only if sigma0 scales with the gap
    gaps = []
    for eps in (1e-6, 1e-7):
        b = quadratic_kernel(y, 1.4, 0.5, QuadraticSpec(0.6 * eps, 1.0, 1.0 - eps))
        gaps.append(np.abs(b - a).max())
    # the approach is first order in the root gap
    assert gaps[1] < 1e-5
    assert gaps[1] == pytest.approx(gaps[0] / 10, rel=0.05)


def test_quadratic_domain():
    with pytest.raises(InvalidArgument):
        quadratic_kernel(0.5, 1.5, 1.0, QuadraticSpec(0.3, 1.0, 0.0))


@pytest.mark.parametrize("theta", [-0.25, -0.01, 0.0])
def test_cev_unsupported_theta(theta):
    with pytest.raises(UnsupportedParameter):
        CEVSpec(0.3, theta)


def test_cev_minus_half_absorbs_like_feller():
    # theta = -1/2 is dy = 2 sigma0 sqrt(y) dW, absorbed at 0 with probability exp(-2 y0 / (4 sigma0^2 t))
    s0, y0, t = 0.3, 1.0, 1.0
    val, _ = integrate(lambda y: cev_kernel(y, y0, t, CEVSpec(s0, -0.5)), 1e-12, np.inf, tol=1e-11)
    assert val == pytest.approx(1 - math.exp(-2 * y0 / (4 * s0**2 * t)), abs=1e-8)


@pytest.mark.parametrize("kernel,args,lo", [
    (cir_kernel, (0.05, 1.0, 0.04, -0.3, 0.2), 0.0),
    (quadratic_kernel, (1.5, 0.7, QuadraticSpec(0.4, 1.0, 0.2)), 1.0),
    (quadratic_double_root_kernel, (1.5, 0.7, 0.4, 1.0), 1.0),
    (lognormal_kernel, (1.0, 1.0, LogNormalSpec(0.3)), 0.0),
    (cev_kernel, (1.0, 1.0, CEVSpec(0.3, 0.5)), 0.0),
    (cev_kernel, (1.0, 1.0, CEVSpec(0.3, -1.0)), 0.0),
    (reflected_wiener_kernel, (0.3, 1.0, ReflectedWienerSpec(0.5)), 0.0),
])
def test_normalization(kernel, args, lo):
    val, _ = integrate(lambda y: kernel(y, *args), lo + 1e-12, np.inf, tol=1e-9)
    assert val == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.05, 2.0),
       st.floats(0.05, 5.0), st.floats(-1.0, 1.0))
def test_kernels_nonnegative(sig, y0, t, lam0, y, theta):
    ys = np.array([y, y + 0.5])
    assert np.all(lognormal_kernel(ys, y0, t, LogNormalSpec(sig)) >= 0)
    assert np.all(reflected_wiener_kernel(ys, y0, t, ReflectedWienerSpec(sig)) >= 0)
    assert np.all(cir_kernel(ys, y0, t, lam0, theta, sig) >= 0)
    assert np.all(quadratic_kernel(ys + 1, y0 + 1, t, QuadraticSpec(sig, 0.9, 0.1)) >= 0)
    if not (-0.5 < theta < 0) and theta != 0:
        assert np.all(cev_kernel(ys, y0, t, CEVSpec(sig, theta)) >= 0)


def _ck_check(kernel, y0, s, t, lo, hi, n=4001):
    # int p(y0 -> z, s) p(z -> y, t) dz = p(y0 -> y, s + t) by Simpson on a fine grid
    z = np.linspace(lo, hi, n)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    w *= (z[1] - z[0]) / 3
    ys = np.linspace(lo + 0.1 * (hi - lo), lo + 0.6 * (hi - lo), 5)
    left = kernel(z, y0, s)
    conv = np.array([np.sum(w * left * np.array([kernel(yy, zz, t) for zz in z])) for yy in ys])
    return np.abs(conv - kernel(ys, y0, s + t)).max()


def test_chapman_kolmogorov_lognormal():
    spec = LogNormalSpec(0.3)
    assert _ck_check(lambda y, y0, t: lognormal_kernel(y, y0, t, spec), 1.0, 0.4, 0.6, 1e-3, 6.0) < 2e-5


def test_chapman_kolmogorov_quadratic():
    spec = QuadraticSpec(0.3, 1.0, 0.2)
    assert _ck_check(lambda y, y0, t: quadratic_kernel(y, y0, t, spec), 1.6, 0.4, 0.6, 1.0 + 1e-4, 6.0) < 2e-5


def test_chapman_kolmogorov_reflected():
    spec = ReflectedWienerSpec(0.5)
    assert _ck_check(lambda y, y0, t: reflected_wiener_kernel(y, y0, t, spec), 0.4, 0.3, 0.5, 0.0, 5.0) < 2e-5


def test_kernels_nonnegative_bulk(rng):
    n = 10_000
    sig = rng.uniform(0.05, 1.0, n)
    y0 = rng.uniform(0.1, 3.0, n)
    t = rng.uniform(0.05, 3.0, n)
    y = rng.uniform(0.01, 6.0, n)
    lam0 = rng.uniform(0.01, 2.0, n)
    lam1 = rng.uniform(-1.0, 1.0, n)
    theta = rng.choice([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0], n)
    vals = []
    for i in range(n):
        vals.append(cir_kernel(y[i], y0[i], t[i], lam0[i], lam1[i], sig[i]))
        vals.append(lognormal_kernel(y[i], y0[i], t[i], LogNormalSpec(sig[i])))
        vals.append(quadratic_kernel(y[i] + 1, y0[i] + 1, t[i], QuadraticSpec(sig[i], 0.9, 0.1)))
        vals.append(quadratic_double_root_kernel(y[i] + 1, y0[i] + 1, t[i], sig[i], 0.9))
        vals.append(cev_kernel(y[i], y0[i], t[i], CEVSpec(sig[i], theta[i])))
        vals.append(reflected_wiener_kernel(y[i], y0[i], t[i], ReflectedWienerSpec(sig[i])))
    vals = np.array(vals, dtype=float)
    assert np.all(np.isfinite(vals)) and np.all(vals >= 0)
