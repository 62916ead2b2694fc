"""Closed-form transition densities and their total mass.

Each density is integrated numerically on its natural domain. The CEV family with
theta = -1/2 is absorbed at the origin, so its mass falls short of one by exactly
the absorption probability.
"""
import math

import numpy as np

from latticeops.acceptance import kernel_normalizations
from latticeops.kernels import CEVSpec, ReflectedWienerSpec, cev_kernel, reflected_wiener_kernel
from latticeops.quadrature import integrate


def main():
    print(f"{'density':20s} {'mass':>18s} {'1 - mass':>10s}")
    for name, m in kernel_normalizations().items():
        print(f"{name:20s} {m:18.15f} {1 - m:10.2e}")

    t, sigma0, y0 = 1.0, 0.3, 1.0
    m = integrate(lambda y: cev_kernel(y, y0, t, CEVSpec(sigma0, -0.5)), 0.0, math.inf, tol=1e-11,
                  breakpoints=[y0])[0]
    absorbed = math.exp(-2 * y0 / (4 * sigma0**2 * t))
    print(f"\nCEV theta=-1/2: mass {m:.12f}, 1 - P(absorbed) {1 - absorbed:.12f}")

    ys = np.linspace(0.05, 3.0, 7)
    gap = np.abs(cev_kernel(ys, y0, t, CEVSpec(sigma0, -1.0))
                 - reflected_wiener_kernel(ys, y0, t, ReflectedWienerSpec(sigma0)))
    print(f"CEV theta=-1 vs reflected Wiener, max pointwise gap: {gap.max():.2e}")


if __name__ == "__main__":
    main()
