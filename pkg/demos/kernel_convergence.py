"""Refine a periodic Brownian lattice and watch the kernel converge.

Prints the sup-norm gap between successive refinements of the exact (Fourier)
kernel, the gap between the exact kernel and fast exponentiation at the same
lattice, and how extra doublings shrink the latter at a fixed lattice.
"""
import numpy as np

from latticeops.acceptance import fitted_rate
from latticeops.generator import CoefficientField, build_diffusion_generator
from latticeops.kernels import brownian_fourier_kernel
from latticeops.lattice import build_periodic_lattice
from latticeops.propagation import fast_exponentiate

MU, SIGMA, T = 0.05, 0.2, 1.0


def scaled_rows(n, extra=0):
    lat = build_periodic_lattice(0.0, 1.0, n)
    exact = brownian_fourier_kernel(lat, MU, SIGMA, T).u[0] / lat.h
    gen = build_diffusion_generator(lat, CoefficientField.constant(MU, SIGMA))
    fast = fast_exponentiate(gen, T, extra_doublings=extra).u[0] / lat.h
    return lat.h, exact, fast


def main():
    levels = [64, 128, 256, 512]
    rows = [scaled_rows(n) for n in levels]
    print(f"{'n':>5} {'h':>10} {'refinement gap':>15} {'exact vs fast':>14}")
    gaps = []
    for k, (n, (h, exact, fast)) in enumerate(zip(levels, rows)):
        gap = np.abs(exact - rows[k + 1][1][::2]).max() if k + 1 < len(rows) else np.nan
        gaps.append(gap)
        print(f"{n:5d} {h:10.6f} {gap:15.3e} {np.abs(exact - fast).max():14.3e}")
    hs = [r[0] for r in rows[:-1]]
    print(f"fitted refinement rate: {fitted_rate(hs, gaps[:-1]):.3f}")

    print("\nfixed n=128, extra doublings beyond the stability minimum:")
    for extra in (0, 2, 4, 8, 12):
        _, exact, fast = scaled_rows(128, extra)
        print(f"  +{extra:2d}: sup gap of h^-1 U = {np.abs(exact - fast).max():.3e}")


if __name__ == "__main__":
    main()
