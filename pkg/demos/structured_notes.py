"""Snowball and soft-call notes by backward induction on a lifted lattice.

The coupon (snowball) or the recent barrier history (soft call) is carried as a
second index k; each period applies the lattice propagator to all columns at once
and then relabels (y, k) through a permutation. On a small chain the result is
checked against brute-force path enumeration.
"""
import numpy as np

from latticeops import acceptance
from latticeops.blocks import (InductionHooks, backward_induct, snowball_permutation, softcall_permutation,
                               window_popcount)
from latticeops.generator import CoefficientField, build_diffusion_generator
from latticeops.lattice import build_lattice
from latticeops.propagation import fast_exponentiate


def snowball(props, x, f=0.5, dC=0.0025, K=32):
    # next coupon = f * previous coupon + max(1% - 2% * log price, 0), on a grid of dC
    phi = lambda y: np.maximum(0.01 - 0.02 * np.asarray(y), 0.0)
    perm = snowball_permutation(f, dC, phi, K, x)
    coupons = dC * np.arange(K)
    hooks = InductionHooks(cashflows=lambda i, v: np.broadcast_to(coupons, v.shape) * (i > 0))
    v = backward_induct(props, [perm] * len(props), np.ones((len(x), K)), hooks=hooks)
    return v, perm.clamped


def soft_call(props, x, N=5, m=3, barrier=0.2, call=1.0, redemption=1.05, callable_=True):
    perm = softcall_permutation(lambda y: (np.asarray(y) >= barrier).astype(int), N, x)
    K = 2**N
    hit = window_popcount(K) >= m
    events = None
    if callable_:
        events = lambda i, v: v if i == 0 else np.where(hit[None, :], call, v)
    return backward_induct(props, [perm] * len(props), np.full((len(x), K), redemption),
                           hooks=InductionHooks(events=events))


def main():
    lat = build_lattice(-0.5, 1.0, 21, "reflecting")
    x = lat.points
    gen = build_diffusion_generator(lat, CoefficientField.constant(0.0, 0.2))
    props = [fast_exponentiate(gen, 0.25)] * 8
    v, clamped = snowball(props, x)
    print(f"snowball, 8 quarterly coupons, start at x=0: {v[10, 0]:.6f} (clamped targets {clamped})")

    gen = build_diffusion_generator(lat, CoefficientField.constant(0.0, 0.3))
    props = [fast_exponentiate(gen, 0.05)] * 20
    noncall = soft_call(props, x, callable_=False)[10, 0]
    print(f"soft call, 3 of 5 observations above 0.2: {soft_call(props, x)[10, 0]:.6f} "
          f"(without the call feature {noncall:.6f})")
    for m in range(1, 6):
        print(f"  trigger {m} of 5: {soft_call(props, x, m=m)[10, 0]:.6f}")

    toy = acceptance.block_toy(3)
    snow, _ = acceptance.snowball_value(toy)
    err = np.abs(snow - acceptance.snowball_enumeration(toy)).max()
    toy5 = acceptance.block_toy(acceptance.SOFTCALL["periods"])
    err2 = np.abs(acceptance.softcall_value(toy5) - acceptance.softcall_enumeration(toy5)).max()
    print(f"\n4-state checks against path enumeration: snowball {err:.1e}, soft call {err2:.1e}")


if __name__ == "__main__":
    main()
