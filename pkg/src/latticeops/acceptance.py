"""Acceptance suite shared by the test-suite and the ``engine SelfTest`` command.

Each criterion returns a CriterionResult; nothing here loosens a tolerance to
force a pass. Criterion 3 (stochasticity audit) must run last because it
inspects every propagator built by the others.
"""
from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import propagation
from .abelian import (PathFunctionalSpec, UniformGrid, brute_force_lifted, bridge_distribution,
                      build_nonresonant_ladder, ladder_condition_number)
from .blocks import (InductionHooks, PermutationMap, backward_induct, snowball_permutation,
                     softcall_permutation, window_popcount, round_half_away)
from .conditioning import (ConditioningTree, JointConditioner, build_factor_bundle, correlate_factors,
                           factor_correlation, path_kernel)
from .generator import CoefficientField, build_diffusion_generator, generator_moments, girsanov_drift_change
from .kernels import (CEVSpec, LogNormalSpec, QuadraticSpec, ReflectedWienerSpec, brownian_fourier_kernel,
                      cev_kernel, cir_kernel, lognormal_kernel, quadratic_kernel, reflected_wiener_kernel)
from .lattice import Boundary, build_lattice, build_periodic_lattice
from .moments import bridge_moments, match_chi_square, match_lognormal, match_pearson3
from .propagation import fast_exp_matrix, fast_exponentiate, plan_fast_exp
from .quadrature import integrate

logger = logging.getLogger(__name__)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"[{status}] criterion {self.number:2d} {self.title}: {shown} ({self.seconds:.2f}s)"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        budget = res.metrics.pop("_budget", None)
        if budget is not None:
            res.metrics["runtime_budget_s"] = budget
            res.passed = res.passed and res.seconds < budget
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def fitted_rate(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(np.asarray(h, float)), np.log(np.asarray(err, float)), 1)[0])


# ---------------------------------------------------------------- 1, 2: Brownian kernels

BROWNIAN = dict(mu=0.05, sigma=0.2, period=1.0, T=1.0, levels=(64, 128, 256, 512))


def _scaled_row(n, fast: bool, extra: int = 0):
    p = BROWNIAN
    lat = build_periodic_lattice(0.0, p["period"], n)
    if not fast:
        return lat, brownian_fourier_kernel(lat, p["mu"], p["sigma"], p["T"]).u[0] / lat.h
    gen = build_diffusion_generator(lat, CoefficientField.constant(p["mu"], p["sigma"]))
    return lat, fast_exponentiate(gen, p["T"], extra_doublings=extra).u[0] / lat.h


def refinement_study(levels=BROWNIAN["levels"], fast: bool = False):
    """Sup-norm differences of h^-1 U between successive nested periodic lattices."""
    rows, hs = [], []
    for n in levels:
        lat, r = _scaled_row(n, fast)
        rows.append(r)
        hs.append(lat.h)
    diffs = [float(np.abs(rows[k] - rows[k + 1][::2]).max()) for k in range(len(levels) - 1)]
    return hs[:-1], diffs


@_timed
def criterion_1() -> CriterionResult:
    h, d = refinement_study()
    rate = fitted_rate(h, d)
    return CriterionResult(1, "Brownian kernel O(h^2) convergence", 1.7 <= rate <= 2.3,
                           {"sup_diffs": d, "rate": rate, "_budget": 30.0})


@_timed
def criterion_2() -> CriterionResult:
    errs, hs = [], []
    for n in BROWNIAN["levels"]:
        lat, exact = _scaled_row(n, fast=False)
        _, fast = _scaled_row(n, fast=True)
        errs.append(float(np.abs(exact - fast).max()))
        hs.append(lat.h)
    rate = fitted_rate(hs, errs)
    lat = build_periodic_lattice(0.0, BROWNIAN["period"], 128)
    exact = brownian_fourier_kernel(lat, BROWNIAN["mu"], BROWNIAN["sigma"], BROWNIAN["T"]).u
    gen = build_diffusion_generator(lat, CoefficientField.constant(BROWNIAN["mu"], BROWNIAN["sigma"]))
    fast4 = fast_exponentiate(gen, BROWNIAN["T"], extra_doublings=4).u
    gap = float(np.abs(exact - fast4).max())
    return CriterionResult(2, "fast exponentiation agreement",
                           1.7 <= rate <= 2.3 and gap <= 1e-9,
                           {"scaled_errors": errs, "rate": rate, "n128_plus4_doublings_gap": gap})


# ---------------------------------------------------------------- 3: stochasticity audit

@_timed
def criterion_3(audit=None) -> CriterionResult:
    audit = propagation.AUDIT if audit is None else audit
    checks, violations = audit.snapshot()
    return CriterionResult(3, "stochasticity audit", checks > 0 and violations == 0,
                           {"propagators_checked": checks, "violations": violations})


# ---------------------------------------------------------------- 4, 5: Abelian lifting

def abelian_toy():
    """8-state log-price chain with a realized-variance functional on 16 bins."""
    lat = build_lattice(-0.35, 0.7, 8, Boundary.REFLECTING)
    gen = build_diffusion_generator(lat, CoefficientField.constant(0.0, 0.3))
    spec = PathFunctionalSpec.realized_variance(np.exp)
    grid = UniformGrid(0.01, 16)
    return gen, spec, grid, 0.25, 4


@_timed
def criterion_4() -> CriterionResult:
    gen, spec, grid, T, extra = abelian_toy()
    fourier = bridge_distribution(gen, spec, grid, T, extra_doublings=extra)
    brute = brute_force_lifted(gen, spec, grid, T, extra_doublings=extra)
    diff = float(np.abs(fourier.joint - brute.joint).max())
    return CriterionResult(4, "Abelian block-diagonalization equivalence", diff <= 1e-8,
                           {"max_abs_diff": diff, "spill": fourier.spill, "_budget": 10.0})


@_timed
def criterion_5() -> CriterionResult:
    gen, spec, grid, T, extra = abelian_toy()
    brute = brute_force_lifted(gen, spec, grid, T, extra_doublings=extra)
    vals = grid.values
    P = brute.joint.sum(-1)
    ref1 = (brute.joint * vals).sum(-1)
    ref2 = (brute.joint * vals**2).sum(-1)
    ms = bridge_moments(gen, spec, T, orders=2, grid=grid, extra_doublings=extra)
    mask = P > 1e-6
    rel = []
    for mine, ref in ((ms.m1, ref1), (ms.m2, ref2)):
        c_mine = mine[mask] / P[mask]
        c_ref = ref[mask] / P[mask]
        rel.append(float((np.abs(c_mine - c_ref) / np.abs(c_ref)).max()))
    return CriterionResult(5, "Dyson moment oracle", max(rel) <= 1e-5,
                           {"rel_err_m1": rel[0], "rel_err_m2": rel[1], "bridges": int(mask.sum())})


# ---------------------------------------------------------------- 6: matchers

@_timed
def criterion_6() -> CriterionResult:
    chi = match_chi_square(1.0, 2.0)
    ln = match_lognormal(1.0, math.e)
    pe = match_pearson3(2.0, 8.0, 48.0)
    errs = [abs(chi.a - 2), abs(chi.scale - 0.5), abs(ln.mu + 0.5), abs(ln.sigma**2 - 1),
            abs(pe.a), abs(pe.b - 2), abs(pe.p - 1)]
    return CriterionResult(6, "moment-matching inversions", max(errs) <= 1e-12, {"max_err": max(errs)})


# ---------------------------------------------------------------- 7: Girsanov

GIRSANOV = dict(mu=0.05, sigma=0.2, mu_bar=0.15, x0=-1.0, L=2.0, levels=(33, 65, 129, 257))


def girsanov_errors(levels=GIRSANOV["levels"]):
    g = GIRSANOV
    hs, errs = [], []
    for n in levels:
        lat = build_lattice(g["x0"], g["L"], n, Boundary.ABSORBING)
        coeff = CoefficientField.constant(g["mu"], g["sigma"])
        gen = build_diffusion_generator(lat, coeff)
        new, _ = girsanov_drift_change(gen, coeff, lambda x, t: np.full_like(x, g["mu_bar"]))
        m1, _ = generator_moments(new)
        hs.append(lat.h)
        errs.append(float(np.abs(m1[lat.interior_mask()] - g["mu_bar"]).max()))
    return hs, errs


@_timed
def criterion_7() -> CriterionResult:
    hs, errs = girsanov_errors()
    ratios = [errs[k] / errs[k + 1] for k in range(len(errs) - 1)]
    ok = all(1.6 <= r <= 2.4 for r in ratios)
    return CriterionResult(7, "Girsanov drift consistency (first order)", ok,
                           {"drift_errors": errs, "ratios": ratios, "rate": fitted_rate(hs, errs)})


# ---------------------------------------------------------------- 8: analytic kernels

def _mass(f, lo, hi=math.inf, breakpoints=None):
    return integrate(f, lo, hi, tol=1e-11, breakpoints=breakpoints)[0]


def kernel_normalizations() -> dict:
    t = 1.0
    out = {}
    for l1 in (0.0, -0.5):
        out[f"cir_l1={l1}"] = _mass(lambda x, l1=l1: cir_kernel(x, 1.0, t, 2.0, l1, 2.0), 0.0, math.inf,
                                    [1.0])
    out["lognormal"] = _mass(lambda y: lognormal_kernel(y, 1.0, t, LogNormalSpec(0.3)), 0.0,
                             math.inf, [1.0])
    qs = QuadraticSpec(0.3, 0.5, -1.0)
    out["quadratic"] = _mass(lambda y: quadratic_kernel(y, 1.0, t, qs), 0.5, math.inf, [1.0])
    for th in (1.0, -1.0, -2.0):
        spec = CEVSpec(0.3, th)
        out[f"cev_theta={th}"] = _mass(lambda y, spec=spec: cev_kernel(y, 1.0, t, spec), 0.0, math.inf, [1.0])
    return out


@_timed
def criterion_8() -> CriterionResult:
    masses = kernel_normalizations()
    worst = max(abs(m - 1) for m in masses.values())
    y = np.linspace(1e-3, 5.0, 2001)
    cev = cev_kernel(y, 1.0, 1.0, CEVSpec(0.3, -1.0))
    rw = reflected_wiener_kernel(y, 1.0, 1.0, ReflectedWienerSpec(0.3))
    gap = float(np.abs(cev - rw).max())
    return CriterionResult(8, "analytic kernel normalizations", worst <= 1e-6 and gap <= 1e-10,
                           {"worst_mass_error": worst, "cev_vs_reflected_wiener": gap})


# ---------------------------------------------------------------- 9: block factorization

def block_toy(periods: int):
    lat = build_lattice(0.0, 1.0, 4, Boundary.REFLECTING)
    gen = build_diffusion_generator(lat, CoefficientField.constant(0.02, 0.3))
    return [fast_exponentiate(gen, 0.25 + 0.05 * i) for i in range(periods)]


SNOWBALL = dict(f=0.5, dC=0.25, K=4, principal=1.0)


def snowball_phi(i):
    return lambda y: 0.125 * np.asarray(y, float) + 0.0625 * (i % 2)


def snowball_value(props):
    s = SNOWBALL
    coords = np.arange(4.0)
    perms = [snowball_permutation(s["f"], s["dC"], snowball_phi(i + 1), s["K"], coords)
             for i in range(len(props))]
    terminal = np.full((4, s["K"]), s["principal"])
    coupons = s["dC"] * np.arange(s["K"])
    hooks = InductionHooks(cashflows=lambda i, v: np.broadcast_to(coupons, v.shape) * (i > 0))
    return backward_induct(props, perms, terminal, hooks=hooks), perms


def snowball_enumeration(props):
    s = SNOWBALL
    n, K = 4, s["K"]
    U = [np.asarray(p.u) for p in props]
    out = np.zeros((n, K))
    for y0, k0 in itertools.product(range(n), range(K)):
        total = 0.0
        for path in itertools.product(range(n), repeat=len(U)):
            ys = (y0,) + path
            w = math.prod(U[i][ys[i], ys[i + 1]] for i in range(len(U)))
            k, pay = k0, s["principal"]
            for i in range(1, len(U) + 1):
                phi = float(snowball_phi(i)(ys[i - 1]))
                k = int(np.clip(round_half_away((s["f"] * s["dC"] * k + phi) / s["dC"]), 0, K - 1))
                pay += s["dC"] * k
            total += w * pay
        out[y0, k0] = total
    return out


SOFTCALL = dict(N=3, m=2, call=1.0, periods=5)


def softcall_sigma(y):
    return (np.asarray(y, float) >= 2).astype(int)


def softcall_terminal(n, K):
    return np.repeat((0.9 + 0.05 * np.arange(n))[:, None], K, axis=1)


def softcall_value(props):
    s = SOFTCALL
    coords = np.arange(4.0)
    perm = softcall_permutation(softcall_sigma, s["N"], coords)
    K = 2 ** s["N"]
    hit = window_popcount(K) >= s["m"]

    def events(i, v):
        if i == 0:
            return v
        return np.where(hit[None, :], s["call"], v)

    return backward_induct(props, [perm] * len(props), softcall_terminal(4, K),
                           hooks=InductionHooks(events=events))


def softcall_enumeration(props):
    s = SOFTCALL
    n, K, N = 4, 2 ** s["N"], s["N"]
    U = [np.asarray(p.u) for p in props]
    term = softcall_terminal(n, K)
    out = np.zeros((n, K))
    for y0, k0 in itertools.product(range(n), range(K)):
        total = 0.0
        for path in itertools.product(range(n), repeat=len(U)):
            ys = (y0,) + path
            w = math.prod(U[i][ys[i], ys[i + 1]] for i in range(len(U)))
            window = [(k0 >> (N - 1 - b)) & 1 for b in range(N)]
            pay = None
            for i in range(1, len(U) + 1):
                window = window[1:] + [int(softcall_sigma(ys[i - 1]))]
                if sum(window) >= s["m"]:
                    pay = s["call"]
                    break
            if pay is None:
                pay = term[ys[-1], 0]
            total += w * pay
        out[y0, k0] = total
    return out


@_timed
def criterion_9() -> CriterionResult:
    props3 = block_toy(3)
    snow, perms = snowball_value(props3)
    snow_err = float(np.abs(snow - snowball_enumeration(props3)).max())
    props5 = block_toy(SOFTCALL["periods"])
    soft_err = float(np.abs(softcall_value(props5) - softcall_enumeration(props5)).max())
    clamps = sum(p.clamped for p in perms)
    return CriterionResult(9, "block-factorization oracle", max(snow_err, soft_err) <= 1e-10 and clamps == 0,
                           {"snowball_err": snow_err, "softcall_err": soft_err, "clamps": clamps,
                            "_budget": 1.0})


# ---------------------------------------------------------------- 10: dynamic conditioning

def conditioning_toy(N: int = 8, n: int = 16):
    lat = build_lattice(-1.0, 2.0, n, Boundary.REFLECTING)
    gen = build_diffusion_generator(lat, CoefficientField.constant(0.0, 0.4))
    dT = 1.0 / N
    props = [fast_exponentiate(gen, dT) for _ in range(N)]
    tree = ConditioningTree.symmetric(N, dT)
    return props, tree, n // 2


@_timed
def criterion_10() -> CriterionResult:
    props, tree, anchor = conditioning_toy()
    bundle = build_factor_bundle(props, tree, anchor)
    marginal = bundle.marginal_defect()
    N = tree.N
    ind = correlate_factors([bundle, bundle], JointConditioner.independent(tree))
    indep = 0.0
    for j in range(N + 1):
        pc = ind[0].c_probabilities(j)
        joint = np.einsum("c,ca,cb->ab", pc, ind[0].conditional(j), ind[1].conditional(j))
        indep = max(indep, float(np.abs(joint - np.outer(bundle.marginal[j], bundle.marginal[j])).max()))
    sweep = (0.5, 0.7, 0.9, 1.0)
    corr = [factor_correlation(correlate_factors([bundle, bundle], JointConditioner.synchronized(w)), N)
            for w in sweep]
    monotone = all(b >= a - 1e-12 for a, b in zip(corr, corr[1:]))
    ok = marginal <= 1e-12 and indep <= 1e-12 and monotone
    return CriterionResult(10, "dynamic conditioning contract", ok,
                           {"marginal_defect": marginal, "independence_defect": indep,
                            "correlations": corr})


# ---------------------------------------------------------------- 11: ladder

LADDER = dict(omega0=1.0, Z=1.1, K=32, d_omega=0.05)


@_timed
def criterion_11() -> CriterionResult:
    lad = build_nonresonant_ladder(LADDER["omega0"], LADDER["Z"], LADDER["K"], LADDER["d_omega"])
    drift = lad.R @ lad.omega - lad.omega
    drift_err = float(np.abs(drift[:-1] - lad.d_omega).max())
    cond = ladder_condition_number(lad)
    return CriterionResult(11, "non-resonant ladder", drift_err <= 1e-12 and cond < 1e6,
                           {"drift_err": drift_err, "eigvec_condition": cond})


CRITERIA: dict[int, Callable[[], CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 4: criterion_4, 5: criterion_5, 6: criterion_6, 7: criterion_7,
    8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11, 3: criterion_3,
}


def run_all(report: Callable[[str], None] | None = print) -> list[CriterionResult]:
    """Run every criterion (audit last) and report one line per criterion."""
    results = []
    for num, fn in CRITERIA.items():
        try:
            res = fn()
        except Exception as exc:  # a crash is a failed criterion, not a crashed harness
            logger.exception("criterion %d raised", num)
            res = CriterionResult(num, fn.__name__, False, {"error": f"{type(exc).__name__}: {exc}"})
        results.append(res)
        if report is not None:
            report(res.line())
    return sorted(results, key=lambda r: r.number)
