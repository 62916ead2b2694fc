"""Command-line front end: ``engine <command> --config <path> --out <dir> [--threads N]``.

Writes ``<out>/results.csv`` (columns section,label,value,tolerance,status) and
``<out>/summary.json``; wall-clock timings go to ``<out>/timings.json`` so the
first two files are bit-identical across runs with the same configuration.
Exit codes: 0 success, 2 validation error, 3 numerical failure (including a
failed self-test criterion).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .abelian import PathFunctionalSpec
from .blocks import (InductionHooks, backward_induct, snowball_permutation, softcall_permutation,
                     window_popcount)
from .conditioning import (ConditioningTree, JointConditioner, build_factor_bundle, correlate_factors,
                           price_multifactor, tensor_chain_oracle)
from .config import Command, ConfigError, RunConfig, load
from .errors import NumericalFailure, ValidationError
from .generator import CoefficientField, build_diffusion_generator
from .kernels import brownian_fourier_kernel
from .lattice import build_lattice, build_periodic_lattice
from .moments import bridge_moments, price_variance_swap, price_volatility_swap
from .propagation import fast_exponentiate

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
CSV_COLUMNS = ("section", "label", "value", "tolerance", "status")


def fmt(x) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def emit_convergence_table(h, errors) -> list[dict]:
    """Rows (h, error, ratio, log2 ratio); ratio columns are empty on the first level."""
    rows = []
    for k, (hk, ek) in enumerate(zip(h, errors)):
        ratio = errors[k - 1] / ek if k > 0 and ek > 0 else None
        rows.append({"h": float(hk), "error": float(ek), "ratio": ratio,
                     "log2_ratio": float(np.log2(ratio)) if ratio else None})
    return rows


# ---------------------------------------------------------------- model helpers

def _lattice(model):
    lat = model["lattice"]
    if lat["boundary"] == "periodic":
        return build_periodic_lattice(lat["x0"], lat["extent"], lat["n_points"])
    return build_lattice(lat["x0"], lat["extent"], lat["n_points"], lat["boundary"])


def _generator(model):
    c = model["coefficients"]
    return build_diffusion_generator(_lattice(model), CoefficientField.constant(c["mu"], c["sigma"]))


def _start(product, n):
    i = product.get("start_index", n // 2)
    if not 0 <= i < n:
        raise ValidationError(f"product/start_index: {i} outside 0..{n - 1}")
    return i


# ---------------------------------------------------------------- commands

def run_kernel(cfg: RunConfig):
    gen = _generator(cfg.model)
    lat = gen.lattice
    p = cfg.product
    i = _start(p, gen.n)
    if p.get("method", "fast_exp") == "fourier":
        c = cfg.model["coefficients"]
        u = brownian_fourier_kernel(lat, c["mu"], c["sigma"], p["maturity_years"]).u
    else:
        u = fast_exponentiate(gen, p["maturity_years"],
                              extra_doublings=cfg.numerics.get("extra_doublings", 0)).u
    rows = [("kernel", f"x={fmt(x)}", u[i, j] / lat.h, None, None) for j, x in enumerate(lat.points)]
    return rows, {"start_point": float(lat.points[i]), "row_sum": float(u[i].sum())}


def run_converge(cfg: RunConfig):
    from .acceptance import fitted_rate

    p = cfg.product
    levels = cfg.numerics.get("levels", [64, 128, 256])
    mu, sigma, period = p.get("mu", 0.05), p.get("sigma", 0.2), p.get("period", 1.0)
    rows_u, hs = [], []
    for n in levels:
        lat = build_periodic_lattice(0.0, period, n)
        rows_u.append(brownian_fourier_kernel(lat, mu, sigma, p["maturity_years"]).u[0] / lat.h)
        hs.append(lat.h)
    diffs = []
    for a, b, na, nb in zip(rows_u, rows_u[1:], levels, levels[1:]):
        if nb != 2 * na:
            raise ValidationError("numerics/levels: successive levels must double")
        diffs.append(float(np.abs(a - b[::2]).max()))
    table = emit_convergence_table(hs[:-1], diffs)
    rows = []
    for r in table:
        rows.append(("convergence", f"h={fmt(r['h'])}", r["error"], None, None))
        rows.append(("log2_ratio", f"h={fmt(r['h'])}", r["log2_ratio"], None, None))
    rate = fitted_rate(hs[:-1], diffs) if len(diffs) > 1 else None
    rows.append(("fit", "rate", rate, None, None))
    return rows, {"levels": levels, "rate": rate}


def run_var_swap(cfg: RunConfig):
    gen = _generator(cfg.model)
    p, num = cfg.product, cfg.numerics
    i = _start(p, gen.n)
    spec = PathFunctionalSpec.realized_variance(np.exp)
    T = p["maturity_years"]
    dist = p.get("distribution", "chi_square")
    ms = bridge_moments(gen, spec, T, orders=3 if dist == "pearson3" else 2,
                        extra_doublings=num.get("extra_doublings", 0))
    # swap rates are annualized volatilities; realized variance accrues over the horizon
    var = price_variance_swap(ms, i, p["swap_rate"] * np.sqrt(T), p.get("cap_factor", 6.2), dist)
    rows = [("price", "variance_swap", var.price, None, None),
            ("diagnostic", "excluded_weight", var.excluded_weight, None, None),
            ("diagnostic", "expected_rv", float(ms.m1[i].sum()), None, None)]
    if "volatility_swap_rate" in p:
        vol = price_volatility_swap(ms, i, p["volatility_swap_rate"] * np.sqrt(T), p.get("cap_factor", 6.2))
        rows.append(("price", "volatility_swap", vol.price, None, None))
    return rows, {"distribution": dist, "bridges": var.n_bridges, "eps": ms.eps,
                  "richardson_error": ms.richardson_error}


def _period_props(cfg, periods):
    gen = _generator(cfg.model)
    dt = cfg.product["period_years"]
    u = fast_exponentiate(gen, dt, extra_doublings=cfg.numerics.get("extra_doublings", 0))
    return gen, [u] * periods


def run_snowball(cfg: RunConfig):
    p = cfg.product
    gen, props = _period_props(cfg, p["periods"])
    x = gen.lattice.points
    K = p["coupon_bins"]
    phi = lambda y: np.maximum(p["phi_intercept"] + p["phi_slope"] * np.asarray(y), 0.0)
    perm = snowball_permutation(p["factor"], p["coupon_step"], phi, K, x)
    coupons = p["coupon_step"] * np.arange(K)
    hooks = InductionHooks(cashflows=lambda i, v: np.broadcast_to(coupons, v.shape) * (i > 0))
    v = backward_induct(props, [perm] * len(props), np.full((gen.n, K), p.get("principal", 1.0)), hooks=hooks)
    i = _start(p, gen.n)
    k0 = p.get("initial_coupon_bin", 0)
    if not 0 <= k0 < K:
        raise ValidationError(f"product/initial_coupon_bin: {k0} outside 0..{K - 1}")
    rows = [("price", "snowball", v[i, k0], None, None),
            ("diagnostic", "clamped_targets", perm.clamped, None, "ok" if perm.clamped == 0 else "clamped")]
    return rows, {"clamped": perm.clamped}


def run_softcall(cfg: RunConfig):
    p = cfg.product
    gen, props = _period_props(cfg, p["periods"])
    x = gen.lattice.points
    N = p["window"]
    if p["trigger_count"] > N:
        raise ValidationError("product/trigger_count: cannot exceed the window length")
    perm = softcall_permutation(lambda y: (np.asarray(y) >= p["barrier"]).astype(int), N, x)
    K = 2**N
    hit = window_popcount(K) >= p["trigger_count"]
    events = lambda i, v: v if i == 0 else np.where(hit[None, :], p["call_price"], v)
    terminal = np.full((gen.n, K), p.get("redemption", 1.0))
    v = backward_induct(props, [perm] * len(props), terminal, hooks=InductionHooks(events=events))
    i = _start(p, gen.n)
    return [("price", "soft_call", v[i, 0], None, None)], {"window_states": K}


def run_basket(cfg: RunConfig):
    p = cfg.product
    gen = _generator(cfg.model)
    N = cfg.numerics.get("conditioning_steps", 8)
    T = p["maturity_years"]
    props = [fast_exponentiate(gen, T / N, extra_doublings=cfg.numerics.get("extra_doublings", 0))] * N
    i = _start(p, gen.n)
    tree = ConditioningTree.symmetric(N, T / N)
    bundle = build_factor_bundle(props, tree, i)
    w = p["sync_weight"]
    factors = correlate_factors([bundle, bundle], JointConditioner.synchronized(w))
    x = gen.lattice.points
    digit = [(x >= k).astype(float) for k in p["strikes"]]
    price = price_multifactor([digit], factors, N)
    oracle = tensor_chain_oracle(props, props, (i, i), w)
    exact = float(digit[0] @ oracle @ digit[1])
    rows = [("price", "digital_basket", price.price, None, None),
            ("oracle", "tensor_chain", exact, None, None),
            ("diagnostic", "discrepancy", price.price - exact, None, None),
            ("diagnostic", "op_count", price.op_count, None, None)]
    return rows, {"recombination_rule": price.rule, "supplemented_mass": bundle.supplemented_mass}


def run_selftest(cfg: RunConfig):
    from .acceptance import run_all

    results = run_all(report=lambda line: print(line, flush=True))
    rows = []
    for r in results:
        for k, v in r.metrics.items():
            val = v if not isinstance(v, (list, tuple)) else json.dumps([float(a) for a in v])
            rows.append((f"criterion_{r.number}", k, val, None, "pass" if r.passed else "fail"))
    failed = [r.number for r in results if not r.passed]
    return rows, {"failed_criteria": failed, "passed": len(results) - len(failed)}


RUNNERS = {
    Command.KERNEL: run_kernel, Command.CONVERGE: run_converge, Command.PRICE_VAR_SWAP: run_var_swap,
    Command.PRICE_SNOWBALL: run_snowball, Command.PRICE_SOFT_CALL: run_softcall,
    Command.PRICE_BASKET: run_basket, Command.SELF_TEST: run_selftest,
}


# ---------------------------------------------------------------- entry point

def write_outputs(out: Path, cfg: RunConfig, rows, meta, status: str, seconds: float):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    summary = {"command": cfg.command.value, "config_sha256": cfg.digest, "engine_version": __version__,
               "status": status, "rows": len(rows), "metadata": meta}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable) + "\n")
    (out / "timings.json").write_text(json.dumps({"wall_seconds": seconds}) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("ENGINE_THREADS")
    if env is None:
        return None
    try:
        n = int(env)
    except ValueError:
        raise ValidationError(f"ENGINE_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise ValidationError("ENGINE_THREADS must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="engine", description="Lattice operator pricing engine")
    ap.add_argument("command", help="|".join(c.value for c in Command))
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="BLAS threads (default: ENGINE_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        command = Command.parse(args.command)
        cfg = load(args.config, command)
        threads = _threads(args.threads)
        if threads is not None and threads < 1:
            raise ValidationError("--threads must be a positive integer")
    except ConfigError as exc:
        for prob in exc.problems:
            print(f"config error: {prob}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    t0 = time.perf_counter()
    try:
        with threadpool_limits(limits=threads):
            rows, meta = RUNNERS[command](cfg)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    failed = command is Command.SELF_TEST and meta["failed_criteria"]
    status = "fail" if failed else "ok"
    write_outputs(Path(args.out), cfg, rows, meta, status, time.perf_counter() - t0)
    return EXIT_NUMERICAL if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
