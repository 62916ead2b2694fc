"""Abelian path-dependent liftings and their block diagonalization.

A path functional I_t = int phi(y_s) ds + sum over jumps chi(y-, y)(psi(y) - psi(y-))
is lifted to a joint process (y, I). On a uniform grid for I the lifted
generator is block-circulant, so a discrete Fourier transform in the I
direction splits it into one n x n block per mode p. Also provides the
discrete-time analogue, the non-resonant geometric ladder, the max-process
lifting and brute-force oracles.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import GridTooSmall, InvalidArgument, InvalidLadder, NumericalFailure, SizeCapExceeded
from .generator import GeneratorMatrix, SchedulePiece, as_schedule
from .propagation import FastExpPlan, fast_exp_matrix, make_propagator, plan_fast_exp

logger = logging.getLogger(__name__)

BRUTE_FORCE_CAP = 4096
DOUBLE_GRID_CAP = 64 * 64
SPILL_TOL = 1e-6


def round_half_away(x):
    """Nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=float)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(int)


def state_coordinates(gen: GeneratorMatrix) -> np.ndarray:
    return gen.lattice.points if gen.lattice is not None else np.arange(gen.n, dtype=float)


@dataclass(frozen=True, slots=True)
class PathFunctionalSpec:
    """phi(y, t) running integrand, chi(y1, y2, t) jump weight, psi(y, t) jump potential.

    Any of the three may be None (treated as zero; chi defaults to 1 when psi is set).
    Functions are vectorized over lattice coordinates.
    """

    phi: Callable | None = None
    chi: Callable | None = None
    psi: Callable | None = None

    @classmethod
    def zero(cls) -> "PathFunctionalSpec":
        return cls()

    @classmethod
    def clock(cls, rate: float = 1.0) -> "PathFunctionalSpec":
        return cls(phi=lambda y, t=0.0: np.full(np.shape(y), float(rate)))

    @classmethod
    def occupation(cls, weight: Callable) -> "PathFunctionalSpec":
        """int weight(y_s) ds, e.g. an indicator of a corridor."""
        return cls(phi=lambda y, t=0.0: np.asarray(weight(y), dtype=float))

    @classmethod
    def realized_variance(cls, price_map: Callable) -> "PathFunctionalSpec":
        """Sum over jumps of log(S(y2)/S(y1))^2."""
        def psi(y, t=0.0):
            s = np.asarray(price_map(y), dtype=float)
            if np.any(s <= 0):
                raise InvalidArgument("price map must be positive")
            return np.log(s)
        return cls(psi=psi, chi=lambda y1, y2, t=0.0: psi(y2) - psi(y1))

    def running(self, y, t=0.0) -> np.ndarray:
        if self.phi is None:
            return np.zeros(len(y))
        return np.broadcast_to(np.asarray(self.phi(y, t), dtype=float), (len(y),)).copy()

    def increments(self, y, t=0.0) -> np.ndarray:
        """c(y1, y2) = chi(y1, y2) (psi(y2) - psi(y1))."""
        n = len(y)
        if self.psi is None:
            return np.zeros((n, n))
        ps = np.broadcast_to(np.asarray(self.psi(y, t), dtype=float), (n,))
        dpsi = ps[None, :] - ps[:, None]
        if self.chi is None:
            return dpsi
        Y1, Y2 = np.meshgrid(y, y, indexing="ij")
        ch = np.broadcast_to(np.asarray(self.chi(Y1, Y2, t), dtype=float), (n, n))
        return ch * dpsi

    def is_zero(self, y, t=0.0) -> bool:
        return not (np.any(self.running(y, t)) or np.any(self.increments(y, t)))


@dataclass(frozen=True, slots=True)
class UniformGrid:
    delta: float
    K: int

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidArgument("path grid spacing must be positive")
        if int(self.K) != self.K or self.K < 2:
            raise InvalidArgument("path grid needs K >= 2 bins")

    @property
    def modes(self) -> np.ndarray:
        """DFT frequencies p_j = 2 pi j/(K delta), j = 0..K-1."""
        return 2 * np.pi * np.arange(self.K) / (self.K * self.delta)

    @property
    def signed_modes(self) -> np.ndarray:
        """The same frequencies aliased into [-pi/delta, pi/delta)."""
        j = np.arange(self.K)
        j = np.where(j >= (self.K + 1) // 2, j - self.K, j)
        return 2 * np.pi * j / (self.K * self.delta)

    @property
    def values(self) -> np.ndarray:
        return self.delta * np.arange(self.K)


@dataclass(frozen=True, slots=True, eq=False)
class LiftedBlock:
    p: float
    block: np.ndarray


# ---------------------------------------------------------------- continuous time

def _grid_terms(y, spec, grid, t):
    """Jump increments (rounded to the grid when given) and running rates."""
    c = spec.increments(y, t)
    if grid is not None:
        c = round_half_away(c / grid.delta) * grid.delta
    return c, spec.running(y, t)


def _running_term(p, phi, grid, clock):
    if clock == "exact" or grid is None:
        return -1j * p * phi
    if clock != "poisson":
        raise InvalidArgument(f"unknown clock discretization {clock!r}")
    d = grid.delta
    return np.abs(phi) / d * (np.exp(-1j * p * np.sign(phi) * d) - 1)


def characteristic_block(gen: GeneratorMatrix, spec: PathFunctionalSpec, p: float, t: float = 0.0,
                         grid: UniformGrid | None = None, clock: str = "exact") -> LiftedBlock:
    """L - i p diag(phi) + kappa_p with kappa_p = L(y1,y2)(exp(-i p c(y1,y2)) - 1).

    With a grid, jump increments are rounded to the grid. clock="poisson"
    replaces the running term by a Poisson clock of rate |phi|/delta, which is
    the exact Fourier image of the brute-force lifted generator.
    """
    y = state_coordinates(gen)
    c, phi = _grid_terms(y, spec, grid, t)
    off = ~np.eye(gen.n, dtype=bool)
    block = np.where(off, gen.q * np.exp(-1j * p * c), gen.q).astype(complex)
    block[np.diag_indices(gen.n)] += _running_term(p, phi, grid, clock)
    return LiftedBlock(p=float(p), block=block)


def characteristic_block_double(gen: GeneratorMatrix, spec1, spec2, p1: float, p2: float,
                                t: float = 0.0, grid1=None, grid2=None, clock: str = "exact") -> LiftedBlock:
    """Joint block for two functionals: phases multiply on every jump."""
    y = state_coordinates(gen)
    c1, phi1 = _grid_terms(y, spec1, grid1, t)
    c2, phi2 = _grid_terms(y, spec2, grid2, t)
    off = ~np.eye(gen.n, dtype=bool)
    block = np.where(off, gen.q * np.exp(-1j * (p1 * c1 + p2 * c2)), gen.q).astype(complex)
    block[np.diag_indices(gen.n)] += (_running_term(p1, phi1, grid1, clock)
                                      + _running_term(p2, phi2, grid2, clock))
    return LiftedBlock(p=float(p1), block=block)


def _lifted_min_diagonal(gen, specs, grids, t):
    y = state_coordinates(gen)
    d = np.diag(gen.q).copy()
    for spec, grid in zip(specs, grids):
        d -= np.abs(spec.running(y, t)) / grid.delta
    return float(d.min())


@dataclass(frozen=True, slots=True, eq=False)
class BridgeDistribution:
    """joint[x0, y, k] = P(y_T = y, I_T in bin k | y_0 = x0)."""

    joint: np.ndarray
    grid: UniformGrid
    spill: float
    plans: tuple

    def marginal(self) -> np.ndarray:
        return self.joint.sum(axis=-1)

    def row(self, x0: int) -> np.ndarray:
        return self.joint[x0]


def _pieces_and_plans(schedule, T, specs, grids, extra_doublings):
    pieces = as_schedule(schedule, T)
    plans = []
    for piece in pieces:
        dmin = _lifted_min_diagonal(piece.gen, specs, grids, piece.t0)
        plans.append(plan_fast_exp(piece.gen, piece.t1 - piece.t0, extra_doublings, min_diagonal=dmin))
    return pieces, plans


def _mode_propagators(pieces, plans, block_fn, grid):
    """exp of the blocks at the signed frequencies; the Nyquist mode averages +p and -p."""
    n = pieces[0].gen.n

    def prop(p):
        u = np.eye(n, dtype=complex)
        for piece, plan in zip(pieces, plans):
            u = u @ fast_exp_matrix(block_fn(piece, p), plan)
        return u

    modes = grid.signed_modes
    out = np.empty((grid.K, n, n), dtype=complex)
    for j, p in enumerate(modes):
        out[j] = prop(p)
        if grid.K % 2 == 0 and j == grid.K // 2:
            out[j] = 0.5 * (out[j] + prop(-p))
    return out


def bridge_distribution(schedule, spec: PathFunctionalSpec, grid: UniformGrid, T: float | None = None,
                        x0: int | None = None, extra_doublings: int = 0,
                        check_spill: bool = True, clock: str = "exact") -> BridgeDistribution:
    """Joint law of (y_T, I_T) by inverse DFT over K modes p_j = 2 pi j/(K delta).

    Modes are evaluated at their signed aliases so that the Hermitian pairing
    block(-p) = conj(block(p)) makes the inverse transform real; for
    grid-supported increments the two choices coincide.

    The path coordinate is periodic modulo K bins, exactly like the brute-force
    lifting. The spill check repeats the computation on a 2K grid and measures
    the mass falling outside the first K bins.
    """
    pieces, plans = _pieces_and_plans(schedule, T, [spec], [grid], extra_doublings)

    def blocks(piece, p, g=grid):
        return characteristic_block(piece.gen, spec, p, piece.t0, g, clock).block

    U = _mode_propagators(pieces, plans, blocks, grid)
    joint = np.fft.ifft(U, axis=0)
    imag = float(np.abs(joint.imag).max())
    if imag > 1e-10:
        raise NumericalFailure(f"inverse transform is not real (imaginary part {imag:.3e})")
    joint = np.moveaxis(joint.real, 0, -1)
    spill = 0.0
    if check_spill:
        big = UniformGrid(grid.delta, 2 * grid.K)
        U2 = _mode_propagators(pieces, plans, lambda piece, p: blocks(piece, p, big), big)
        j2 = np.fft.ifft(U2, axis=0).real
        spill = float(np.abs(j2[grid.K:]).sum(axis=0).sum(axis=1).max())
        if spill > SPILL_TOL:
            raise GridTooSmall(spill)
    _register_marginal(joint, pieces)
    if x0 is not None:
        joint = joint[x0]
    return BridgeDistribution(joint=joint, grid=grid, spill=spill, plans=tuple(plans))


def _register_marginal(joint, pieces):
    marg = joint.sum(axis=-1)
    make_propagator(marg, pieces[0].t0, pieces[-1].t1,
                    all(p.gen.conserving for p in pieces), "lifted marginal")


def lifted_generator(gen: GeneratorMatrix, specs, grids, t: float = 0.0) -> np.ndarray:
    """Lifted rate matrix on (y, m1[, m2]) with path indices taken modulo K."""
    y = state_coordinates(gen)
    n = gen.n
    Ks = [g.K for g in grids]
    size = n * int(np.prod(Ks))
    if size > BRUTE_FORCE_CAP:
        raise SizeCapExceeded(f"lifted state space {size} exceeds {BRUTE_FORCE_CAP}")
    jumps, rates, steps = [], [], []
    for spec, grid in zip(specs, grids):
        c = spec.increments(y, t)
        jumps.append(round_half_away(c / grid.delta))
        phi = spec.running(y, t)
        rates.append(np.abs(phi) / grid.delta)
        steps.append(np.sign(phi).astype(int))
    paths = np.stack(np.meshgrid(*[np.arange(k) for k in Ks], indexing="ij"), -1).reshape(-1, len(Ks))
    npath = len(paths)

    def flat(yi, m):
        idx = 0
        for mk, K in zip(m, Ks):
            idx = idx * K + (mk % K)
        return yi * npath + idx

    Q = np.zeros((size, size))
    q = gen.q
    for y1 in range(n):
        for m in paths:
            src = flat(y1, m)
            for y2 in range(n):
                if y2 == y1 or q[y1, y2] == 0:
                    continue
                tgt = flat(y2, [mk + jumps[f][y1, y2] for f, mk in enumerate(m)])
                Q[src, tgt] += q[y1, y2]
            Q[src, src] += q[y1, y1]
            for f in range(len(Ks)):
                if rates[f][y1] > 0:
                    shifted = list(m)
                    shifted[f] += steps[f][y1]
                    Q[src, flat(y1, shifted)] += rates[f][y1]
                    Q[src, src] -= rates[f][y1]
    return Q


def brute_force_lifted(schedule, spec: PathFunctionalSpec, grid: UniformGrid, T: float | None = None,
                       extra_doublings: int = 0) -> BridgeDistribution:
    """Oracle: exponentiate the full (n K) x (n K) lifted generator."""
    pieces, plans = _pieces_and_plans(schedule, T, [spec], [grid], extra_doublings)
    n, K = pieces[0].gen.n, grid.K
    u = np.eye(n * K)
    for piece, plan in zip(pieces, plans):
        Q = lifted_generator(piece.gen, [spec], [grid], piece.t0)
        step = make_propagator(fast_exp_matrix(Q, plan), piece.t0, piece.t1,
                               piece.gen.conserving, "brute-force lift")
        u = u @ step.u
    # start from path bin 0
    joint = u.reshape(n, K, n, K)[:, 0, :, :]
    return BridgeDistribution(joint=joint, grid=grid, spill=float("nan"), plans=tuple(plans))


def bridge_distribution_double(schedule, spec1, spec2, grid1: UniformGrid, grid2: UniformGrid,
                               T: float | None = None, extra_doublings: int = 0,
                               clock: str = "exact") -> np.ndarray:
    """joint[x0, y, k1, k2] for two functionals via a two-dimensional inverse DFT."""
    if grid1.K * grid2.K > DOUBLE_GRID_CAP:
        raise SizeCapExceeded(f"double lifting grid {grid1.K}x{grid2.K} exceeds 64x64")
    pieces, plans = _pieces_and_plans(schedule, T, [spec1, spec2], [grid1, grid2], extra_doublings)
    n = pieces[0].gen.n
    U = np.empty((grid1.K, grid2.K, n, n), dtype=complex)

    def prop(p1, p2):
        u = np.eye(n, dtype=complex)
        for piece, plan in zip(pieces, plans):
            blk = characteristic_block_double(piece.gen, spec1, spec2, p1, p2, piece.t0,
                                              grid1, grid2, clock).block
            u = u @ fast_exp_matrix(blk, plan)
        return u

    def signs(grid, j):
        return (1, -1) if grid.K % 2 == 0 and j == grid.K // 2 else (1,)

    for a, p1 in enumerate(grid1.signed_modes):
        for b, p2 in enumerate(grid2.signed_modes):
            combos = [(s1 * p1, s2 * p2) for s1 in signs(grid1, a) for s2 in signs(grid2, b)]
            U[a, b] = sum(prop(*c) for c in combos) / len(combos)
    joint = np.fft.ifft2(U, axes=(0, 1))
    if np.abs(joint.imag).max() > 1e-10:
        raise NumericalFailure("double inverse transform is not real")
    return np.moveaxis(joint.real, (0, 1), (2, 3))


def brute_force_double_lift(schedule, spec1, spec2, grid1, grid2, T=None, extra_doublings=0) -> np.ndarray:
    pieces, plans = _pieces_and_plans(schedule, T, [spec1, spec2], [grid1, grid2], extra_doublings)
    n, K1, K2 = pieces[0].gen.n, grid1.K, grid2.K
    u = np.eye(n * K1 * K2)
    for piece, plan in zip(pieces, plans):
        Q = lifted_generator(piece.gen, [spec1, spec2], [grid1, grid2], piece.t0)
        u = u @ make_propagator(fast_exp_matrix(Q, plan), piece.t0, piece.t1,
                                piece.gen.conserving, "brute-force double lift").u
    return u.reshape(n, K1, K2, n, K1, K2)[:, 0, 0]


def increment_operator(j: int, K: int) -> np.ndarray:
    """Circulant shift by j bins on a periodic path grid."""
    return np.roll(np.eye(K), j, axis=1)


# ---------------------------------------------------------------- discrete time

def _psi_matrix(psi, n, coords=None):
    if callable(psi):
        y = np.arange(n, dtype=float) if coords is None else coords
        Y1, Y2 = np.meshgrid(y, y, indexing="ij")
        return np.broadcast_to(np.asarray(psi(Y1, Y2), dtype=float), (n, n))
    return np.asarray(psi, dtype=float)


def discrete_lift_block(U, psi, p: float, delta: float | None = None, coords=None) -> LiftedBlock:
    """U(y1, y2) exp(-i p psi(y1, y2)); with delta, psi is rounded to the grid."""
    u = getattr(U, "u", U)
    ps = _psi_matrix(psi, u.shape[0], coords)
    if delta is not None:
        ps = round_half_away(ps / delta) * delta
    return LiftedBlock(p=float(p), block=u * np.exp(-1j * p * ps))


def discrete_bridge_distribution(propagators: Sequence, psis: Sequence, grid: UniformGrid,
                                 coords=None) -> np.ndarray:
    """joint[x0, y, k] of (y_n, J_n) with J the sum of per-period increments psi_i."""
    if len(propagators) != len(psis):
        raise InvalidArgument("need one increment function per period")
    n = getattr(propagators[0], "u", propagators[0]).shape[0]
    U = np.empty((grid.K, n, n), dtype=complex)
    for j, p in enumerate(grid.modes):
        u = np.eye(n, dtype=complex)
        for Ui, psi in zip(propagators, psis):
            u = u @ discrete_lift_block(Ui, psi, p, grid.delta, coords).block
        U[j] = u
    joint = np.fft.ifft(U, axis=0)
    if np.abs(joint.imag).max() > 1e-10:
        raise NumericalFailure("inverse transform is not real")
    return np.moveaxis(joint.real, 0, -1)


def brute_force_discrete_lift(propagators: Sequence, psis: Sequence, grid: UniformGrid,
                              coords=None) -> np.ndarray:
    """Oracle: multiply the full (n K) x (n K) lifted transition matrices."""
    n = getattr(propagators[0], "u", propagators[0]).shape[0]
    K = grid.K
    if n * K > BRUTE_FORCE_CAP:
        raise SizeCapExceeded("discrete lift exceeds the oracle size cap")
    total = np.eye(n * K)
    for Ui, psi in zip(propagators, psis):
        u = getattr(Ui, "u", Ui)
        jumps = round_half_away(_psi_matrix(psi, n, coords) / grid.delta)
        big = np.zeros((n * K, n * K))
        for y1 in range(n):
            for y2 in range(n):
                for k in range(K):
                    big[y1 * K + k, y2 * K + (k + jumps[y1, y2]) % K] += u[y1, y2]
        total = total @ big
    return total.reshape(n, K, n, K)[:, 0]


# ---------------------------------------------------------------- geometric ladder

@dataclass(frozen=True, slots=True, eq=False)
class ShiftLadder:
    """Shift kernel R on geometric levels omega_k = omega0 Z^k, k = 1..K."""

    probs: np.ndarray
    R: np.ndarray
    omega: np.ndarray
    d_omega: float

    @property
    def K(self) -> int:
        return len(self.omega)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.diag(self.R).copy()


def build_nonresonant_ladder(omega0: float, Z: float, K: int, d_omega: float) -> ShiftLadder:
    """Levels omega0 Z^k with up-move probabilities p_k = d_omega/(omega0 Z^k (Z - 1)).

    Every row below the cap drifts by exactly d_omega; the top level is absorbing.
    """
    if not (omega0 > 0 and d_omega > 0):
        raise InvalidLadder("omega0 and d_omega must be positive")
    if not Z > 1:
        raise InvalidLadder("ladder ratio Z must exceed 1")
    if int(K) != K or K < 2:
        raise InvalidLadder("ladder needs at least 2 levels")
    if not Z * (Z - 1) > d_omega / omega0:
        raise InvalidLadder(f"Z(Z-1) = {Z * (Z - 1):.6g} must exceed d_omega/omega0 = {d_omega / omega0:.6g}")
    k = np.arange(1, K + 1)
    omega = omega0 * Z**k
    p = d_omega / (omega0 * Z**k[:-1] * (Z - 1))
    if np.any(p <= 0) or np.any(p >= 1):
        raise InvalidLadder("transition probabilities fall outside (0, 1)")
    R = np.diag(np.concatenate([1 - p, [1.0]])) + np.diag(p, 1)
    rho = np.diag(R)
    gaps = np.abs(rho[:, None] - rho[None, :]) + np.eye(K)
    if gaps.min() < 1e-6:
        raise InvalidLadder(f"resonant ladder: eigenvalue gap {gaps.min():.3e} below 1e-6")
    return ShiftLadder(probs=p, R=R, omega=omega, d_omega=float(d_omega))


def ladder_eigenbasis(ladder: ShiftLadder):
    """Right eigenvectors (unit columns), eigenvalues and inverse of R."""
    rho, U = np.linalg.eig(ladder.R)
    order = np.argsort(-rho)
    rho, U = rho[order].real, U[:, order].real
    return U, rho, np.linalg.inv(U)


def ladder_condition_number(ladder: ShiftLadder) -> float:
    U, _, _ = ladder_eigenbasis(ladder)
    return float(np.linalg.cond(U))


def interpolated_shift_kernel(ladder: ShiftLadder, psi: float, j_max: int = 256) -> np.ndarray:
    """Q = ([psi] + 1 - psi) R^[psi] + (psi - [psi]) R^([psi] + 1), [.] the integer part."""
    if psi < 0:
        raise InvalidArgument("accrual must be nonnegative")
    j = int(math.floor(psi))
    if j + 1 > j_max:
        raise InvalidArgument(f"power {j + 1} exceeds the precomputed range {j_max}")
    w = psi - j
    Rj = np.linalg.matrix_power(ladder.R, j)
    if w == 0:
        return Rj
    return (1 - w) * Rj + w * (Rj @ ladder.R)


# ---------------------------------------------------------------- running maximum

def max_process_lift(gen: GeneratorMatrix, chi: Callable, alpha: float, A: float, K: int):
    """Lifted generator for (y, k) with k tracking the running maximum of chi(y) / alpha.

    From (y, k) the process jumps at rate A to k' = [chi(y)/alpha] (nearest
    integer, capped at K-1) whenever chi(y) > alpha k. Returns the lifted
    GeneratorMatrix and the number of capped targets.
    """
    if not (alpha > 0 and A > 0):
        raise InvalidArgument("alpha and A must be positive")
    n = gen.n
    y = state_coordinates(gen)
    c = np.asarray(chi(y), dtype=float)
    Q = np.kron(gen.q, np.eye(K))
    capped = 0
    for yi in range(n):
        target = int(round_half_away(c[yi] / alpha))
        if target > K - 1:
            capped += 1
            target = K - 1
        for k in range(K):
            if c[yi] > alpha * k and target > k:
                src = yi * K + k
                Q[src, yi * K + target] += A
                Q[src, src] -= A
    return GeneratorMatrix(Q), capped
