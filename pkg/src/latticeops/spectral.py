"""Dense eigendecomposition with residual checks and matrix functional calculus."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import PseudoSpectrumError

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-6
INVERSE_TOL = 1e-8
# beyond this the eigenvector basis is numerically defective
MAX_CONDITION = 1e12


@dataclass(frozen=True, slots=True, eq=False)
class SpectralDecomposition:
    """L = U diag(eigvals) V with V = U^{-1}."""

    U: np.ndarray
    eigvals: np.ndarray
    V: np.ndarray
    residual: float
    inverse_residual: float

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.U))


def _as_matrix(gen) -> np.ndarray:
    q = getattr(gen, "q", gen)
    return np.asarray(q)


def spectral_decompose(gen) -> SpectralDecomposition:
    """Eigendecomposition of a generator (or any square matrix).

    Raises PseudoSpectrumError if the decomposition cannot be trusted.
    """
    L = _as_matrix(gen)
    lam, U = np.linalg.eig(L)
    cond = np.linalg.cond(U)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise PseudoSpectrumError(f"eigenvector basis is ill-conditioned (cond={cond:.3e})")
    V = np.linalg.inv(U)
    res = float(np.abs(L @ U - U * lam).max())
    inv_res = float(np.abs(U @ V - np.eye(L.shape[0])).max())
    if res > RESIDUAL_TOL or inv_res > INVERSE_TOL:
        raise PseudoSpectrumError(
            f"eigendecomposition residual {res:.3e} (tol {RESIDUAL_TOL}), "
            f"inverse residual {inv_res:.3e} (tol {INVERSE_TOL})"
        )
    logger.debug("spectral decomposition n=%d cond=%.3e residual=%.3e", L.shape[0], cond, res)
    return SpectralDecomposition(U=U, eigvals=lam, V=V, residual=res, inverse_residual=inv_res)


def apply_function(dec: SpectralDecomposition, psi: Callable, real: bool | None = None) -> np.ndarray:
    """psi(L) = U diag(psi(lambda)) V.

    With ``real=None`` the result is returned as a real array when its
    imaginary part is negligible.
    """
    vals = np.asarray(psi(dec.eigvals.astype(complex)), dtype=complex)
    out = (dec.U * vals) @ dec.V
    if real is None:
        scale = max(1.0, float(np.abs(out).max()))
        real = float(np.abs(out.imag).max()) <= 1e-8 * scale
    return out.real.copy() if real else out
