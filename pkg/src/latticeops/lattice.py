"""Uniform one-dimensional lattices, difference operators and lattice Fourier transforms."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, UnsupportedBoundary

logger = logging.getLogger(__name__)


class Boundary(enum.Enum):
    ABSORBING = "absorbing"
    REFLECTING = "reflecting"
    PERIODIC = "periodic"

    @classmethod
    def parse(cls, value) -> "Boundary":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidArgument(f"unknown boundary {value!r}") from None


class OperatorKind(enum.Enum):
    NABLA = "nabla"
    DELTA = "delta"


@dataclass(frozen=True, slots=True)
class Lattice:
    """Uniform grid x0 + i*h, i = 0..n_points-1.

    For periodic lattices the points form a ring: the last point neighbours
    the first, so the period is ``n_points * h``.
    """

    h: float
    n_points: int
    x0: float
    boundary: Boundary

    def __post_init__(self):
        if not (self.h > 0 and np.isfinite(self.h)):
            raise InvalidArgument(f"lattice spacing must be positive, got {self.h}")
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise InvalidArgument(f"need at least 3 lattice points, got {self.n_points}")

    @property
    def points(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.n_points)

    @property
    def extent(self) -> float:
        return self.h * (self.n_points - 1)

    @property
    def period(self) -> float:
        return self.h * self.n_points

    @property
    def is_periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    def boundary_rows(self) -> tuple[int, ...]:
        """Rows that do not carry the interior stencil."""
        if self.is_periodic:
            return ()
        return (0, self.n_points - 1)

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.n_points, dtype=bool)
        for r in self.boundary_rows():
            mask[r] = False
        return mask

    def displacement(self, i, j) -> np.ndarray:
        """Signed distance from point i to point j (minimal image on a ring)."""
        d = (np.asarray(j) - np.asarray(i)).astype(float)
        if self.is_periodic:
            n = self.n_points
            d = (d + n // 2) % n - n // 2
        return d * self.h

    def displacement_matrix(self) -> np.ndarray:
        idx = np.arange(self.n_points)
        return self.displacement(idx[:, None], idx[None, :])


def build_lattice(x0: float, L: float, n_points: int, boundary) -> Lattice:
    """Lattice spanning [x0, x0 + L] with ``n_points`` points."""
    if not (L > 0):
        raise InvalidArgument(f"lattice extent must be positive, got {L}")
    if int(n_points) != n_points or n_points < 3:
        raise InvalidArgument(f"need at least 3 lattice points, got {n_points}")
    return Lattice(h=L / (n_points - 1), n_points=int(n_points), x0=float(x0),
                   boundary=Boundary.parse(boundary))


def build_periodic_lattice(x0: float, period: float, n_points: int) -> Lattice:
    """Ring of ``n_points`` points with spacing period/n_points.

    Refining by doubling n_points keeps the period fixed, so successive
    levels are nested (every coarse point is a fine point).
    """
    if not (period > 0):
        raise InvalidArgument(f"period must be positive, got {period}")
    if int(n_points) != n_points or n_points < 3:
        raise InvalidArgument(f"need at least 3 lattice points, got {n_points}")
    return Lattice(h=period / n_points, n_points=int(n_points), x0=float(x0),
                   boundary=Boundary.PERIODIC)


@dataclass(frozen=True, slots=True)
class DiscreteOperator:
    matrix: np.ndarray
    kind: OperatorKind


def derivative_operator(lat: Lattice, kind) -> DiscreteOperator:
    """Central first difference (NABLA) or second difference (DELTA)."""
    kind = OperatorKind(kind) if not isinstance(kind, OperatorKind) else kind
    n, h = lat.n_points, lat.h
    m = np.zeros((n, n))
    if kind is OperatorKind.NABLA:
        up, down, diag = 1.0 / (2 * h), -1.0 / (2 * h), 0.0
    else:
        up, down, diag = 1.0 / h**2, 1.0 / h**2, -2.0 / h**2
    for i in range(n):
        if lat.is_periodic:
            m[i, (i + 1) % n] += up
            m[i, (i - 1) % n] += down
            m[i, i] += diag
        elif 0 < i < n - 1:
            m[i, i + 1] = up
            m[i, i - 1] = down
            m[i, i] = diag
        elif lat.boundary is Boundary.REFLECTING:
            # diagonal from the interior stencil, all off-diagonal mass on the inward neighbour
            nb = 1 if i == 0 else n - 2
            m[i, i] = diag
            m[i, nb] = up + down
    return DiscreteOperator(matrix=m, kind=kind)


@dataclass(frozen=True, slots=True)
class BrillouinZone:
    modes: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.modes[1] - self.modes[0])


def brillouin_modes(lat: Lattice) -> BrillouinZone:
    """Momenta p_k = (k - n//2) * pi / L_half, k = 0..n-1.

    L_half = n*h/2 is half the period of the ring.
    """
    if not lat.is_periodic:
        raise UnsupportedBoundary("Brillouin zone requires a periodic lattice")
    n = lat.n_points
    half = lat.period / 2
    return BrillouinZone(modes=(np.arange(n) - n // 2) * np.pi / half)


def _check_vector(lat: Lattice, f) -> np.ndarray:
    if not lat.is_periodic:
        raise UnsupportedBoundary("lattice Fourier transform requires a periodic lattice")
    f = np.asarray(f)
    if f.ndim != 1 or f.shape[0] != lat.n_points:
        raise InvalidArgument(f"expected a vector of length {lat.n_points}, got shape {f.shape}")
    return f


def dft(lat: Lattice, f) -> np.ndarray:
    """f_hat(p) = h * sum_x f(x) exp(-i p x) over the Brillouin modes."""
    f = _check_vector(lat, f)
    n = lat.n_points
    p = brillouin_modes(lat).modes
    k = np.arange(n) - n // 2
    # sum_j f_j exp(-2 pi i k j / n) is an FFT evaluated at k mod n
    core = np.fft.fft(f)[k % n]
    return lat.h * np.exp(-1j * p * lat.x0) * core


def idft(lat: Lattice, fhat) -> np.ndarray:
    """Inverse of :func:`dft`: f(x) = (1/(n h)) sum_p f_hat(p) exp(i p x)."""
    fhat = _check_vector(lat, fhat)
    n = lat.n_points
    p = brillouin_modes(lat).modes
    k = np.arange(n) - n // 2
    g = np.zeros(n, dtype=complex)
    g[k % n] = fhat * np.exp(1j * p * lat.x0)
    return np.fft.ifft(g) / lat.h
