"""Polynomial bases for time-dependent weights.

Both families are evaluated in normalized time ``s = (t - t0) / (T - t0)``
so that conditioning does not depend on the horizon. The Legendre family is
the shifted one, orthogonal on ``[0, 1]``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class InvalidGridError(ValueError):
    pass


class NoBasisMatrixError(ValueError):
    """Raised when a basis matrix is requested for the non-parameterized kind."""


class Kind(str, enum.Enum):
    MONOMIAL = "monomial"
    LEGENDRE = "legendre"
    NONE = "none"


@dataclass(frozen=True)
class BasisKind:
    kind: Kind
    degree: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")

    @property
    def is_polynomial(self) -> bool:
        return self.kind is not Kind.NONE

    @property
    def size(self) -> int:
        """Number of basis functions d (degree + 1); undefined for kind=None."""
        if not self.is_polynomial:
            raise NoBasisMatrixError("kind=None has no basis functions")
        return self.degree + 1

    def __str__(self):
        if self.is_polynomial:
            return f"{self.kind.value}-{self.degree}"
        return "none"


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    points: tuple

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 1:
            raise InvalidGridError("time grid needs at least one point")
        if pts[0] != self.t0:
            raise InvalidGridError("first grid point must equal t0")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise InvalidGridError("grid points must be strictly increasing")
        if pts[-1] > self.T:
            raise InvalidGridError("grid points must not exceed T")
        if len(pts) > 1 and self.T == self.t0:
            raise InvalidGridError("degenerate grid: T == t0 with more than one point")

    @classmethod
    def uniform(cls, T: float, n: int, t0: float = 0.0) -> "TimeGrid":
        """Left endpoints of ``n`` equal steps on ``[t0, T]`` (the layer times of a ResNet)."""
        h = (T - t0) / n
        return cls(t0, T, tuple(t0 + j * h for j in range(n)))

    @classmethod
    def linspace(cls, t0: float, T: float, n: int) -> "TimeGrid":
        """``n`` equispaced points including both endpoints."""
        return cls(t0, T, tuple(np.linspace(t0, T, n)))

    @property
    def N(self) -> int:
        return len(self.points)

    def normalize(self, t):
        span = self.T - self.t0
        if span == 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        return (np.asarray(t, dtype=float) - self.t0) / span

    def array(self) -> np.ndarray:
        return np.asarray(self.points)


def _check_index(i: int, degree: int | None = None):
    if i < 0 or (degree is not None and i > degree):
        raise IndexError(f"basis index {i} out of range")


def _check_time(t, grid: TimeGrid):
    lo, hi = grid.t0, grid.T
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(np.asarray(t) < lo - tol) or np.any(np.asarray(t) > hi + tol):
        raise ValueError(f"time {t} outside [{lo}, {hi}]")


def monomial_values(degree: int, s) -> np.ndarray:
    """Rows ``s**i`` for i = 0..degree; shape ``(degree+1,) + s.shape``."""
    s = np.asarray(s, dtype=float)
    out = np.empty((degree + 1,) + s.shape)
    out[0] = 1.0
    for i in range(1, degree + 1):
        out[i] = out[i - 1] * s
    return out


def legendre_values(degree: int, s) -> np.ndarray:
    """Shifted Legendre polynomials on [0, 1] via Bonnet's recurrence.

    (n+1) P_{n+1}(x) = (2n+1) x P_n(x) - n P_{n-1}(x), with x = 2s - 1.
    """
    x = 2.0 * np.asarray(s, dtype=float) - 1.0
    out = np.empty((degree + 1,) + x.shape)
    out[0] = 1.0
    if degree >= 1:
        out[1] = x
    for n in range(1, degree):
        out[n + 1] = ((2 * n + 1) * x * out[n] - n * out[n - 1]) / (n + 1)
    return out


def basis_values(basis: BasisKind, s) -> np.ndarray:
    """Evaluate all d basis functions at normalized time(s) ``s``."""
    if basis.kind is Kind.MONOMIAL:
        return monomial_values(basis.degree, s)
    if basis.kind is Kind.LEGENDRE:
        return legendre_values(basis.degree, s)
    raise NoBasisMatrixError("kind=None has no basis functions")


def eval_monomial(i: int, t: float, grid: TimeGrid) -> float:
    _check_index(i)
    _check_time(t, grid)
    return float(monomial_values(i, grid.normalize(t))[i])


def eval_legendre(i: int, t: float, grid: TimeGrid) -> float:
    _check_index(i)
    _check_time(t, grid)
    return float(legendre_values(i, grid.normalize(t))[i])


def build_basis_matrix(basis: BasisKind, grid: TimeGrid) -> np.ndarray:
    """The d x N matrix ``A[i, j] = p_i(t_j)``."""
    if not basis.is_polynomial:
        raise NoBasisMatrixError("kind=None uses per-step weights; there is no basis matrix")
    return basis_values(basis, grid.normalize(grid.array()))


def vandermonde(basis: BasisKind, grid: TimeGrid) -> np.ndarray:
    """Rows are time points, columns basis functions (transpose of the basis matrix)."""
    return build_basis_matrix(basis, grid).T


def condition_number(M) -> float:
    """2-norm condition number from singular values; ``inf`` when numerically rank deficient."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        raise ValueError("condition number of an empty matrix")
    if M.ndim == 1:
        M = M[None, :]
    sv = np.linalg.svd(M, compute_uv=False)
    smax, smin = sv[0], sv[-1]
    if smin <= np.finfo(float).eps * smax * max(M.shape):
        return float("inf")
    return float(smax / smin)


@dataclass(frozen=True)
class ConditionRow:
    kind: str
    degree: int
    cond2: float


def conditioning_report(
    kinds: Iterable[Kind | str], degrees: Sequence[int], grid: TimeGrid
) -> list[ConditionRow]:
    degrees = list(degrees)
    if not degrees:
        raise ValueError("degrees must be non-empty")
    rows = []
    for kind in kinds:
        kind = Kind(kind)
        for deg in degrees:
            if deg >= grid.N:
                warnings.warn(
                    f"{kind.value} degree {deg} >= N={grid.N}: basis matrix is rank deficient",
                    RuntimeWarning,
                    stacklevel=2,
                )
                rows.append(ConditionRow(kind.value, deg, float("inf")))
                continue
            A = build_basis_matrix(BasisKind(kind, deg), grid)
            rows.append(ConditionRow(kind.value, deg, condition_number(A.T)))
    return rows
