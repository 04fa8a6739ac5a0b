"""Basis functions for curve representation.

B-splines (clamped, Cox-de Boor recursion) and an orthonormal Fourier
system on [0, 1], plus the lattice matrix and the reparameterization
that normalizes the basis against the marginal curve covariance
``sigma2 * I + S Gamma S^T``.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from ._linalg import psd_factor, symmetrize
from .errors import ConditioningError, ConfigError, DegenerateBasisError, DomainError


@dataclass(frozen=True)
class BasisSpec:
    """Description of a basis system on [0, 1].

    Parameters
    ----------
    kind : {'bspline', 'fourier'}
    q : int
        Number of basis functions.
    order : int
        B-spline order (4 = cubic). Ignored for Fourier.
    knots : tuple of float, optional
        Interior B-spline knots in (0, 1). Equispaced when omitted, in
        which case ``q - order`` knots are used.
    """

    kind: str = "bspline"
    q: int = 12
    order: int = 4
    knots: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in ("bspline", "fourier"):
            raise ConfigError(f"unknown basis kind {self.kind!r}")
        if self.q < 2:
            raise ConfigError("basis dimension q must be >= 2")
        if self.kind == "fourier":
            if self.q % 2 == 0:
                raise ConfigError("Fourier basis needs odd q (constant + sin/cos pairs)")
            return
        if self.order < 1:
            raise ConfigError("B-spline order must be >= 1")
        if self.knots is not None:
            knots = tuple(float(k) for k in self.knots)
            object.__setattr__(self, "knots", knots)
            if any(not 0.0 < k < 1.0 for k in knots):
                raise ConfigError("interior knots must lie strictly inside (0, 1)")
            if any(b <= a for a, b in zip(knots, knots[1:])):
                raise ConfigError("interior knots must be strictly increasing")
            if self.q != self.order + len(knots):
                raise ConfigError(
                    f"q={self.q} inconsistent with order {self.order} and "
                    f"{len(knots)} interior knots"
                )
        elif self.q < self.order:
            raise ConfigError(f"q={self.q} smaller than B-spline order {self.order}")

    @property
    def interior_knots(self) -> np.ndarray:
        if self.kind != "bspline":
            raise AttributeError("interior_knots is defined for B-splines only")
        if self.knots is not None:
            return np.asarray(self.knots, dtype=float)
        m = self.q - self.order
        return np.arange(1, m + 1) / (m + 1.0)

    @property
    def full_knots(self) -> np.ndarray:
        """Clamped knot vector (``order`` repeats at each end)."""
        return np.concatenate(
            [np.zeros(self.order), self.interior_knots, np.ones(self.order)]
        )


@dataclass(frozen=True)
class BasisMatrix:
    values: np.ndarray
    times: np.ndarray


@dataclass(frozen=True)
class LatticeBasis:
    values: np.ndarray
    lattice: np.ndarray


@dataclass(frozen=True)
class OrthoTransform:
    """Invertible ``T`` such that ``(S T)^T Sigma^{-1} (S T) = I``."""

    T: np.ndarray
    min_eigenvalue: float

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.T)


def _bspline_design(x, knots, order):
    n_basis = len(knots) - order
    idx = np.searchsorted(knots, x, side="right") - 1
    # right end point belongs to the last non-empty span
    idx = np.clip(idx, order - 1, n_basis - 1)
    B = np.zeros((x.size, len(knots) - 1))
    B[np.arange(x.size), idx] = 1.0
    for p in range(1, order):
        nxt = np.zeros((x.size, len(knots) - 1 - p))
        for j in range(nxt.shape[1]):
            d1 = knots[j + p] - knots[j]
            d2 = knots[j + p + 1] - knots[j + 1]
            if d1 > 0:
                nxt[:, j] += (x - knots[j]) / d1 * B[:, j]
            if d2 > 0:
                nxt[:, j] += (knots[j + p + 1] - x) / d2 * B[:, j + 1]
        B = nxt
    return B


def _fourier_design(x, q):
    cols = [np.ones_like(x)]
    for m in range(1, (q - 1) // 2 + 1):
        w = 2.0 * np.pi * m * x
        cols.append(np.sqrt(2.0) * np.sin(w))
        cols.append(np.sqrt(2.0) * np.cos(w))
    return np.column_stack(cols)


def evaluate_basis(spec: BasisSpec, times) -> BasisMatrix:
    """Evaluate all basis functions at ``times``; row j is s(t_j)^T.

    Fourier columns are ordered (1, sqrt2 sin 2pi t, sqrt2 cos 2pi t,
    sqrt2 sin 4pi t, ...), orthonormal over [0, 1].
    """
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1:
        raise DomainError("times must be one-dimensional")
    bad = ~np.isfinite(t) | (t < 0.0) | (t > 1.0)
    if np.any(bad):
        raise DomainError(f"time {t[bad][0]!r} outside [0, 1]")
    if spec.kind == "bspline":
        values = _bspline_design(t, spec.full_knots, spec.order)
    else:
        values = _fourier_design(t, spec.q)
    return BasisMatrix(values=values, times=t)


def lattice_points(L: int) -> np.ndarray:
    return (np.arange(1, L + 1) - 0.5) / L


def build_lattice_basis(spec: BasisSpec, L: int = 365) -> LatticeBasis:
    if L < spec.q:
        raise ValueError(f"lattice size L={L} is smaller than q={spec.q}")
    grid = lattice_points(L)
    S = evaluate_basis(spec, grid).values
    sv = np.linalg.svd(S, compute_uv=False)
    rank = int(np.sum(sv > sv[0] * max(S.shape) * np.finfo(float).eps))
    if rank < spec.q:
        raise DegenerateBasisError(
            f"lattice basis has rank {rank} < q={spec.q}; refine the lattice or knots"
        )
    return LatticeBasis(values=S, lattice=grid)


def constraint_matrix(S, gamma, sigma2) -> np.ndarray:
    """``S^T Sigma^{-1} S`` with ``Sigma = sigma2 I + S Gamma S^T``.

    Uses the Woodbury identity on a factor of Gamma, so only r x r systems
    (r = rank Gamma <= q) are solved.
    """
    S = getattr(S, "values", S)
    A = S.T @ S
    Lg = psd_factor(gamma)
    if Lg.shape[1] == 0:
        return A / sigma2
    AL = A @ Lg
    K = sigma2 * np.eye(Lg.shape[1]) + Lg.T @ AL
    cK = np.linalg.cholesky(symmetrize(K))
    U = solve_triangular(cK, AL.T, lower=True)
    return symmetrize((A - U.T @ U) / sigma2)


def orthogonalize(S, gamma, sigma2: float, cond_tol: float = 1e-12) -> OrthoTransform:
    """Transform making the lattice basis orthonormal in the Sigma^{-1} metric.

    ``M = S^T Sigma^{-1} S = R^T R`` (Cholesky, R upper) and ``T = R^{-1}``.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    M = constraint_matrix(S, gamma, sigma2)
    lam = np.linalg.eigvalsh(M)
    if lam[0] <= cond_tol * max(lam[-1], np.finfo(float).tiny):
        raise ConditioningError(
            f"constraint matrix is numerically singular (smallest eigenvalue {lam[0]:.3e})"
        )
    R = np.linalg.cholesky(M).T
    T = solve_triangular(R, np.eye(R.shape[0]), lower=False)
    return OrthoTransform(T=T, min_eigenvalue=float(lam[0]))
