"""Functional linear mixed model for clustered curves.

Given cluster k, curve i satisfies ``Y_i = S_i (alpha_k + gamma_i) + eps_i``
with ``gamma_i ~ N(0, Gamma)`` and ``eps_i ~ N(0, sigma2 I)``; Gamma and
sigma2 are shared by all clusters. Every computation works on q x q (or
rank(Gamma) x rank(Gamma)) systems through the Woodbury identity, never
on the n_i x n_i marginal covariance.

Curves observed on identical time grids share their basis matrix; the
:class:`FunctionalDesign` groups them so that factorizations are done
once per grid.
"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ._linalg import psd_factor, psd_project, symmetrize
from .basis import BasisSpec, evaluate_basis
from .errors import ConditioningError, EmptyClusterError, NumericalError, ValidationError
from .mrf import MrfParams

SIGMA2_MIN = 1e-8
_LOG2PI = math.log(2.0 * math.pi)


@dataclass
class CovParams:
    gamma: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.ndim != 2 or self.gamma.shape[0] != self.gamma.shape[1]:
            raise ValidationError("Gamma must be square")
        if not np.allclose(self.gamma, self.gamma.T, rtol=1e-10, atol=1e-12):
            raise ValidationError("Gamma must be symmetric")
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValidationError(f"sigma2 must be positive, got {self.sigma2!r}")


@dataclass
class ModelParams:
    """Full parameter set.

    ``alpha`` (C x q) and ``cov.gamma`` are expressed in the working basis
    ``S @ transform``; :meth:`alpha_original` maps back to the raw basis.
    """

    alpha: np.ndarray
    cov: CovParams
    mrf: MrfParams
    basis: BasisSpec
    transform: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.alpha.shape[0]

    @property
    def q(self) -> int:
        return self.alpha.shape[1]

    def alpha_original(self) -> np.ndarray:
        return self.alpha @ self.transform.T

    def gamma_original(self) -> np.ndarray:
        return symmetrize(self.transform @ self.cov.gamma @ self.transform.T)

    def reparameterize(self, T: np.ndarray) -> "ModelParams":
        """Switch to basis ``S_work @ T`` leaving every likelihood unchanged."""
        Tinv = np.linalg.inv(T)
        return replace(
            self,
            alpha=self.alpha @ Tinv.T,
            cov=CovParams(symmetrize(Tinv @ self.cov.gamma @ Tinv.T), self.cov.sigma2),
            transform=self.transform @ T,
        )


@dataclass(frozen=True)
class RandomEffectPosterior:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class _Group:
    index: np.ndarray  # curve positions in dataset order
    S: np.ndarray  # n_g x q
    Y: np.ndarray  # m x n_g


class FunctionalDesign:
    """Curves and their basis matrices, grouped by shared time grid."""

    def __init__(self, groups: Sequence[_Group], n_curves: int, q: int):
        self.groups = list(groups)
        self.n_curves = n_curves
        self.q = q
        self._where = {}
        for gi, grp in enumerate(self.groups):
            for row, i in enumerate(grp.index):
                self._where[int(i)] = (gi, row)

    @classmethod
    def build(cls, curves, spec: BasisSpec, transform: Optional[np.ndarray] = None) -> "FunctionalDesign":
        """``curves`` is a Dataset or a sequence of AnnualCurve."""
        curves = getattr(curves, "curves", curves)
        buckets = {}
        for i, c in enumerate(curves):
            if c.times.size < spec.q:
                raise ValidationError(
                    f"curve {c.site_id!r} has {c.times.size} points, fewer than q={spec.q}"
                )
            buckets.setdefault(c.times.tobytes(), []).append(i)
        groups = []
        for idx in buckets.values():
            times = curves[idx[0]].times
            S = evaluate_basis(spec, times).values
            if transform is not None:
                S = S @ transform
            Y = np.vstack([curves[i].values for i in idx])
            groups.append(_Group(np.asarray(idx), S, Y))
        groups.sort(key=lambda g: g.index[0])
        return cls(groups, len(curves), spec.q)

    @classmethod
    def from_arrays(cls, Y: Sequence[np.ndarray], S: Sequence[np.ndarray]) -> "FunctionalDesign":
        """One group per curve; for direct use with explicit matrices."""
        groups = [
            _Group(np.array([i]), np.asarray(s, float), np.asarray(y, float)[None, :])
            for i, (y, s) in enumerate(zip(Y, S))
        ]
        return cls(groups, len(groups), groups[0].S.shape[1])

    def with_transform(self, T: np.ndarray) -> "FunctionalDesign":
        return FunctionalDesign(
            [_Group(g.index, g.S @ T, g.Y) for g in self.groups], self.n_curves, self.q
        )

    def basis_matrix(self, i: int) -> np.ndarray:
        gi, _ = self._where[i]
        return self.groups[gi].S

    def curve(self, i: int) -> np.ndarray:
        gi, row = self._where[i]
        return self.groups[gi].Y[row]

    @property
    def n_obs(self) -> int:
        return int(sum(g.Y.size for g in self.groups))


class _Factor:
    """Woodbury pieces for one grid: B = S L, K = sigma2 I + B^T B = cK cK^T."""

    def __init__(self, S, L, sigma2):
        self.S = S
        self.L = L
        self.sigma2 = sigma2
        self.r = L.shape[1]
        if self.r:
            self.B = S @ L
            K = sigma2 * np.eye(self.r) + self.B.T @ self.B
            try:
                self.cK = np.linalg.cholesky(symmetrize(K))
            except np.linalg.LinAlgError as exc:
                raise ConditioningError("Woodbury core matrix is not positive definite") from exc
            self.logdet_core = 2.0 * float(np.sum(np.log(np.diag(self.cK))))
        else:
            self.logdet_core = 0.0

    def logdet(self, n):
        return (n - self.r) * math.log(self.sigma2) + self.logdet_core

    def quad(self, R):
        """``r^T Sigma^{-1} r`` for each row of R (..., n)."""
        rr = np.einsum("...j,...j->...", R, R)
        if not self.r:
            return rr / self.sigma2
        Br = R @ self.B
        shp = Br.shape
        u = solve_triangular(self.cK, Br.reshape(-1, self.r).T, lower=True)
        return (rr - np.sum(u * u, axis=0).reshape(shp[:-1])) / self.sigma2

    def post_gain(self):
        """``G = L K^{-1} L^T``; posterior mean is G S^T r, covariance sigma2 G."""
        q = self.L.shape[0]
        if not self.r:
            return np.zeros((q, q))
        return symmetrize(self.L @ cho_solve((self.cK, True), self.L.T))

    def gls_blocks(self):
        """``S^T Sigma^{-1} S`` and the map X -> S^T Sigma^{-1} X as a q x n matrix."""
        St = self.S.T
        if not self.r:
            P = St / self.sigma2
        else:
            BtS = self.B.T @ self.S
            W = cho_solve((self.cK, True), self.B.T)
            P = (St - BtS.T @ W) / self.sigma2
        return symmetrize(P @ self.S), P


def _factor_for(S, cov: CovParams):
    return _Factor(S, psd_factor(cov.gamma), cov.sigma2)


def marginal_loglik(y, S, alpha, cov: CovParams) -> float:
    """Gaussian log-density of ``y ~ N(S alpha, sigma2 I + S Gamma S^T)``."""
    y = np.asarray(y, dtype=float)
    S = getattr(S, "values", S)
    fac = _factor_for(np.asarray(S, float), cov)
    r = y - S @ np.asarray(alpha, float)
    n = y.size
    return float(-0.5 * (n * _LOG2PI + fac.logdet(n) + fac.quad(r)))


def density_matrix(design: FunctionalDesign, alpha, cov: CovParams) -> np.ndarray:
    """n x C matrix of ``log f(Y_i | Z_i = k)``."""
    alpha = np.atleast_2d(np.asarray(alpha, float))
    out = np.empty((design.n_curves, alpha.shape[0]))
    L = psd_factor(cov.gamma)
    for grp in design.groups:
        fac = _Factor(grp.S, L, cov.sigma2)
        n = grp.S.shape[0]
        R = grp.Y[:, None, :] - (alpha @ grp.S.T)[None, :, :]
        out[grp.index] = -0.5 * (n * _LOG2PI + fac.logdet(n) + fac.quad(R))
    bad = ~np.all(np.isfinite(out), axis=1)
    if np.any(bad):
        raise NumericalError(f"non-finite log-density for curve(s) {np.flatnonzero(bad)[:10].tolist()}")
    return out


def random_effect_posterior(y, S, alpha, cov: CovParams) -> RandomEffectPosterior:
    """Law of ``gamma_i`` given ``Y_i`` and its cluster mean ``S alpha``.

    Equivalent to ``(Gamma^{-1} + S^T S / sigma2)^{-1}`` conditioning but
    valid for singular Gamma.
    """
    S = np.asarray(getattr(S, "values", S), float)
    fac = _factor_for(S, cov)
    G = fac.post_gain()
    r = np.asarray(y, float) - S @ np.asarray(alpha, float)
    return RandomEffectPosterior(mean=G @ (S.T @ r), cov=cov.sigma2 * G)


def posterior_moments(design: FunctionalDesign, Z, alpha, cov: CovParams):
    """Posterior means (n x q) and covariances (n x q x q) at labels Z."""
    Z = np.asarray(Z)
    means = np.empty((design.n_curves, design.q))
    covs = np.empty((design.n_curves, design.q, design.q))
    L = psd_factor(cov.gamma)
    for grp in design.groups:
        fac = _Factor(grp.S, L, cov.sigma2)
        G = fac.post_gain()
        R = grp.Y - alpha[Z[grp.index]] @ grp.S.T
        means[grp.index] = (R @ grp.S) @ G
        covs[grp.index] = cov.sigma2 * G
    return means, covs


def observed_loglik(design: FunctionalDesign, Z, alpha, cov: CovParams) -> float:
    D = density_matrix(design, alpha, cov)
    return float(np.sum(D[np.arange(design.n_curves), np.asarray(Z)]))


def m_step(
    design: FunctionalDesign,
    Z,
    alpha,
    cov: CovParams,
    random_effects: bool = True,
) -> Tuple[np.ndarray, CovParams]:
    """Hard-label parameter update.

    Cluster means are generalized least squares at the current covariance;
    Gamma and sigma2 are then re-estimated from random-effect posteriors
    evaluated at the new means, so each half-step cannot lower the
    observed-data likelihood at fixed labels.
    """
    Z = np.asarray(Z)
    C = np.asarray(alpha).shape[0]
    q = design.q
    sizes = np.bincount(Z, minlength=C)
    for k in range(C):
        if sizes[k] == 0:
            raise EmptyClusterError(k)

    L = psd_factor(cov.gamma)
    lhs = np.zeros((C, q, q))
    rhs = np.zeros((C, q))
    for grp in design.groups:
        fac = _Factor(grp.S, L, cov.sigma2)
        M, P = fac.gls_blocks()
        proj = grp.Y @ P.T  # m x q
        zg = Z[grp.index]
        for k in np.unique(zg):
            sel = zg == k
            lhs[k] += sel.sum() * M
            rhs[k] += proj[sel].sum(axis=0)
    new_alpha = np.empty((C, q))
    for k in range(C):
        try:
            c = np.linalg.cholesky(symmetrize(lhs[k]))
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(f"GLS system for cluster {k} is singular") from exc
        new_alpha[k] = cho_solve((c, True), rhs[k])

    if not random_effects:
        resid = 0.0
        for grp in design.groups:
            R = grp.Y - new_alpha[Z[grp.index]] @ grp.S.T
            resid += float(np.sum(R * R))
        sigma2 = max(resid / design.n_obs, SIGMA2_MIN)
        return new_alpha, CovParams(np.zeros((q, q)), sigma2)

    means, covs = posterior_moments(design, Z, new_alpha, cov)
    gamma = (means.T @ means + covs.sum(axis=0)) / design.n_curves
    gamma = psd_project(gamma)
    resid = 0.0
    for grp in design.groups:
        R = grp.Y - (new_alpha[Z[grp.index]] + means[grp.index]) @ grp.S.T
        A = grp.S.T @ grp.S
        resid += float(np.sum(R * R)) + float(np.einsum("ijk,kj->", covs[grp.index], A))
    sigma2 = max(resid / design.n_obs, SIGMA2_MIN)
    return new_alpha, CovParams(gamma, sigma2)


def ols_coefficients(design: FunctionalDesign) -> Tuple[np.ndarray, float]:
    """Per-curve least-squares basis coefficients and pooled residual variance."""
    coef = np.empty((design.n_curves, design.q))
    rss = 0.0
    dof = 0
    for grp in design.groups:
        sol, *_ = np.linalg.lstsq(grp.S, grp.Y.T, rcond=None)
        coef[grp.index] = sol.T
        R = grp.Y - sol.T @ grp.S.T
        rss += float(np.sum(R * R))
        dof += grp.Y.size - grp.Y.shape[0] * design.q
    sigma2 = rss / dof if dof > 0 else rss / max(grp.Y.size, 1)
    return coef, max(sigma2, SIGMA2_MIN)
