"""Estimation driver: k-means start, ICM label updates inside an EM loop.

One iteration:

1. re-normalize the basis so that ``S^T Sigma^{-1} S = I`` on the lattice
   (pure reparameterization of alpha and Gamma);
2. per-site cluster log-densities;
3. ICM sweeps on the labels;
4. stop if labels are an ICM fixed point and the objective has settled;
5. M-step for (alpha, Gamma, sigma2), then theta by pseudo-likelihood.

The objective is ``J = sum_i log f(Y_i | Z_i) + log PL(Z; theta)``.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from ._linalg import psd_project
from .basis import BasisSpec, build_lattice_basis, orthogonalize
from .curves import Dataset
from .errors import ConfigError, EmptyClusterError, NumericalError, SpfclustError, ValidationError
from .graph import NeighborGraph
from .model import (
    CovParams,
    FunctionalDesign,
    ModelParams,
    density_matrix,
    m_step,
    ols_coefficients,
)
from .mrf import MrfParams, fit_theta, icm_objective, icm_sweep, log_pseudo_likelihood, neighbor_counts

logger = logging.getLogger(__name__)


@dataclass
class FitConfig:
    n_clusters: Union[int, Sequence[int]] = 3
    max_iter: int = 100
    icm_sweeps_per_iter: int = 3
    tol: float = 1e-6
    seed: int = 0
    restarts: int = 5
    basis: BasisSpec = field(default_factory=BasisSpec)
    lattice_size: int = 365
    theta_init: float = 0.5
    theta_bounds: Tuple[float, float] = (0.0, 10.0)
    estimate_theta: bool = True
    random_effects: bool = True
    scan_order: str = "ascending"
    kmeans_iter: int = 50

    def __post_init__(self):
        cs = [self.n_clusters] if np.isscalar(self.n_clusters) else list(self.n_clusters)
        if not cs or any(int(c) < 1 for c in cs):
            raise ConfigError("cluster counts must be positive")
        for name in ("max_iter", "icm_sweeps_per_iter", "restarts", "lattice_size", "kmeans_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        lo, hi = self.theta_bounds
        if not lo < hi:
            raise ConfigError("theta_bounds must satisfy lo < hi")
        if self.scan_order not in ("ascending", "random"):
            raise ConfigError(f"unknown scan order {self.scan_order!r}")

    @property
    def candidates(self) -> List[int]:
        if np.isscalar(self.n_clusters):
            return [int(self.n_clusters)]
        return [int(c) for c in self.n_clusters]


@dataclass
class FitResult:
    labels: np.ndarray
    params: ModelParams
    objective: float
    objective_trace: List[float]
    icm_trace: List[List[float]]
    conditional_posteriors: np.ndarray
    pseudo_bic: float
    converged: bool
    iterations: int
    theta_at_bound: bool = False
    restart: int = 0

    @property
    def n_clusters(self) -> int:
        return self.params.n_clusters


def n_free_parameters(C: int, q: int) -> int:
    """alpha (C q), Gamma (q(q+1)/2), sigma2 and theta."""
    return C * q + q * (q + 1) // 2 + 2


def pseudo_bic(objective: float, C: int, q: int, n: int) -> float:
    return -2.0 * objective + n_free_parameters(C, q) * math.log(n)


def kmeans(X, k: int, seed: int = 0, n_iter: int = 50) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; no cluster is left empty."""
    X = np.asarray(X, float)
    n = X.shape[0]
    if n < k:
        raise ConfigError(f"cannot form {k} clusters from {n} curves")
    rng = np.random.default_rng(seed)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    centers = np.array(centers)
    labels = np.full(n, -1)
    for _ in range(n_iter):
        dist = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
        new = np.argmin(dist, axis=1)
        new = _fill_empty(new, dist, k)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centers[c] = X[labels == c].mean(axis=0)
    return labels


def _fill_empty(labels, dist, k):
    """Move the point farthest from its centre into each empty cluster."""
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        sizes = np.bincount(labels, minlength=k)
        own = dist[np.arange(labels.size), labels]
        own = np.where(sizes[labels] > 1, own, -np.inf)
        labels[int(np.argmax(own))] = c
    return labels


def initialize_labels(dataset, basis: BasisSpec, C: int, seed: int = 0, n_iter: int = 50) -> np.ndarray:
    """k-means on per-curve least-squares coefficients."""
    design = dataset if isinstance(dataset, FunctionalDesign) else FunctionalDesign.build(dataset, basis)
    if design.n_curves < C:
        raise ConfigError(f"cannot form {C} clusters from {design.n_curves} curves")
    if C == 1:
        return np.zeros(design.n_curves, dtype=np.int64)
    coef, _ = ols_coefficients(design)
    return kmeans(coef, C, seed=seed, n_iter=n_iter).astype(np.int64)


def _initial_params(design, Z, C, config: FitConfig, lattice) -> ModelParams:
    coef, sigma2 = ols_coefficients(design)
    q = design.q
    alpha = np.array([coef[Z == k].mean(axis=0) for k in range(C)])
    if config.random_effects:
        dev = coef - alpha[Z]
        scatter = dev.T @ dev / design.n_curves
        gamma = psd_project(scatter)
    else:
        gamma = np.zeros((q, q))
    theta = config.theta_init if C > 1 else 0.0
    return ModelParams(
        alpha=alpha,
        cov=CovParams(gamma, sigma2),
        mrf=MrfParams(theta, C),
        basis=config.basis,
        transform=np.eye(q),
    )


def _label_objective(Z, g, theta, C):
    if C == 1:
        return 0.0
    return log_pseudo_likelihood(Z, g, theta, C)


def objective(design: FunctionalDesign, g: NeighborGraph, Z, params: ModelParams) -> float:
    """``sum_i log f(Y_i|Z_i) + log PL(Z; theta)`` in the params' working basis."""
    D = density_matrix(design, params.alpha, params.cov)
    return float(np.sum(D[np.arange(design.n_curves), Z])) + _label_objective(
        Z, g, params.mrf.theta, params.n_clusters
    )


def _reseed_empty(Z, D, C):
    """Give each empty cluster the curve that currently fits worst."""
    Z = Z.copy()
    for k in range(C):
        if np.any(Z == k):
            continue
        sizes = np.bincount(Z, minlength=C)
        fit = D[np.arange(Z.size), Z]
        fit = np.where(sizes[Z] > 1, fit, np.inf)
        worst = int(np.argmin(fit))
        logger.debug("re-seeding empty cluster %d with curve %d", k, worst)
        Z[worst] = k
    return Z


def canonical_order(Z, C: int) -> np.ndarray:
    """Permutation ``perm`` with new label ``perm[old]``: larger clusters first,
    ties by smallest member index."""
    sizes = np.bincount(Z, minlength=C)
    first = np.array([np.flatnonzero(Z == k)[0] if sizes[k] else Z.size for k in range(C)])
    ranked = sorted(range(C), key=lambda k: (-sizes[k], first[k]))
    perm = np.empty(C, dtype=np.int64)
    perm[ranked] = np.arange(C)
    return perm


def _relabel(Z, params: ModelParams, post):
    C = params.n_clusters
    perm = canonical_order(Z, C)
    inv = np.argsort(perm)
    return perm[Z], replace(params, alpha=params.alpha[inv]), post[:, inv]


def _posteriors_from(D, Z, g, theta, C):
    return softmax(D + theta * neighbor_counts(Z, g, C), axis=1)


def _fit_once(design0, g, C, config: FitConfig, lattice, seed, restart):
    Z = initialize_labels(design0, config.basis, C, seed, config.kmeans_iter)
    params = _initial_params(design0, Z, C, config, lattice)
    design = design0
    S_lat = lattice.values
    theta_at_bound = False
    trace: List[float] = []
    icm_trace: List[List[float]] = []
    converged = False
    rng = np.random.default_rng(seed)
    it = 0
    for it in range(1, config.max_iter + 1):
        T = orthogonalize(S_lat, params.cov.gamma, params.cov.sigma2).T
        params = params.reparameterize(T)
        design = design.with_transform(T)
        S_lat = S_lat @ T

        D = density_matrix(design, params.alpha, params.cov)
        sweep_obj = [icm_objective(Z, D, g, params.mrf.theta)]
        changed_total = 0
        for _ in range(config.icm_sweeps_per_iter):
            Z, changed = icm_sweep(Z, D, g, params.mrf, config.scan_order, rng)
            sweep_obj.append(icm_objective(Z, D, g, params.mrf.theta))
            changed_total += changed
            if changed == 0:
                break
        icm_trace.append(sweep_obj)
        if np.bincount(Z, minlength=C).min() == 0:
            Z = _reseed_empty(Z, D, C)
            changed_total += 1

        if changed_total == 0 and len(trace) >= 2:
            rel = abs(trace[-1] - trace[-2]) / max(abs(trace[-1]), 1.0)
            if rel < config.tol:
                converged = True
                break

        try:
            alpha, cov = m_step(design, Z, params.alpha, params.cov, config.random_effects)
        except EmptyClusterError as exc:
            raise NumericalError(f"cluster {exc.cluster} empty after re-seeding") from exc
        params = replace(params, alpha=alpha, cov=cov)
        if C > 1 and config.estimate_theta:
            est = fit_theta(Z, g, C, config.theta_bounds)
            theta_at_bound = est.at_bound
            params = replace(params, mrf=replace(params.mrf, theta=est.theta))
        J = objective(design, g, Z, params)
        if not math.isfinite(J):
            raise NumericalError(
                f"non-finite objective at iteration {it} (sigma2={params.cov.sigma2:.3e}, "
                f"theta={params.mrf.theta:.3e}, sizes={np.bincount(Z, minlength=C).tolist()})"
            )
        trace.append(J)

    D = density_matrix(design, params.alpha, params.cov)
    post = _posteriors_from(D, Z, g, params.mrf.theta, C)
    final = float(np.sum(D[np.arange(Z.size), Z])) + _label_objective(Z, g, params.mrf.theta, C)
    Z, params, post = _relabel(Z, params, post)
    return FitResult(
        labels=Z,
        params=params,
        objective=final,
        objective_trace=trace,
        icm_trace=icm_trace,
        conditional_posteriors=post,
        pseudo_bic=pseudo_bic(final, C, design.q, design.n_curves),
        converged=converged,
        iterations=it,
        theta_at_bound=theta_at_bound,
        restart=restart,
    )


def _check_aligned(dataset: Dataset, g: NeighborGraph):
    if g.n != dataset.n_sites:
        raise ValidationError(f"graph has {g.n} sites but dataset has {dataset.n_sites}")


def fit(dataset: Dataset, graph: NeighborGraph, config: FitConfig) -> FitResult:
    """Fit one cluster count; best of ``config.restarts`` runs by objective."""
    cands = config.candidates
    if len(cands) != 1:
        raise ConfigError("fit() takes a single cluster count; use select_C for a list")
    C = cands[0]
    _check_aligned(dataset, graph)
    design = FunctionalDesign.build(dataset, config.basis)
    lattice = build_lattice_basis(config.basis, config.lattice_size)
    best = None
    for r in range(config.restarts):
        res = _fit_once(design, graph, C, config, lattice, config.seed + r, r)
        logger.info("C=%d restart %d: J=%.6f iterations=%d converged=%s", C, r, res.objective, res.iterations, res.converged)
        if best is None or res.objective > best.objective:
            best = res
    return best


def select_C(dataset: Dataset, graph: NeighborGraph, config: FitConfig) -> Tuple[int, Dict[int, FitResult]]:
    """Fit each candidate cluster count and pick the smallest pseudo-BIC.

    A candidate whose fit fails is logged and skipped.
    """
    results: Dict[int, FitResult] = {}
    for C in config.candidates:
        try:
            results[C] = fit(dataset, graph, replace(config, n_clusters=C))
        except SpfclustError as exc:
            logger.warning("fit with C=%d failed: %s", C, exc)
    if not results:
        raise NumericalError("no candidate cluster count could be fitted")
    best = min(results, key=lambda c: (results[c].pseudo_bic, c))
    return best, results


def conditional_posteriors(dataset: Dataset, graph: NeighborGraph, result: FitResult) -> np.ndarray:
    """``P(Z_i = k | Y_i, neighbours)`` holding neighbours at the fitted labels."""
    p = result.params
    design = FunctionalDesign.build(dataset, p.basis, p.transform)
    D = density_matrix(design, p.alpha, p.cov)
    return _posteriors_from(D, result.labels, graph, p.mrf.theta, p.n_clusters)


def recompute_objective(dataset: Dataset, graph: NeighborGraph, result: FitResult) -> float:
    p = result.params
    design = FunctionalDesign.build(dataset, p.basis, p.transform)
    return objective(design, graph, result.labels, p)
