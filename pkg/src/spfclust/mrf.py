"""Potts-type Markov random field on cluster labels.

Labels are integers ``0..C-1``. The conditional law of site i given its
neighbours is proportional to ``exp(theta * sum_j w_ij * [Z_j == k])``.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, ValidationError
from .graph import NeighborGraph

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MrfParams:
    theta: float
    n_clusters: int
    allow_repulsive: bool = False

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ConfigError("theta must be finite")
        if self.theta < 0 and not self.allow_repulsive:
            raise ConfigError("theta < 0 requires allow_repulsive=True")
        if self.n_clusters < 1:
            raise ConfigError("need at least one cluster")


def check_labels(Z, n_clusters: int, n: Optional[int] = None) -> np.ndarray:
    Z = np.asarray(Z)
    if Z.ndim != 1 or not np.issubdtype(Z.dtype, np.integer):
        raise ValidationError("labels must be a 1-D integer vector")
    if n is not None and Z.size != n:
        raise ValidationError(f"label field has {Z.size} entries, expected {n}")
    if Z.size and (Z.min() < 0 or Z.max() >= n_clusters):
        raise ValidationError(f"labels must lie in 0..{n_clusters - 1}")
    return Z


def neighbor_counts(Z, g: NeighborGraph, n_clusters: int) -> np.ndarray:
    """n x C matrix of weighted like-label neighbour counts."""
    onehot = np.zeros((g.n, n_clusters))
    onehot[np.arange(g.n), Z] = 1.0
    return np.asarray(g.to_sparse() @ onehot)


def local_energy(i: int, k: int, Z, g: NeighborGraph, theta: float) -> float:
    nbrs = g.neighbors(i)
    w = g.neighbor_weights(i)
    return float(theta * np.sum(w[np.asarray(Z)[nbrs] == k]))


def conditional_probs(i: int, Z, g: NeighborGraph, params: MrfParams) -> np.ndarray:
    nbrs = g.neighbors(i)
    counts = np.bincount(np.asarray(Z)[nbrs], weights=g.neighbor_weights(i), minlength=params.n_clusters)
    u = params.theta * counts
    p = np.exp(u - u.max())
    return p / p.sum()


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _visit_order(n, scan_order, rng):
    if scan_order == "ascending":
        return range(n)
    if scan_order == "random":
        return rng.permutation(n).tolist()
    raise ConfigError(f"unknown scan order {scan_order!r}")


def gibbs_sweep(Z, g: NeighborGraph, params: MrfParams, rng_seed=None, scan_order="ascending") -> np.ndarray:
    """One full Gibbs sweep; returns a new label vector.

    ``rng_seed`` may be an integer seed or a ``numpy.random.Generator``
    (advanced in place, so consecutive sweeps draw fresh randomness).
    """
    rng = _rng(rng_seed)
    C = params.n_clusters
    theta = params.theta
    labels = np.asarray(Z).tolist()
    order = _visit_order(g.n, scan_order, rng)
    uniforms = rng.random(g.n).tolist()
    adj = g.adjacency_lists
    for step, i in enumerate(order):
        nbrs, wts = adj[i]
        u = [0.0] * C
        for j, w in zip(nbrs, wts):
            u[labels[j]] += w
        top = max(u)
        p = [math.exp(theta * (x - top)) for x in u]
        target = uniforms[step] * sum(p)
        acc = 0.0
        new = C - 1
        for k in range(C):
            acc += p[k]
            if target < acc:
                new = k
                break
        labels[i] = new
    return np.asarray(labels, dtype=np.int64)


def icm_sweep(Z, log_dens, g: NeighborGraph, params: MrfParams, scan_order="ascending", rng_seed=None) -> Tuple[np.ndarray, int]:
    """One ICM pass maximizing ``log f(Y_i | k) + U_ik`` site by site.

    Uses the most recent labels of neighbours; ties go to the smallest k.
    Returns the new labels and the number of sites that changed.
    """
    D = np.asarray(log_dens, dtype=float)
    if D.shape != (g.n, params.n_clusters):
        raise ValidationError(f"density matrix has shape {D.shape}, expected {(g.n, params.n_clusters)}")
    if not np.all(np.isfinite(D)):
        raise ValidationError("density matrix has non-finite entries")
    rows = D.tolist()
    C = params.n_clusters
    theta = params.theta
    labels = np.asarray(Z).tolist()
    adj = g.adjacency_lists
    changed = 0
    for i in _visit_order(g.n, scan_order, _rng(rng_seed)):
        score = list(rows[i])
        nbrs, wts = adj[i]
        for j, w in zip(nbrs, wts):
            score[labels[j]] += theta * w
        best = 0
        for k in range(1, C):
            if score[k] > score[best]:
                best = k
        if best != labels[i]:
            labels[i] = best
            changed += 1
    return np.asarray(labels, dtype=np.int64), changed


def icm_objective(Z, log_dens, g: NeighborGraph, theta: float) -> float:
    """``sum_i log f(Y_i|Z_i) + theta * sum_{i<j} w_ij [Z_i == Z_j]``."""
    Z = np.asarray(Z)
    D = np.asarray(log_dens)
    data = float(np.sum(D[np.arange(Z.size), Z]))
    rows = np.repeat(np.arange(g.n), g.degree())
    same = Z[rows] == Z[g.indices]
    return data + theta * 0.5 * float(np.sum(g.weights[same]))


def log_pseudo_likelihood(Z, g: NeighborGraph, theta: float, n_clusters: int) -> float:
    counts = neighbor_counts(Z, g, n_clusters)
    return _log_pl_from_counts(counts, np.asarray(Z), theta)


def _log_pl_from_counts(counts, Z, theta):
    u = theta * counts
    own = u[np.arange(Z.size), Z]
    return float(np.sum(own - logsumexp(u, axis=1)))


class ThetaEstimate(NamedTuple):
    theta: float
    at_bound: bool
    log_pl: float


def fit_theta(Z, g: NeighborGraph, n_clusters: int, bounds=(0.0, 10.0), tol: float = 1e-5) -> ThetaEstimate:
    """Maximum pseudo-likelihood interaction by golden-section search.

    The log pseudo-likelihood is concave in theta, so the interval
    maximizer is unique. ``at_bound`` flags an optimum at either end.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ConfigError(f"invalid theta bounds {bounds!r}")
    Z = np.asarray(Z)
    counts = neighbor_counts(Z, g, n_clusters)

    def f(t):
        return _log_pl_from_counts(counts, Z, t)

    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    theta = 0.5 * (a + b)
    best = f(theta)
    for edge in (lo, hi):
        fe = f(edge)
        if fe > best:
            theta, best = edge, fe
    at_bound = theta - lo <= 2 * tol or hi - theta <= 2 * tol
    return ThetaEstimate(theta, bool(at_bound), best)


def discordant_fraction(Z, g: NeighborGraph) -> float:
    """Fraction of edges joining different labels (unweighted)."""
    if g.n_edges == 0:
        return 0.0
    rows = np.repeat(np.arange(g.n), g.degree())
    return float(np.mean(np.asarray(Z)[rows] != np.asarray(Z)[g.indices]))
