"""Spatial neighbour graphs with elevation-based edge weights."""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy import sparse

from .curves import SiteGeometry
from .errors import ConfigError, ValidationError

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Symmetric weighted graph in CSR layout.

    Neighbour lists are sorted by site index. ``weights[e]`` is the weight
    of the edge stored at ``indices[e]``.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int, float]]) -> "NeighborGraph":
        """Build from undirected (i, j, w) triples; each pair may appear once."""
        rows, cols, vals = [], [], []
        seen = set()
        for i, j, w in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValidationError(f"self-loop at site {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValidationError(f"duplicate edge {key}")
            if not (math.isfinite(w) and w >= 0):
                raise ValidationError(f"edge {key} has invalid weight {w!r}")
            seen.add(key)
            rows += [i, j]
            cols += [j, i]
            vals += [float(w), float(w)]
        m = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        m.sort_indices()
        return cls(n, m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(float))

    @classmethod
    def empty(cls, n: int) -> "NeighborGraph":
        return cls.from_edges(n, [])

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def neighbor_weights(self, i: int) -> np.ndarray:
        return self.weights[self.indptr[i] : self.indptr[i + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return int(self.indices.size // 2)

    def edges(self) -> List[Tuple[int, int, float]]:
        """Undirected edges (i < j) in lexicographic order."""
        out = []
        for i in range(self.n):
            for j, w in zip(self.neighbors(i), self.neighbor_weights(i)):
                if i < j:
                    out.append((i, int(j), float(w)))
        return out

    def to_sparse(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.weights, self.indices, self.indptr), shape=(self.n, self.n))

    @cached_property
    def adjacency_lists(self):
        """Python lists ``(nbrs, wts)`` per site, for tight scalar loops."""
        ind = self.indices.tolist()
        wts = self.weights.tolist()
        ptr = self.indptr.tolist()
        return [(ind[ptr[i] : ptr[i + 1]], wts[ptr[i] : ptr[i + 1]]) for i in range(self.n)]

    def scaled(self, c: float) -> "NeighborGraph":
        return NeighborGraph(self.n, self.indptr, self.indices, self.weights * c)


def haversine_distance(a: SiteGeometry, b: SiteGeometry) -> float:
    """Great-circle distance in kilometres."""
    return float(
        haversine_matrix(
            np.array([a.latitude]), np.array([a.longitude]),
            np.array([b.latitude]), np.array([b.longitude]),
        )[0, 0]
    )


def haversine_matrix(lat1, lon1, lat2=None, lon2=None) -> np.ndarray:
    if lat2 is None:
        lat2, lon2 = lat1, lon1
    p1, p2 = np.radians(lat1)[:, None], np.radians(lat2)[None, :]
    dphi = p2 - p1
    dlmb = np.radians(lon2)[None, :] - np.radians(lon1)[:, None]
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def knn_graph(sites: Sequence[SiteGeometry], k: int = 5) -> NeighborGraph:
    """Symmetrized k-nearest-neighbour graph with unit weights.

    Each site is linked to its k nearest sites by great-circle distance
    (ties broken by site position in ``sites``); the union of the directed
    links gives the undirected edge set.
    """
    n = len(sites)
    if k < 1:
        raise ConfigError("k must be >= 1")
    ids = [s.site_id for s in sites]
    if len(set(ids)) != n:
        raise ValidationError("duplicate site ids in geometry")
    if n < k + 1:
        raise ValidationError(f"need at least k+1={k + 1} sites, got {n}")
    lat = np.array([s.latitude for s in sites])
    lon = np.array([s.longitude for s in sites])
    dist = haversine_matrix(lat, lon)
    order = np.arange(n)
    pairs = set()
    for i in range(n):
        d = dist[i].copy()
        d[i] = np.inf
        nearest = np.lexsort((order, d))[:k]
        for j in nearest:
            pairs.add((min(i, int(j)), max(i, int(j))))
    return NeighborGraph.from_edges(n, ((i, j, 1.0) for i, j in sorted(pairs)))


def _elevations(sites, n):
    elev = np.array([s.elevation for s in sites], dtype=float)
    if elev.size != n:
        raise ValidationError("geometry is not aligned with the graph")
    return elev


def apply_elevation_cutoff(
    g: NeighborGraph, sites: Sequence[SiteGeometry], threshold_m: float = 1000.0
) -> NeighborGraph:
    """Drop every edge whose elevation difference is strictly above ``threshold_m``."""
    elev = _elevations(sites, g.n)
    kept = [(i, j, w) for i, j, w in g.edges() if abs(elev[i] - elev[j]) <= threshold_m]
    return NeighborGraph.from_edges(g.n, kept)


def covariate_weights(
    g: NeighborGraph,
    sites: Sequence[SiteGeometry],
    scheme: str = "binary_cutoff",
    threshold_m: float = 1000.0,
    h_m: float = 1000.0,
) -> NeighborGraph:
    """Attach elevation-dependent weights to existing edges.

    ``binary_cutoff`` keeps unit weights and removes edges above
    ``threshold_m``; ``exp_decay`` sets ``w = exp(-|dz| / h_m)``.
    """
    if scheme == "binary_cutoff":
        if not threshold_m > 0:
            raise ConfigError("elevation threshold must be positive")
        return apply_elevation_cutoff(g, sites, threshold_m)
    if scheme == "exp_decay":
        if not h_m > 0:
            raise ConfigError("exp_decay scale h_m must be positive")
        elev = _elevations(sites, g.n)
        return NeighborGraph.from_edges(
            g.n, [(i, j, w * math.exp(-abs(elev[i] - elev[j]) / h_m)) for i, j, w in g.edges()]
        )
    raise ConfigError(f"unknown weight scheme {scheme!r}")


def build_site_graph(
    sites: Sequence[SiteGeometry],
    k: int = 5,
    elevation_cutoff_m: float = 1000.0,
    weight_scheme: str = "binary_cutoff",
    exp_decay_h_m: float = 1000.0,
) -> NeighborGraph:
    """kNN graph, elevation cutoff, then optional smooth reweighting."""
    g = knn_graph(sites, k)
    if math.isfinite(elevation_cutoff_m):
        g = apply_elevation_cutoff(g, sites, elevation_cutoff_m)
    if weight_scheme == "exp_decay":
        g = covariate_weights(g, sites, "exp_decay", h_m=exp_decay_h_m)
    elif weight_scheme != "binary_cutoff":
        raise ConfigError(f"unknown weight scheme {weight_scheme!r}")
    return g
