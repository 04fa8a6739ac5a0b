"""Basis functions and the normalization that pins down cluster means.

A random-effect model with a free basis is only identified up to an
invertible change of coordinates. We fix it by requiring the lattice basis
to be orthonormal in the marginal-covariance metric, then check that the
likelihood does not notice.
"""

import numpy as np

from spfclust.basis import BasisSpec, build_lattice_basis, constraint_matrix, orthogonalize
from spfclust.model import CovParams, marginal_loglik

rng = np.random.default_rng(0)
spec = BasisSpec("bspline", q=10, order=4)
lattice = build_lattice_basis(spec, 365)
S = lattice.values
print(f"lattice basis: {S.shape[0]} days x {S.shape[1]} functions")
print(f"row sums (partition of unity): min {S.sum(axis=1).min():.12f}, max {S.sum(axis=1).max():.12f}")

A = rng.normal(size=(10, 10))
gamma = 0.05 * A @ A.T
sigma2 = 0.8
M = constraint_matrix(S, gamma, sigma2)
print(f"before: max |M - I| = {np.abs(M - np.eye(10)).max():.3f}")

tr = orthogonalize(S, gamma, sigma2)
T = tr.T
Tinv = tr.inverse
M2 = constraint_matrix(S @ T, Tinv @ gamma @ Tinv.T, sigma2)
print(f"after:  max |M - I| = {np.abs(M2 - np.eye(10)).max():.2e}")

# the same curve scored in both coordinate systems
alpha = rng.normal(size=10)
y = S @ alpha + rng.normal(size=365)
g2 = Tinv @ gamma @ Tinv.T
before = marginal_loglik(y, S, alpha, CovParams(gamma, sigma2))
after = marginal_loglik(y, S @ T, Tinv @ alpha, CovParams(0.5 * (g2 + g2.T), sigma2))
print(f"log-likelihood raw {before:.6f}, normalized {after:.6f}")
