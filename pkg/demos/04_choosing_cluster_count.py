"""Choosing the number of regimes with a pseudo-BIC.

The penalized objective replaces the intractable label-prior likelihood
with its pseudo-likelihood, so treat the scores as a heuristic ranking.
"""

from spfclust.fit import FitConfig, n_free_parameters, select_C
from spfclust.simulate import SimSpec, simulate

sim = simulate(SimSpec(n_sites=400, n_clusters=3, seed=8))
best, results = select_C(sim.dataset, sim.graph, FitConfig(n_clusters=[2, 3, 4, 5], seed=0))
print(" C   params   objective     pseudo-BIC")
for C, r in sorted(results.items()):
    mark = "  <- selected" if C == best else ""
    print(f"{C:2d} {n_free_parameters(C, 12):8d} {r.objective:11.1f} {r.pseudo_bic:14.1f}{mark}")
