"""Model-based clustering of spatially indexed curves.

Curves are modelled as a mixture of functional linear mixed models whose
cluster labels follow a Potts Markov random field on a site graph with
elevation-aware edges.
"""

__version__ = "0.1.0"

from .basis import BasisSpec, build_lattice_basis, evaluate_basis, orthogonalize
from .curves import AnnualCurve, Dataset, RawObservation, SiteGeometry
from .fit import FitConfig, FitResult, conditional_posteriors, fit, initialize_labels, select_C
from .graph import NeighborGraph, apply_elevation_cutoff, build_site_graph, covariate_weights, knn_graph
from .metrics import adjusted_rand_index
from .model import CovParams, ModelParams, density_matrix, marginal_loglik, m_step
from .mrf import MrfParams, conditional_probs, fit_theta, gibbs_sweep, icm_sweep, log_pseudo_likelihood
from .simulate import SimSpec, simulate
