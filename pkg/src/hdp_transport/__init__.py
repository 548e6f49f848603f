"""Optimal transport over hierarchies of Dirichlet random measures.

Submodules
----------
transport
    Discrete measures, exact W_r and coupling validation.
random_measures
    Stick-breaking, Dirichlet and hierarchical Dirichlet samplers.
hierarchy
    Nested transport between ensembles and the Dirichlet coupling bracket.
kernels
    Location kernels, marginal likelihoods, divergences, smoothness classes.
deconvolution
    eta-MLE demixing and plug-in base estimates.
sparse_geometry
    Coverings, gauges and sparsity classification of supports.
regularity
    Dirichlet density-ratio test sets and tube measures.
experiments
    Seeded experiments with verdicts; driven by the ``hdp-transport`` CLI.
"""

from __future__ import annotations

from .errors import *  # noqa: F401,F403
from .hierarchy import MeasureEnsemble, nested_wasserstein
from .random_measures import StickBreakingTruncation, UniformBoxSampler, sample_dp, sample_hdp, tail_mass_bound
from .transport import BoundedDomain, Coupling, DiscreteMeasure, TransportResult, validate_coupling, wasserstein

__version__ = "0.1.0"

__all__ = [
    "BoundedDomain",
    "Coupling",
    "DiscreteMeasure",
    "MeasureEnsemble",
    "StickBreakingTruncation",
    "TransportResult",
    "UniformBoxSampler",
    "nested_wasserstein",
    "sample_dp",
    "sample_hdp",
    "tail_mass_bound",
    "validate_coupling",
    "wasserstein",
]
