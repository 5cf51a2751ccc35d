"""Entropic optimal transport and the small-temperature expansion of its value.

Modules
-------
measures   discretized probability measures on boxes and segments
costs      cost models, derivatives and the constants they satisfy
exact_ot   transportation simplex, Kantorovich potentials, oracles
sinkhorn   log-domain Sinkhorn, entropic cost ladders, Sinkhorn divergence
blocks     grid entropy, entropy dimension, block approximation
gap        duality gap field, rotated coordinates, Laplace integrals, stability
rates      temperature sweeps and the two-term rate fit
cli        ``eotr`` command line tool
"""

from .costs import CostConstants, CostModel, cost_matrix
from .exact_ot import Coupling, DualPair, brute_force_oracle, monotone_1d, solve_exact
from .measures import DensitySpec, DiscreteMeasure, grid_measure, segment_measure, validate
from .rates import Instance, RateFit, SweepTable, debiased_fit, fit_rate, sweep
from .sinkhorn import SinkhornConfig, SinkhornResult, solve_sinkhorn

__version__ = "0.1.0"

__all__ = [
    "CostConstants",
    "CostModel",
    "Coupling",
    "DensitySpec",
    "DiscreteMeasure",
    "DualPair",
    "Instance",
    "RateFit",
    "SinkhornConfig",
    "SinkhornResult",
    "SweepTable",
    "brute_force_oracle",
    "cost_matrix",
    "debiased_fit",
    "fit_rate",
    "grid_measure",
    "monotone_1d",
    "segment_measure",
    "solve_exact",
    "solve_sinkhorn",
    "sweep",
    "validate",
]
