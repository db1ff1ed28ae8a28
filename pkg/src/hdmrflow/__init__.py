"""Stochastic two-phase flow with hybrid HDMR, Smolyak collocation and
mixed multiscale finite elements."""

from .field import (CovarianceSpec, KLBasis, StructuredGrid, build_covariance, compute_kle,
                    energy_fraction, log_field, realize_field)
from .hdmr import (adaptive_stats, build_adaptive, build_hybrid, complexity_counts, cut_to_anova,
                   evaluate_adaptive, evaluate_hybrid, hybrid_stats, sensitivity_select)
from .sparsegrid import build_sparse_grid, count_nodes, interpolate, quadrature, variance_from_grid

__version__ = "0.1.0"

__all__ = [
    "CovarianceSpec", "KLBasis", "StructuredGrid", "build_covariance", "compute_kle",
    "energy_fraction", "log_field", "realize_field",
    "adaptive_stats", "build_adaptive", "build_hybrid", "complexity_counts", "cut_to_anova",
    "evaluate_adaptive", "evaluate_hybrid", "hybrid_stats", "sensitivity_select",
    "build_sparse_grid", "count_nodes", "interpolate", "quadrature", "variance_from_grid",
]
