from .conflict import (
    DEFAULT_QUADRATURE,
    EdgeConflictQuery,
    NodeConflictQuery,
    diff_density,
    diff_mode,
    edge_conflict_bound,
    edge_conflict_prob,
    goal_conflict_bound,
    goal_occupancy_conflict_prob,
    node_conflict_bound,
    node_conflict_prob,
    separation_horizon,
)
from .gamma import GammaParams, gamma_cdf, gamma_pdf, gamma_sf
from .quadrature import QuadratureConfig, QuadratureError, adaptive_simpson

__all__ = [
    "DEFAULT_QUADRATURE",
    "EdgeConflictQuery",
    "GammaParams",
    "NodeConflictQuery",
    "QuadratureConfig",
    "QuadratureError",
    "adaptive_simpson",
    "diff_density",
    "diff_mode",
    "edge_conflict_bound",
    "edge_conflict_prob",
    "gamma_cdf",
    "gamma_pdf",
    "gamma_sf",
    "goal_conflict_bound",
    "goal_occupancy_conflict_prob",
    "node_conflict_bound",
    "node_conflict_prob",
    "separation_horizon",
]
