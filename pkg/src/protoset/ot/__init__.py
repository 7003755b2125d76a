"""Optimal transport: cost construction, Sinkhorn solver, exact oracle."""

from .cost import (
    METRICS,
    NORM_FLOOR,
    CostMatrix,
    build_cost,
    build_cost_value,
    cosine_cost,
    cosine_cost_value,
    euclidean_cost,
    euclidean_cost_value,
)
from .marginals import (
    SIMPLEX_FLOOR,
    Marginals,
    floor_simplex,
    floor_simplex_value,
    uniform_weights,
)
from .oracle import MAX_ORACLE_SIZE, exact_uniform_ot
from .sinkhorn import (
    GRAD_MODES,
    SinkhornConfig,
    TransportPlan,
    differentiable_transport_loss,
    entropic_objective,
    plan_entropy,
    sinkhorn,
    transport_cost,
)

__all__ = [
    "CostMatrix",
    "GRAD_MODES",
    "MAX_ORACLE_SIZE",
    "METRICS",
    "Marginals",
    "NORM_FLOOR",
    "SIMPLEX_FLOOR",
    "SinkhornConfig",
    "TransportPlan",
    "build_cost",
    "build_cost_value",
    "cosine_cost",
    "cosine_cost_value",
    "differentiable_transport_loss",
    "entropic_objective",
    "euclidean_cost",
    "euclidean_cost_value",
    "exact_uniform_ot",
    "floor_simplex",
    "floor_simplex_value",
    "plan_entropy",
    "sinkhorn",
    "transport_cost",
    "uniform_weights",
]
