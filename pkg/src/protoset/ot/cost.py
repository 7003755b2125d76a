"""Pairwise cost matrices between a point batch and a prototype bank.

Points are stored row-wise (N, d); prototypes column-wise (d, K).  Each
builder has a plain-numpy variant and a graph-building variant so the same
formulas serve both the solver and the differentiable loss path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import Value, as_value
from ..errors import DegenerateInputError, ShapeError

NORM_FLOOR = 1e-12
_SQDIST_FLOOR = 1e-18

METRICS = ("cosine", "euclidean", "sqeuclidean")


@dataclass(frozen=True)
class CostMatrix:
    """An (N, K) nonnegative cost array plus the metric that built it."""

    values: np.ndarray
    metric: str

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"cost matrix must be 2-D, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DegenerateInputError("cost matrix contains non-finite entries")

    @property
    def shape(self) -> tuple:
        return self.values.shape


def _check_pair(points: np.ndarray, protos: np.ndarray) -> None:
    if points.ndim != 2 or protos.ndim != 2:
        raise ShapeError(
            f"expected points (N, d) and prototypes (d, K), got {points.shape} and {protos.shape}"
        )
    if points.shape[1] != protos.shape[0]:
        raise ShapeError(
            f"dimension mismatch: points are {points.shape[1]}-dimensional, "
            f"prototypes are {protos.shape[0]}-dimensional"
        )


def _guard_norms(sq_norms: np.ndarray, what: str) -> None:
    bad = sq_norms < NORM_FLOOR**2
    if bad.any():
        idx = int(np.argmax(bad))
        raise DegenerateInputError(
            f"{what} {idx} has norm below {NORM_FLOOR:g}; cosine cost is undefined for it"
        )


def cosine_cost(points: np.ndarray, protos: np.ndarray) -> CostMatrix:
    """C[i, k] = 1 - cos(x_i, b_k), clamped to [0, 2].

    Scale-invariant in both arguments.  Vectors with norm below 1e-12 are
    rejected outright rather than silently normalized.
    """
    points = np.asarray(points, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    _check_pair(points, protos)
    p_sq = (points * points).sum(axis=1)
    b_sq = (protos * protos).sum(axis=0)
    _guard_norms(p_sq, "point")
    _guard_norms(b_sq, "prototype column")
    cos = (points @ protos) / np.sqrt(p_sq)[:, None] / np.sqrt(b_sq)[None, :]
    return CostMatrix(np.clip(1.0 - cos, 0.0, 2.0), "cosine")


def euclidean_cost(points: np.ndarray, protos: np.ndarray, squared: bool = False) -> CostMatrix:
    points = np.asarray(points, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    _check_pair(points, protos)
    p_sq = (points * points).sum(axis=1)
    b_sq = (protos * protos).sum(axis=0)
    sq = np.maximum(p_sq[:, None] + b_sq[None, :] - 2.0 * (points @ protos), 0.0)
    if squared:
        return CostMatrix(sq, "sqeuclidean")
    return CostMatrix(np.sqrt(sq), "euclidean")


def cosine_cost_value(points, protos) -> Value:
    """Differentiable twin of :func:`cosine_cost`; operands may be Values."""
    x = as_value(points)
    b = as_value(protos)
    _check_pair(x.data, b.data)
    x_sq = (x * x).sum(axis=1, keepdims=True)
    b_sq = (b * b).sum(axis=0, keepdims=True)
    _guard_norms(x_sq.data.reshape(-1), "point")
    _guard_norms(b_sq.data.reshape(-1), "prototype column")
    cos = (x / x_sq.sqrt()) @ (b / b_sq.sqrt())
    return (1.0 - cos).clip(0.0, 2.0)


def euclidean_cost_value(points, protos, squared: bool = False) -> Value:
    x = as_value(points)
    b = as_value(protos)
    _check_pair(x.data, b.data)
    x_sq = (x * x).sum(axis=1, keepdims=True)
    b_sq = (b * b).sum(axis=0, keepdims=True)
    sq = (x_sq + b_sq - 2.0 * (x @ b)).clip(0.0, None)
    if squared:
        return sq
    # floor keeps the sqrt gradient finite when a point sits on a prototype
    return sq.clip(_SQDIST_FLOOR, None).sqrt()


def build_cost_value(points, protos, metric: str) -> Value:
    if metric == "cosine":
        return cosine_cost_value(points, protos)
    if metric == "euclidean":
        return euclidean_cost_value(points, protos)
    if metric == "sqeuclidean":
        return euclidean_cost_value(points, protos, squared=True)
    raise ShapeError(f"unknown cost metric {metric!r}")


def build_cost(points: np.ndarray, protos: np.ndarray, metric: str) -> CostMatrix:
    if metric == "cosine":
        return cosine_cost(points, protos)
    if metric == "euclidean":
        return euclidean_cost(points, protos)
    if metric == "sqeuclidean":
        return euclidean_cost(points, protos, squared=True)
    raise ShapeError(f"unknown cost metric {metric!r}")
