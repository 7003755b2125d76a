"""Brute-force exact transport for uniform marginals on square problems.

With uniform marginals on both sides of a square cost matrix, the transport
polytope's vertices are the permutation matrices, so the exact optimum is the
best assignment averaged over n.  Enumeration is factorial, hence the hard
size cap; this exists as an independent check on the solver, not as a tool.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from ..errors import DomainError, ShapeError
from .cost import CostMatrix

MAX_ORACLE_SIZE = 7


def exact_uniform_ot(cost) -> float:
    """min over permutations of mean_i C[i, sigma(i)]."""
    C = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ShapeError(f"oracle needs a square cost matrix, got shape {C.shape}")
    n = C.shape[0]
    if n > MAX_ORACLE_SIZE:
        raise DomainError(
            f"permutation oracle enumerates n! assignments; refusing n={n} > {MAX_ORACLE_SIZE}"
        )
    rows = np.arange(n)
    best = min(C[rows, perm].sum() for perm in permutations(range(n)))
    return float(best) / n
