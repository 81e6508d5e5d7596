"""Bipartite matching between predicted queries and target segments."""

from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..core.exceptions import DimensionError, NumericalError

Assignment = List[Tuple[int, int]]


def hungarian_match(cost: np.ndarray) -> Assignment:
    """Minimum-cost one-to-one assignment of ``min(n, m)`` (row, col) pairs, sorted by row."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DimensionError(f"cost matrix must be 2-d, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise NumericalError("cost matrix contains NaN or infinite entries")
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def assignment_cost(cost: np.ndarray, assignment: Assignment) -> float:
    return float(sum(cost[r, c] for r, c in assignment))
