"""
Kendall's tau-b with tie correction.

``kendall_tau_b`` sorts by (x, y) and counts discordant pairs as merge-sort
inversions of y, which takes O(n log n). ``kendall_tau_b_reference`` counts
every pair directly. Both reduce to the same integer counts and the same
final expression, so they agree exactly. When every value of either input
is tied the coefficient is undefined and both return None.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


def _check(x: Sequence[float], y: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"kendall_tau_b needs two 1-d sequences of equal length, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError("kendall_tau_b needs at least two observations")
    return x, y


def _tau_from_counts(n0: int, x_ties: int, y_ties: int, score: int) -> Optional[float]:
    denominator = (n0 - x_ties) * (n0 - y_ties)
    if denominator == 0:
        return None
    return score / np.sqrt(float(denominator))


def _tied_pairs(values: np.ndarray) -> int:
    _, counts = np.unique(values, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _joint_tied_pairs(x: np.ndarray, y: np.ndarray) -> int:
    _, counts = np.unique(np.stack([x, y], axis=1), axis=0, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _count_inversions(values: np.ndarray) -> int:
    """Pairs i < j with values[i] > values[j], by bottom-up merge sort."""
    a = list(values)
    n = len(a)
    buffer = [0.0] * n
    swaps = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buffer[k] = a[j]
                    swaps += mid - i
                    j += 1
                else:
                    buffer[k] = a[i]
                    i += 1
                k += 1
            buffer[k:hi] = a[i:mid] if i < mid else a[j:hi]
        a, buffer = buffer, a
        width *= 2
    return swaps


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    x, y = _check(x, y)
    n = len(x)
    n0 = n * (n - 1) // 2
    order = np.lexsort((y, x))
    x_ties = _tied_pairs(x)
    y_ties = _tied_pairs(y)
    joint_ties = _joint_tied_pairs(x, y)
    discordant = _count_inversions(y[order])
    # concordant - discordant, with pairs tied in x counted neither way
    score = n0 - x_ties - y_ties + joint_ties - 2 * discordant
    return _tau_from_counts(n0, x_ties, y_ties, score)


def kendall_tau_b_reference(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Pair-counting Kendall tau-b, O(n^2)."""
    x, y = _check(x, y)
    n = len(x)
    concordant = discordant = x_ties = y_ties = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = np.sign(x[i] - x[j])
            dy = np.sign(y[i] - y[j])
            if dx == 0:
                x_ties += 1
            if dy == 0:
                y_ties += 1
            if dx * dy > 0:
                concordant += 1
            elif dx * dy < 0:
                discordant += 1
    return _tau_from_counts(n * (n - 1) // 2, x_ties, y_ties, concordant - discordant)


def correlation_matrix(columns: Dict[str, Sequence[float]]) -> Dict[str, Dict[str, Optional[float]]]:
    """Pairwise tau-b between named columns of equal length (the correlation heatmap data)."""
    names: List[str] = list(columns)
    matrix: Dict[str, Dict[str, Optional[float]]] = {name: {} for name in names}
    for a, name_a in enumerate(names):
        for name_b in names[a:]:
            tau = kendall_tau_b(columns[name_a], columns[name_b])
            matrix[name_a][name_b] = tau
            matrix[name_b][name_a] = tau
    return matrix
