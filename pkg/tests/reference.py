"""Independent brute-force oracles used to check the package implementations.

Everything here is deliberately written from the textbook definitions with
no shared code paths: ranks by counting comparisons, Pearson from raw sums,
gradients by central finite differences.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence


def brute_ranks(values: Sequence[float]) -> list[float]:
    """Average ranks via pairwise counting (O(n^2), no sorting)."""
    ranks = []
    for v in values:
        less = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        ranks.append(less + (equal + 1) / 2.0)
    return ranks


def brute_pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    num = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    den = math.sqrt(math.fsum((a - mx) ** 2 for a in x)) * math.sqrt(math.fsum((b - my) ** 2 for b in y))
    return num / den


def brute_spearman(x: Sequence[float], y: Sequence[float]) -> float:
    return brute_pearson(brute_ranks(x), brute_ranks(y))


def spearman_d2(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-free textbook formula 1 - 6*sum(d^2) / (n(n^2-1))."""
    rx = brute_ranks(x)
    ry = brute_ranks(y)
    n = len(x)
    d2 = math.fsum((a - b) ** 2 for a, b in zip(rx, ry))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def central_difference_grad(
    f: Callable[[Sequence[float]], float],
    point: Sequence[float],
    h: float = 1e-6,
) -> list[float]:
    grad = []
    for j in range(len(point)):
        plus = list(point)
        minus = list(point)
        plus[j] += h
        minus[j] -= h
        grad.append((f(plus) - f(minus)) / (2.0 * h))
    return grad


def brute_population_variance(values: Sequence[float]) -> float:
    n = len(values)
    mean = math.fsum(values) / n
    return math.fsum((v - mean) ** 2 for v in values) / n
