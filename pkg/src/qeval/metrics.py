"""Rank and linear correlation at the two evaluation granularities.

srcc uses the tie-safe definition: Pearson correlation of fractional
(average) ranks. Predictions and truth are paired by id intersection;
generator means feed the model-level variant.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import MetricError


@dataclass(frozen=True)
class Correlation:
    srcc: float
    plcc: float
    n: int

    def to_json_dict(self) -> dict:
        return {"srcc": self.srcc, "plcc": self.plcc, "n": self.n}


def _check_pair(x: Sequence[float], y: Sequence[float]) -> None:
    if len(x) != len(y):
        raise MetricError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise MetricError(f"need at least 2 points, got {len(x)}")


def plcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson linear correlation coefficient."""
    _check_pair(x, y)
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = math.fsum((a - mx) ** 2 for a in x)
    vy = math.fsum((b - my) ** 2 for b in y)
    if vx == 0.0 or vy == 0.0:
        raise MetricError("zero variance input")
    return cov / math.sqrt(vx * vy)


def average_ranks(values: Sequence[float]) -> list[float]:
    """Fractional ranks starting at 1; tied values share their average rank."""
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def srcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson over average ranks (tie-safe)."""
    _check_pair(x, y)
    return plcc(average_ranks(x), average_ranks(y))


def _paired(pred: Mapping[str, float], truth: Mapping[str, float]) -> list[str]:
    common = sorted(set(pred) & set(truth))
    dropped = (set(pred) | set(truth)) - set(common)
    if dropped:
        shown = sorted(dropped)[:10]
        warnings.warn(
            f"{len(dropped)} ids present on only one side were dropped: {shown}"
            + ("..." if len(dropped) > len(shown) else ""),
            stacklevel=3,
        )
    if len(common) < 2:
        raise MetricError(f"need at least 2 common ids, got {len(common)}")
    return common


def instance_level(pred: Mapping[str, float], truth: Mapping[str, float]) -> Correlation:
    """Correlations over individual instances, paired by id."""
    ids = _paired(pred, truth)
    xs = [pred[i] for i in ids]
    ys = [truth[i] for i in ids]
    return Correlation(srcc=srcc(xs, ys), plcc=plcc(xs, ys), n=len(ids))


def model_level(
    pred: Mapping[str, float],
    truth: Mapping[str, float],
    generator_of: Mapping[str, str],
) -> Correlation:
    """Correlations across per-generator mean scores."""
    ids = _paired(pred, truth)
    groups: dict[str, list[str]] = {}
    for i in ids:
        gen = generator_of.get(i)
        if gen is None:
            raise MetricError(f"no generator recorded for id {i!r}")
        groups.setdefault(gen, []).append(i)
    if len(groups) < 2:
        raise MetricError(f"need at least 2 generators, got {len(groups)}")
    gens = sorted(groups)
    pred_means = [math.fsum(pred[i] for i in groups[g]) / len(groups[g]) for g in gens]
    truth_means = [math.fsum(truth[i] for i in groups[g]) / len(groups[g]) for g in gens]
    return Correlation(srcc=srcc(pred_means, truth_means), plcc=plcc(pred_means, truth_means), n=len(gens))
