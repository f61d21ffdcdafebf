"""Pure numeric core: MOS binning, rating-token fusion, and the loss terms.

All functions are pure and reentrant. Probability vectors are indexed
Excellent -> Bad throughout, matching ProbabilityVector5.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError
from .types import MosValue, ProbabilityVector5, RatingLevel, mos_float

# Probability floor applied inside ce_loss so a zero at the hot index yields
# a large finite loss instead of infinity.
CE_PROB_FLOOR = 1e-12

# Rating levels in ascending bin order (bin 1 .. bin 5).
_LEVELS_ASC = (RatingLevel.BAD, RatingLevel.POOR, RatingLevel.FAIR, RatingLevel.GOOD, RatingLevel.EXCELLENT)


@dataclass(frozen=True)
class RatingWeights:
    """Numerical weight per rating level, indexed Excellent -> Bad."""

    w: tuple[float, float, float, float, float] = (1.0, 0.75, 0.5, 0.25, 0.0)

    def validate(self) -> None:
        if len(self.w) != 5:
            raise ValidationError("w", f"must have 5 entries, got {len(self.w)}")
        for a, b in zip(self.w, self.w[1:]):
            if not a > b:
                raise ValidationError("w", "weights must be strictly decreasing Excellent -> Bad")


DEFAULT_RATING_WEIGHTS = RatingWeights()


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights of the cross-entropy and squared-error terms."""

    alpha1: float = 1.0
    beta1: float = 1.0

    def validate(self) -> None:
        if self.alpha1 < 0 or self.beta1 < 0:
            raise ValidationError("alpha1", "loss weights must be nonnegative")
        if self.alpha1 + self.beta1 <= 0:
            raise ValidationError("alpha1", "alpha1 + beta1 must be positive")


DEFAULT_LOSS_WEIGHTS = LossWeights()


def mos_to_rating(s: MosValue | float, m: float = 1.0, M: float = 5.0) -> RatingLevel:
    """Map a MOS value onto the five-level rating vocabulary.

    The range [m, M] is cut into five equal bins; bin i (1-based, ascending)
    covers m + (i-1)/5*(M-m) < s <= m + i/5*(M-m). The lowest bin is closed
    below so s = m maps to Bad.
    """
    s = mos_float(s)
    if not m < M:
        raise ValueError(f"invalid range: m={m} must be < M={M}")
    if not (m <= s <= M):
        raise ValueError(f"MOS {s} outside [{m}, {M}]")
    span = M - m
    for i, level in enumerate(_LEVELS_ASC, start=1):
        if s <= m + i * span / 5.0:
            return level
    return RatingLevel.EXCELLENT


def fuse(p: ProbabilityVector5, w: RatingWeights = DEFAULT_RATING_WEIGHTS) -> float:
    """Weighted average of rating probabilities: sum_j p_j * w_j."""
    p.validate()
    w.validate()
    return math.fsum(pj * wj for pj, wj in zip(p.p, w.w))


def normalize_mos(s: MosValue | float) -> float:
    """Map MOS in [1, 5] onto [0, 1] via (s - 1) / 4."""
    s = mos_float(s)
    if not (1.0 <= s <= 5.0):
        raise ValueError(f"MOS {s} outside [1, 5]")
    return (s - 1.0) / 4.0


def denormalize(t: float) -> MosValue:
    """Inverse of normalize_mos: 1 + 4t."""
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"normalized score {t} outside [0, 1]")
    return MosValue(1.0 + 4.0 * t)


def _check_one_hot(y: Sequence[float]) -> int:
    if len(y) != 5:
        raise ValueError(f"one-hot vector must have 5 entries, got {len(y)}")
    hot = [i for i, v in enumerate(y) if v != 0.0]
    if len(hot) != 1 or y[hot[0]] != 1.0:
        raise ValueError(f"not a one-hot vector: {tuple(y)}")
    return hot[0]


def ce_loss(y: Sequence[float], p: ProbabilityVector5) -> float:
    """Cross entropy -sum_i y_i log(p_i) with natural log.

    A probability of zero at the hot index is clamped to 1e-12 (with a
    warning) so the loss stays finite.
    """
    hot = _check_one_hot(y)
    p.validate()
    p_hot = p.p[hot]
    if p_hot < CE_PROB_FLOOR:
        warnings.warn(
            f"probability {p_hot!r} at the hot index clamped to {CE_PROB_FLOOR}",
            RuntimeWarning,
            stacklevel=2,
        )
        p_hot = CE_PROB_FLOOR
    return -math.log(p_hot)


def mse_loss(
    p: ProbabilityVector5,
    mos_norm: float,
    w: RatingWeights = DEFAULT_RATING_WEIGHTS,
) -> float:
    """Squared error between the fused score and the normalized MOS label."""
    if not (0.0 <= mos_norm <= 1.0):
        raise ValueError(f"mos_norm {mos_norm} outside [0, 1]")
    residual = fuse(p, w) - mos_norm
    return residual * residual


def mse_grad(
    p: ProbabilityVector5,
    mos_norm: float,
    w: RatingWeights = DEFAULT_RATING_WEIGHTS,
) -> tuple[float, float, float, float, float]:
    """Gradient of mse_loss in p: component j is 2*(fuse(p) - mos_norm)*w_j."""
    if not (0.0 <= mos_norm <= 1.0):
        raise ValueError(f"mos_norm {mos_norm} outside [0, 1]")
    residual = fuse(p, w) - mos_norm
    return tuple(2.0 * residual * wj for wj in w.w)  # type: ignore[return-value]


def combined_loss(ce: float, mse: float, lw: LossWeights = DEFAULT_LOSS_WEIGHTS) -> float:
    """Total loss alpha1 * ce + beta1 * mse."""
    if ce < 0 or mse < 0:
        raise ValueError("loss terms must be nonnegative")
    lw.validate()
    return lw.alpha1 * ce + lw.beta1 * mse


def one_hot(level: RatingLevel) -> tuple[float, float, float, float, float]:
    """One-hot vector for a rating level, indexed Excellent -> Bad."""
    idx = 5 - level.value
    return tuple(1.0 if i == idx else 0.0 for i in range(5))  # type: ignore[return-value]
