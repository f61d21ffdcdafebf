"""The Sample & Scrutinize protocol as pure functions.

Golden instances are sampled once and scored by experts offline; each rater
batch is accepted only when its scores correlate strongly enough (SRCC,
strict) with the golden scores it overlaps. Only accepted batches feed MOS
aggregation.
"""

from __future__ import annotations

import math
import random
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ..errors import AggregationError, MetricError, ValidationError
from ..metrics import srcc
from ..types import (
    Annotation,
    AnnotationBatch,
    BatchStatus,
    Dimension,
    GoldenRecord,
    InstanceRecord,
    MosValue,
)

VARIANCE_BIN_WIDTH = 0.1
VARIANCE_RANGE = 4.0  # max population variance of scores in [1, 5]
VARIANCE_THRESHOLD = 0.3


@dataclass(frozen=True)
class QcConfig:
    golden_count: int = 5000
    gate_threshold: float = 0.8
    min_golden_overlap: int = 10
    batch_cap: int = 30
    min_annotations_train: int = 3
    min_annotations_test: int = 12
    golden_injection_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if not (0 < self.gate_threshold <= 1):
            raise ValidationError("gate_threshold", "must be in (0, 1]")
        if self.min_golden_overlap < 2:
            raise ValidationError("min_golden_overlap", "must be at least 2")
        if self.batch_cap < self.min_golden_overlap:
            raise ValidationError("batch_cap", "must be >= min_golden_overlap")
        if not (0 <= self.golden_injection_fraction <= 1):
            raise ValidationError("golden_injection_fraction", "must be in [0, 1]")


DEFAULT_QC_CONFIG = QcConfig()

GoldenStore = Mapping[tuple[str, Dimension], float]


def sample_golden(dataset: Sequence[InstanceRecord], cfg: QcConfig = DEFAULT_QC_CONFIG) -> list[GoldenRecord]:
    """Uniform sample of instances to receive expert golden scores.

    Returns one stub per sampled instance per dimension, golden_score unset
    pending expert entry. Deterministic given cfg.seed.
    """
    cfg.validate()
    if len(dataset) < cfg.golden_count:
        raise ValueError(f"dataset has {len(dataset)} instances, need at least {cfg.golden_count}")
    rng = random.Random(cfg.seed)
    picked = sorted(rng.sample(range(len(dataset)), cfg.golden_count))
    stubs: list[GoldenRecord] = []
    for idx in picked:
        instance = dataset[idx]
        for dim in (Dimension.QUALITY, Dimension.ALIGNMENT):
            stubs.append(GoldenRecord(instance_id=instance.id, dimension=dim, golden_score=None))
    return stubs


@dataclass(frozen=True)
class GateResult:
    verdict: BatchStatus
    srcc: float | None
    overlap_n: int
    reason: str | None = None


def gate_batch(
    batch: AnnotationBatch,
    goldens: GoldenStore,
    cfg: QcConfig = DEFAULT_QC_CONFIG,
) -> GateResult:
    """Accept or reject a pending batch against the golden store.

    Overlap pairs are ordered by (instance, dimension) before correlating, so
    the verdict is invariant to annotation order within the batch.
    """
    cfg.validate()
    if batch.status is not BatchStatus.PENDING:
        raise ValueError(f"batch {batch.batch_id} already gated as {batch.status.value}")
    batch.validate(batch_cap=cfg.batch_cap)

    overlap: list[tuple[tuple[str, str], int, float]] = []
    for a in batch.annotations:
        golden = goldens.get((a.instance_id, a.dimension))
        if golden is not None:
            overlap.append(((a.instance_id, a.dimension.value), a.score, golden))
    overlap.sort(key=lambda item: item[0])

    if len(overlap) < cfg.min_golden_overlap:
        return GateResult(
            verdict=BatchStatus.REJECTED,
            srcc=None,
            overlap_n=len(overlap),
            reason="insufficient overlap",
        )
    rater_scores = [float(score) for _, score, _ in overlap]
    golden_scores = [golden for _, _, golden in overlap]
    try:
        value = srcc(rater_scores, golden_scores)
    except MetricError:
        return GateResult(
            verdict=BatchStatus.REJECTED,
            srcc=None,
            overlap_n=len(overlap),
            reason="degenerate ratings",
        )
    if value > cfg.gate_threshold:
        return GateResult(verdict=BatchStatus.ACCEPTED, srcc=value, overlap_n=len(overlap))
    return GateResult(
        verdict=BatchStatus.REJECTED,
        srcc=value,
        overlap_n=len(overlap),
        reason="correlation below threshold",
    )


def aggregate_mos(
    annotations: Sequence[Annotation],
    split: str,
    cfg: QcConfig = DEFAULT_QC_CONFIG,
) -> MosValue:
    """Mean of the annotations for one (instance, dimension) key."""
    cfg.validate()
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    keys = {(a.instance_id, a.dimension) for a in annotations}
    if len(keys) > 1:
        raise ValueError(f"annotations span multiple keys: {sorted(keys)}")
    minimum = cfg.min_annotations_train if split == "train" else cfg.min_annotations_test
    if len(annotations) < minimum:
        raise AggregationError(
            f"need >={minimum} annotations for {split} split, got {len(annotations)}"
        )
    mos = MosValue(math.fsum(a.score for a in annotations) / len(annotations))
    mos.validate()
    return mos


def plan_campaign(
    n_train: int,
    n_test: int,
    dims: int = 2,
    k_train: int = 3,
    k_test: int = 12,
) -> int:
    """Total annotation count for a campaign: n_train*dims*k_train + n_test*dims*k_test."""
    for name, v in (("n_train", n_train), ("n_test", n_test), ("dims", dims), ("k_train", k_train), ("k_test", k_test)):
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ValueError(f"{name} must be a nonnegative integer, got {v!r}")
    return n_train * dims * k_train + n_test * dims * k_test


@dataclass(frozen=True)
class VarianceStats:
    histogram: tuple[int, ...]  # 40 bins of width 0.1 over [0, 4], last bin closed
    bin_width: float
    fraction_below: float  # fraction of keys with variance < 0.3
    threshold: float
    n_groups: int
    n_skipped: int

    def to_json_dict(self) -> dict:
        return {
            "histogram": list(self.histogram),
            "bin_width": self.bin_width,
            "fraction_below": self.fraction_below,
            "threshold": self.threshold,
            "n_groups": self.n_groups,
            "n_skipped": self.n_skipped,
        }


def population_variance(scores: Sequence[float]) -> float:
    mean = math.fsum(scores) / len(scores)
    return math.fsum((s - mean) ** 2 for s in scores) / len(scores)


def variance_stats(groups: Mapping[object, Sequence[float]] | Iterable[tuple[object, Sequence[float]]]) -> VarianceStats:
    """Per-key population variance summary over annotation groups.

    Groups with fewer than two annotations are skipped with a warning.
    """
    items = groups.items() if isinstance(groups, Mapping) else groups
    n_bins = int(round(VARIANCE_RANGE / VARIANCE_BIN_WIDTH))
    histogram = [0] * n_bins
    below = 0
    n_groups = 0
    skipped = []
    for key, scores in items:
        if len(scores) < 2:
            skipped.append(key)
            continue
        var = population_variance([float(s) for s in scores])
        idx = min(int(var / VARIANCE_BIN_WIDTH), n_bins - 1)
        histogram[idx] += 1
        if var < VARIANCE_THRESHOLD:
            below += 1
        n_groups += 1
    if skipped:
        warnings.warn(f"skipped {len(skipped)} singleton groups: {skipped[:5]}", stacklevel=2)
    fraction = below / n_groups if n_groups else 0.0
    return VarianceStats(
        histogram=tuple(histogram),
        bin_width=VARIANCE_BIN_WIDTH,
        fraction_below=fraction,
        threshold=VARIANCE_THRESHOLD,
        n_groups=n_groups,
        n_skipped=len(skipped),
    )
