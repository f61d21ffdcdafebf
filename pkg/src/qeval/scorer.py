"""End-to-end scoring: route each (instance, dimension) to the right pipeline.

Quality always goes through the rating-distribution path; alignment switches
to the Vague-to-Specific pipeline above the long-prompt threshold. Batch
scoring runs a bounded worker pool but always emits reports in input order,
and per-instance failures become error records instead of aborting the run.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Sequence

from .backend import Backend, BackendConfig, RatingQuery, prepare_media
from .errors import BackendError, DecompositionError, ProtocolError, ValidationError
from .prompts import build_alignment_prompt, build_quality_prompt
from .rating import DEFAULT_RATING_WEIGHTS, RatingWeights, fuse
from .types import Dimension, DimensionScore, InstanceRecord, ScoreReport
from .v2s import DEFAULT_V2S_CONFIG, V2sConfig, is_long_prompt, score_alignment_long

DEFAULT_MAX_INFLIGHT = 8

# Stable dimension ordering inside reports: quality before alignment.
_DIM_ORDER = (Dimension.QUALITY, Dimension.ALIGNMENT)


@dataclass(frozen=True)
class InputError:
    """A batch item that failed before scoring (undecodable or invalid)."""

    message: str
    instance_id: str | None = None
    line: int | None = None

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"instance_id": self.instance_id, "error": self.message}
        if self.line is not None:
            out["line"] = self.line
        return out


def _single_query_score(
    instance: InstanceRecord,
    dim: Dimension,
    backend: Backend,
    media: tuple[str, ...],
    weights: RatingWeights,
) -> DimensionScore:
    builder = build_quality_prompt if dim is Dimension.QUALITY else build_alignment_prompt
    query = RatingQuery(
        messages=builder(instance.kind, instance.prompt),
        media=media,
        instance_id=instance.id,
        dimension=dim,
    )
    probs = backend.rating_distribution(query)
    return DimensionScore.from_score(fuse(probs, weights), probabilities=probs)


def score_instance(
    instance: InstanceRecord,
    dims: Sequence[Dimension],
    rating_backend: Backend,
    text_backend: Backend | None = None,
    backend_cfg: BackendConfig | None = None,
    v2s_cfg: V2sConfig = DEFAULT_V2S_CONFIG,
    weights: RatingWeights = DEFAULT_RATING_WEIGHTS,
) -> ScoreReport:
    """Score one instance on the requested dimensions.

    Backend failures are recorded per dimension; the other dimensions are
    still scored. An invalid instance raises instead.
    """
    instance.validate()
    if not dims:
        raise ValueError("dims must be nonempty")
    text_backend = text_backend or rating_backend
    backend_cfg = backend_cfg or BackendConfig()
    media = prepare_media(instance, backend_cfg)

    results: list[tuple[Dimension, DimensionScore]] = []
    for dim in _DIM_ORDER:
        if dim not in dims:
            continue
        try:
            if dim is Dimension.ALIGNMENT and is_long_prompt(instance.prompt, v2s_cfg):
                breakdown = score_alignment_long(
                    instance, rating_backend, text_backend, v2s_cfg, backend_cfg, weights
                )
                entry = DimensionScore.from_score(breakdown.a_f, v2s=breakdown)
            else:
                entry = _single_query_score(instance, dim, rating_backend, media, weights)
        except (BackendError, ProtocolError, DecompositionError) as exc:
            entry = DimensionScore.from_error(str(exc))
        results.append((dim, entry))

    report = ScoreReport(instance_id=instance.id, backend_id=rating_backend.id, results=tuple(results))
    report.validate()
    return report


def score_batch(
    items: Iterable[InstanceRecord | InputError],
    dims: Sequence[Dimension],
    rating_backend: Backend,
    text_backend: Backend | None = None,
    backend_cfg: BackendConfig | None = None,
    v2s_cfg: V2sConfig = DEFAULT_V2S_CONFIG,
    weights: RatingWeights = DEFAULT_RATING_WEIGHTS,
    max_inflight: int = DEFAULT_MAX_INFLIGHT,
) -> Iterator[ScoreReport | InputError]:
    """Score a stream of instances, preserving input order.

    At most max_inflight instances are being scored at any moment. Items that
    arrive as InputError (bad input lines) pass through in position; scoring
    failures are converted to InputError records rather than raised.
    """
    if max_inflight < 1:
        raise ValueError("max_inflight must be at least 1")

    def work(item: InstanceRecord | InputError) -> ScoreReport | InputError:
        if isinstance(item, InputError):
            return item
        try:
            return score_instance(
                item, dims, rating_backend, text_backend, backend_cfg, v2s_cfg, weights
            )
        except ValidationError as exc:
            return InputError(message=str(exc), instance_id=item.id or None)
        except Exception as exc:  # per-instance isolation: the batch survives
            return InputError(message=f"{type(exc).__name__}: {exc}", instance_id=item.id or None)

    with ThreadPoolExecutor(max_workers=max_inflight) as pool:
        window: deque[Future] = deque()
        for item in items:
            while len(window) >= max_inflight:
                yield window.popleft().result()
            window.append(pool.submit(work, item))
        while window:
            yield window.popleft().result()
