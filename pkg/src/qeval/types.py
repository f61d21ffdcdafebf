"""Core domain types: validated value objects and their JSONL codecs.

Everything here is an immutable dataclass with a `validate()` method; no
behavior beyond validation lives in this module. JSONL encoding uses the
field names of the dataclasses verbatim (lower_snake_case) with one object
per line.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Iterable, Iterator, TextIO

from .errors import ValidationError

PROBABILITY_SUM_TOL = 1e-9
RESCALE_TOL = 1e-12
DEFAULT_BATCH_CAP = 30

MOS_MIN = 1.0
MOS_MAX = 5.0

# Marker substituted for the visual content inside prompt text; backends
# replace it with the actual image/frame payload.
MEDIA_PLACEHOLDER = "<media>"


class MediaKind(str, Enum):
    IMAGE = "image"
    VIDEO = "video"


class Dimension(str, Enum):
    QUALITY = "quality"
    ALIGNMENT = "alignment"


@functools.total_ordering
class RatingLevel(Enum):
    """Five-level rating vocabulary, totally ordered Bad < ... < Excellent."""

    BAD = 1
    POOR = 2
    FAIR = 3
    GOOD = 4
    EXCELLENT = 5

    @property
    def word(self) -> str:
        """Canonical surface form, e.g. ``"Excellent"``."""
        return self.name.capitalize()

    @classmethod
    def from_word(cls, word: str) -> "RatingLevel":
        try:
            return cls[word.upper()]
        except KeyError:
            raise ValidationError("rating", f"unknown rating word {word!r}") from None

    def __lt__(self, other: "RatingLevel") -> bool:
        if not isinstance(other, RatingLevel):
            return NotImplemented
        return self.value < other.value


# Index order shared by probability vectors and rating weights.
RATING_ORDER_DESC: tuple[RatingLevel, ...] = (
    RatingLevel.EXCELLENT,
    RatingLevel.GOOD,
    RatingLevel.FAIR,
    RatingLevel.POOR,
    RatingLevel.BAD,
)
RATING_WORDS_DESC: tuple[str, ...] = tuple(r.word for r in RATING_ORDER_DESC)


@dataclass(frozen=True)
class Message:
    """One conversational turn; text may contain the media placeholder."""

    role: str
    text: str

    def validate(self) -> None:
        if self.role not in ("user", "assistant"):
            raise ValidationError("role", f"must be 'user' or 'assistant', got {self.role!r}")
        if not isinstance(self.text, str):
            raise ValidationError("text", "must be a string")


@dataclass(frozen=True)
class InstanceRecord:
    """One generated image/video with its generation prompt and generator."""

    id: str
    prompt: str
    media: tuple[str, ...]
    kind: MediaKind
    generator_id: str
    duration_s: float | None = None

    def validate(self) -> None:
        if not self.id:
            raise ValidationError("id", "must be nonempty")
        if not self.media:
            raise ValidationError("media", "must be nonempty")
        # A video held as a single file reference needs its duration so frame
        # timestamps can be sampled; pre-extracted frames (several refs) and
        # images must not carry one.
        is_single_video_file = self.kind is MediaKind.VIDEO and len(self.media) == 1
        if is_single_video_file and self.duration_s is None:
            raise ValidationError("duration_s", "required for a single video file")
        if not is_single_video_file and self.duration_s is not None:
            raise ValidationError("duration_s", "only allowed for a single video file")
        if self.duration_s is not None and self.duration_s < 0:
            raise ValidationError("duration_s", "must be nonnegative")

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "prompt": self.prompt,
            "media": list(self.media),
            "kind": self.kind.value,
            "generator_id": self.generator_id,
        }
        if self.duration_s is not None:
            out["duration_s"] = self.duration_s
        return out

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> "InstanceRecord":
        rec = cls(
            id=d["id"],
            prompt=d["prompt"],
            media=tuple(d["media"]),
            kind=MediaKind(d["kind"]),
            generator_id=d["generator_id"],
            duration_s=d.get("duration_s"),
        )
        rec.validate()
        return rec


@dataclass(frozen=True)
class MosValue:
    """Mean opinion score on the 1-5 scale."""

    value: float

    def validate(self) -> None:
        if not (MOS_MIN <= self.value <= MOS_MAX):
            raise ValidationError("value", f"must satisfy {MOS_MIN} <= value <= {MOS_MAX}, got {self.value}")


def mos_float(s: "MosValue | float") -> float:
    """Accept either a bare float or a MosValue and return the float."""
    return float(s.value) if isinstance(s, MosValue) else float(s)


@dataclass(frozen=True)
class ProbabilityVector5:
    """Distribution over the five rating levels, indexed Excellent -> Bad."""

    p: tuple[float, float, float, float, float]

    def validate(self) -> None:
        if len(self.p) != 5:
            raise ValidationError("p", f"must have 5 entries, got {len(self.p)}")
        for j, pj in enumerate(self.p):
            if pj < 0 or math.isnan(pj):
                raise ValidationError("p", f"p[{j}] = {pj} is negative")
        total = math.fsum(self.p)
        if abs(total - 1.0) > PROBABILITY_SUM_TOL:
            raise ValidationError("p", f"sum ≠ 1 (got {total!r})")

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "ProbabilityVector5":
        vec = cls(tuple(float(v) for v in values))  # type: ignore[arg-type]
        vec.validate()
        return vec


@dataclass(frozen=True)
class Annotation:
    """A single rater score for one (instance, dimension) pair."""

    rater_id: str
    instance_id: str
    dimension: Dimension
    score: int
    timestamp: datetime

    def validate(self) -> None:
        if not self.rater_id:
            raise ValidationError("rater_id", "must be nonempty")
        if not self.instance_id:
            raise ValidationError("instance_id", "must be nonempty")
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise ValidationError("score", "must be an integer")
        if not (1 <= self.score <= 5):
            raise ValidationError("score", f"score out of range: {self.score} not in [1, 5]")
        if self.timestamp.tzinfo is None:
            raise ValidationError("timestamp", "must be timezone-aware UTC")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "rater_id": self.rater_id,
            "instance_id": self.instance_id,
            "dimension": self.dimension.value,
            "score": self.score,
            "timestamp": self.timestamp.astimezone(timezone.utc).isoformat(),
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> "Annotation":
        ann = cls(
            rater_id=d["rater_id"],
            instance_id=d["instance_id"],
            dimension=Dimension(d["dimension"]),
            score=int(d["score"]),
            timestamp=datetime.fromisoformat(d["timestamp"]),
        )
        ann.validate()
        return ann


class BatchStatus(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class AnnotationBatch:
    """A rater's unit of work; the object the acceptance gate rules on."""

    batch_id: str
    rater_id: str
    annotations: tuple[Annotation, ...]
    status: BatchStatus = BatchStatus.PENDING
    gate_srcc: float | None = None

    def validate(self, batch_cap: int = DEFAULT_BATCH_CAP) -> None:
        if not self.batch_id:
            raise ValidationError("batch_id", "must be nonempty")
        # The cap counts instances, not raw annotations: a full batch carries
        # one annotation per dimension per instance.
        distinct = {a.instance_id for a in self.annotations}
        if len(distinct) > batch_cap:
            raise ValidationError("annotations", f"{len(distinct)} instances exceed batch cap {batch_cap}")
        for a in self.annotations:
            a.validate()
            if a.rater_id != self.rater_id:
                raise ValidationError("annotations", f"annotation rater {a.rater_id!r} != batch rater {self.rater_id!r}")
        if self.status is BatchStatus.PENDING and self.gate_srcc is not None:
            raise ValidationError("gate_srcc", "must be absent while the batch is pending")
        if self.status is BatchStatus.ACCEPTED and self.gate_srcc is None:
            raise ValidationError("gate_srcc", "must be present on an accepted batch")
        if self.gate_srcc is not None and not (-1.0 <= self.gate_srcc <= 1.0):
            raise ValidationError("gate_srcc", f"must be in [-1, 1], got {self.gate_srcc}")


@dataclass(frozen=True)
class GoldenRecord:
    """Expert consensus score for a hidden calibration instance.

    `golden_score` is None on freshly sampled stubs awaiting expert entry.
    """

    instance_id: str
    dimension: Dimension
    golden_score: float | None = None
    hidden: bool = True

    def validate(self) -> None:
        if not self.instance_id:
            raise ValidationError("instance_id", "must be nonempty")
        if self.hidden is not True:
            raise ValidationError("hidden", "golden records are always hidden from raters")
        if self.golden_score is not None and not (MOS_MIN <= self.golden_score <= MOS_MAX):
            raise ValidationError("golden_score", f"must be in [1, 5], got {self.golden_score}")


@dataclass(frozen=True)
class SftRecord:
    """One supervised fine-tuning example: context prompt plus rating answer."""

    id: str
    dimension: Dimension
    messages: tuple[Message, ...]
    media: tuple[str, ...]
    target_rating: RatingLevel
    target_score: float

    def validate(self) -> None:
        if not self.id:
            raise ValidationError("id", "must be nonempty")
        if not self.messages:
            raise ValidationError("messages", "must be nonempty")
        for m in self.messages:
            m.validate()
        if self.messages[0].role != "user":
            raise ValidationError("messages", "first message must have role 'user'")
        last = self.messages[-1]
        if last.role != "assistant" or last.text != self.target_rating.word:
            raise ValidationError(
                "messages",
                f"assistant answer must be the bare rating word {self.target_rating.word!r}",
            )
        if not (0.0 <= self.target_score <= 1.0):
            raise ValidationError("target_score", f"must be in [0, 1], got {self.target_score}")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "dimension": self.dimension.value,
            "messages": [{"role": m.role, "text": m.text} for m in self.messages],
            "media": list(self.media),
            "target_rating": self.target_rating.word,
            "target_score": self.target_score,
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> "SftRecord":
        rec = cls(
            id=d["id"],
            dimension=Dimension(d["dimension"]),
            messages=tuple(Message(m["role"], m["text"]) for m in d["messages"]),
            media=tuple(d["media"]),
            target_rating=RatingLevel.from_word(d["target_rating"]),
            target_score=float(d["target_score"]),
        )
        rec.validate()
        return rec


@dataclass(frozen=True)
class V2sBreakdown:
    """Provenance of a long-prompt alignment score: parts and their fusion."""

    vague_prompt: str
    specific_prompts: tuple[str, ...]
    a_v: float
    a_s: tuple[float, ...]
    alpha2: float
    beta2: float
    a_f: float
    validation_warnings: tuple[str, ...] = ()

    def validate(self) -> None:
        if not (1 <= len(self.specific_prompts) <= 3):
            raise ValidationError("specific_prompts", f"must contain 1-3 prompts, got {len(self.specific_prompts)}")
        if not self.vague_prompt:
            raise ValidationError("vague_prompt", "must be nonempty")
        if self.alpha2 < 0 or self.beta2 < 0:
            raise ValidationError("alpha2", "weights must be nonnegative")
        for name, v in (("a_v", self.a_v), ("a_f", self.a_f)):
            if not (0.0 <= v <= 1.0):
                raise ValidationError(name, f"must be in [0, 1], got {v}")
        for i, v in enumerate(self.a_s):
            if not (0.0 <= v <= 1.0):
                raise ValidationError("a_s", f"a_s[{i}] = {v} not in [0, 1]")
        if self.a_s:
            expected = self.alpha2 * self.a_v + self.beta2 * (math.fsum(self.a_s) / len(self.a_s))
            if abs(self.a_f - expected) > 1e-9:
                raise ValidationError("a_f", f"must equal alpha2*a_v + beta2*mean(a_s) = {expected!r}, got {self.a_f!r}")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "vague_prompt": self.vague_prompt,
            "specific_prompts": list(self.specific_prompts),
            "a_v": self.a_v,
            "a_s": list(self.a_s),
            "alpha2": self.alpha2,
            "beta2": self.beta2,
            "a_f": self.a_f,
            "validation_warnings": list(self.validation_warnings),
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> "V2sBreakdown":
        bd = cls(
            vague_prompt=d["vague_prompt"],
            specific_prompts=tuple(d["specific_prompts"]),
            a_v=float(d["a_v"]),
            a_s=tuple(float(v) for v in d["a_s"]),
            alpha2=float(d["alpha2"]),
            beta2=float(d["beta2"]),
            a_f=float(d["a_f"]),
            validation_warnings=tuple(d["validation_warnings"]),
        )
        bd.validate()
        return bd


@dataclass(frozen=True)
class DimensionScore:
    """Score of one dimension inside a ScoreReport.

    Exactly one provenance field is set on a successful score: `probabilities`
    when the score came from a single rating query, `v2s` when it came from
    the long-prompt pipeline. A failed dimension carries only `error`.
    """

    score: float | None
    rescaled_1_5: float | None
    probabilities: ProbabilityVector5 | None = None
    v2s: V2sBreakdown | None = None
    error: str | None = None

    def validate(self) -> None:
        if self.error is not None:
            if any(v is not None for v in (self.score, self.rescaled_1_5, self.probabilities, self.v2s)):
                raise ValidationError("error", "an error entry carries no score fields")
            return
        if self.score is None or self.rescaled_1_5 is None:
            raise ValidationError("score", "must be present unless the entry is an error")
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError("score", f"must be in [0, 1], got {self.score}")
        if abs(self.rescaled_1_5 - (1.0 + 4.0 * self.score)) > RESCALE_TOL:
            raise ValidationError("rescaled_1_5", f"must equal 1 + 4*score, got {self.rescaled_1_5!r}")
        if (self.probabilities is None) == (self.v2s is None):
            raise ValidationError("probabilities", "present iff the score came from a single rating query")
        if self.probabilities is not None:
            self.probabilities.validate()
        if self.v2s is not None:
            self.v2s.validate()

    @classmethod
    def from_score(
        cls,
        score: float,
        probabilities: ProbabilityVector5 | None = None,
        v2s: V2sBreakdown | None = None,
    ) -> "DimensionScore":
        entry = cls(score=score, rescaled_1_5=1.0 + 4.0 * score, probabilities=probabilities, v2s=v2s)
        entry.validate()
        return entry

    @classmethod
    def from_error(cls, message: str) -> "DimensionScore":
        return cls(score=None, rescaled_1_5=None, error=message)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "score": self.score,
            "rescaled_1_5": self.rescaled_1_5,
            "probabilities": list(self.probabilities.p) if self.probabilities is not None else None,
            "v2s": self.v2s.to_json_dict() if self.v2s is not None else None,
            "error": self.error,
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> "DimensionScore":
        entry = cls(
            score=d["score"],
            rescaled_1_5=d["rescaled_1_5"],
            probabilities=ProbabilityVector5.from_values(d["probabilities"]) if d.get("probabilities") else None,
            v2s=V2sBreakdown.from_json_dict(d["v2s"]) if d.get("v2s") else None,
            error=d.get("error"),
        )
        entry.validate()
        return entry


@dataclass(frozen=True)
class ScoreReport:
    """Per-instance scores with full provenance."""

    instance_id: str
    backend_id: str
    results: tuple[tuple[Dimension, DimensionScore], ...]

    def validate(self) -> None:
        if not self.instance_id:
            raise ValidationError("instance_id", "must be nonempty")
        if not self.results:
            raise ValidationError("results", "must contain at least one dimension")
        seen: set[Dimension] = set()
        for dim, entry in self.results:
            if dim in seen:
                raise ValidationError("results", f"duplicate dimension {dim.value}")
            seen.add(dim)
            entry.validate()

    def entry(self, dim: Dimension) -> DimensionScore | None:
        for d, entry in self.results:
            if d is dim:
                return entry
        return None

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "backend_id": self.backend_id,
            "results": {dim.value: entry.to_json_dict() for dim, entry in self.results},
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> "ScoreReport":
        report = cls(
            instance_id=d["instance_id"],
            backend_id=d["backend_id"],
            results=tuple(
                (Dimension(k), DimensionScore.from_json_dict(v)) for k, v in d["results"].items()
            ),
        )
        report.validate()
        return report


def validate(record: Any) -> None:
    """Validate any core type; raises ValidationError naming field and rule."""
    record.validate()


def encode_jsonl(records: Iterable[Any], out: TextIO) -> int:
    """Write records (anything with to_json_dict) one JSON object per line."""
    n = 0
    for rec in records:
        out.write(json.dumps(rec.to_json_dict(), ensure_ascii=False) + "\n")
        n += 1
    return n


def decode_jsonl(lines: Iterable[str], record_type: type) -> Iterator[Any]:
    """Parse JSONL lines into records of the given type; skips blank lines."""
    for line in lines:
        line = line.strip()
        if not line:
            continue
        yield record_type.from_json_dict(json.loads(line))
