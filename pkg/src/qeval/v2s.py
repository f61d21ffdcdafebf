"""Vague-to-Specific handling of long-prompt alignment.

Prompts above the word threshold are decomposed by a text backend into one
vague prompt (scored with the usual alignment context prompt) and up to three
specific prompts (scored as yes-probability probes); the parts are combined
with fixed weights. Decomposition output that violates the word bounds is
retried once and then accepted with a warning per violated constraint, so a
noncompliant splitter degrades the report instead of failing the instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .backend import Backend, RatingQuery, YesProbe, prepare_media, BackendConfig
from .errors import BackendError, DecompositionError, ProtocolError
from .prompts import (
    build_alignment_prompt,
    build_split_instruction,
    build_summarize_instruction,
    build_yes_probe,
)
from .rating import DEFAULT_RATING_WEIGHTS, RatingWeights, fuse
from .types import Dimension, InstanceRecord, V2sBreakdown


@dataclass(frozen=True)
class V2sConfig:
    word_threshold: int = 25
    alpha2: float = 0.5
    beta2: float = 0.5
    max_specifics: int = 3
    vague_bounds: tuple[int, int] = (15, 25)
    specific_max_words: int = 15
    max_decompose_retries: int = 1

    def validate(self) -> None:
        if self.word_threshold < 1:
            raise ValueError("word_threshold must be at least 1")
        if not (1 <= self.max_specifics <= 3):
            raise ValueError("max_specifics must be in [1, 3]")
        if self.alpha2 < 0 or self.beta2 < 0:
            raise ValueError("alpha2 and beta2 must be nonnegative")


DEFAULT_V2S_CONFIG = V2sConfig()


def word_count(text: str) -> int:
    """Whitespace tokens after trimming; punctuation stays with its word."""
    return len(text.split())


def is_long_prompt(text: str, cfg: V2sConfig = DEFAULT_V2S_CONFIG) -> bool:
    return word_count(text) > cfg.word_threshold


def _vague_violations(vague: str, cfg: V2sConfig) -> list[str]:
    n = word_count(vague)
    lo, hi = cfg.vague_bounds
    if n > hi:
        return [f"vague length {n} > {hi}"]
    if n < lo:
        return [f"vague length {n} < {lo}"]
    return []


def _specific_violations(specifics: list[str], cfg: V2sConfig) -> list[str]:
    issues = []
    for i, text in enumerate(specifics, start=1):
        n = word_count(text)
        if n >= cfg.specific_max_words:
            issues.append(f"specific {i} length {n} >= {cfg.specific_max_words}")
    return issues


def decompose(
    long_prompt: str,
    text_backend: Backend,
    cfg: V2sConfig = DEFAULT_V2S_CONFIG,
) -> tuple[str, tuple[str, ...], tuple[str, ...]]:
    """Split a long prompt into (vague, specifics, warnings).

    Nonempty lines of the split completion become the specific prompts, in
    order, truncated to max_specifics.
    """
    cfg.validate()
    if not is_long_prompt(long_prompt, cfg):
        raise ValueError(f"prompt has {word_count(long_prompt)} words; not above threshold {cfg.word_threshold}")
    warnings: list[str] = []

    vague = ""
    for attempt in range(cfg.max_decompose_retries + 1):
        vague = text_backend.text_transform(build_summarize_instruction(long_prompt)).strip()
        if vague and not _vague_violations(vague, cfg):
            break
    if not vague:
        raise DecompositionError("summarize produced an empty vague prompt")
    warnings.extend(_vague_violations(vague, cfg))

    specifics: list[str] = []
    for attempt in range(cfg.max_decompose_retries + 1):
        completion = text_backend.text_transform(build_split_instruction(long_prompt))
        specifics = [line.strip() for line in completion.splitlines() if line.strip()]
        if specifics and not _specific_violations(specifics[: cfg.max_specifics], cfg) and len(specifics) <= cfg.max_specifics:
            break
    if not specifics:
        raise DecompositionError("split produced no usable specific prompts")
    if len(specifics) > cfg.max_specifics:
        warnings.append(f"split returned {len(specifics)} prompts, keeping {cfg.max_specifics}")
        specifics = specifics[: cfg.max_specifics]
    warnings.extend(_specific_violations(specifics, cfg))

    return vague, tuple(specifics), tuple(warnings)


def combine(a_v: float, a_s: list[float] | tuple[float, ...], cfg: V2sConfig = DEFAULT_V2S_CONFIG) -> float:
    """Weighted fusion alpha2*a_v + beta2*mean(a_s); empty a_s falls back to a_v."""
    cfg.validate()
    if not (0.0 <= a_v <= 1.0):
        raise ValueError(f"a_v {a_v} outside [0, 1]")
    for i, v in enumerate(a_s):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"a_s[{i}] = {v} outside [0, 1]")
    if not a_s:
        return a_v
    return cfg.alpha2 * a_v + cfg.beta2 * (math.fsum(a_s) / len(a_s))


def score_alignment_long(
    instance: InstanceRecord,
    rating_backend: Backend,
    text_backend: Backend,
    cfg: V2sConfig = DEFAULT_V2S_CONFIG,
    backend_cfg: BackendConfig | None = None,
    weights: RatingWeights = DEFAULT_RATING_WEIGHTS,
) -> V2sBreakdown:
    """Run the full long-prompt alignment pipeline for one instance."""
    instance.validate()
    if not is_long_prompt(instance.prompt, cfg):
        raise ValueError("instance prompt is not a long prompt")
    backend_cfg = backend_cfg or BackendConfig()
    vague, specifics, warnings = decompose(instance.prompt, text_backend, cfg)
    warnings = tuple(warnings)

    media = prepare_media(instance, backend_cfg)
    vague_query = RatingQuery(
        messages=build_alignment_prompt(instance.kind, vague),
        media=media,
        instance_id=instance.id,
        dimension=Dimension.ALIGNMENT,
    )
    a_v = fuse(rating_backend.rating_distribution(vague_query), weights)

    a_s: list[float] = []
    for i, specific in enumerate(specifics):
        probe = YesProbe(
            messages=build_yes_probe(instance.kind, specific),
            media=media,
            instance_id=instance.id,
            probe_index=i,
        )
        try:
            a_s.append(rating_backend.yes_probability(probe))
        except (BackendError, ProtocolError) as exc:
            warnings = warnings + (f"specific {i + 1} probe failed: {exc}",)
    if not a_s:
        raise BackendError("all specific-prompt probes failed")

    a_f = combine(a_v, a_s, cfg)
    breakdown = V2sBreakdown(
        vague_prompt=vague,
        specific_prompts=specifics,
        a_v=a_v,
        a_s=tuple(a_s),
        alpha2=cfg.alpha2,
        beta2=cfg.beta2,
        a_f=a_f,
        validation_warnings=warnings,
    )
    breakdown.validate()
    return breakdown
