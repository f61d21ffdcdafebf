"""Builders for the context prompts, the yes/no probe, and SFT records.

The two context templates and the two long-prompt instructions are loaded
byte-exact from the checked-in files under templates/; builders only perform
marker substitution, so identical inputs always produce identical output.

Markers understood inside a template:
  image/video     resolved to the single applicable word
  [Image/Frames]  replaced by the `<media>` placeholder
  [Prompt]        replaced by the caller's prompt text (always last)
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .rating import mos_to_rating, normalize_mos
from .types import (
    MEDIA_PLACEHOLDER,
    Dimension,
    InstanceRecord,
    MediaKind,
    Message,
    MosValue,
    SftRecord,
    mos_float,
)

MessageSeq = tuple[Message, ...]

_KIND_MARKER = "image/video"
_MEDIA_MARKER = "[Image/Frames]"
_PROMPT_MARKER = "[Prompt]"


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    """Return the canonical template text (quality, alignment, summarize, split)."""
    return resources.files("qeval.templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def _fill(template: str, kind: MediaKind | None, prompt_text: str) -> str:
    text = template
    if kind is not None:
        text = text.replace(_KIND_MARKER, kind.value)
    text = text.replace(_MEDIA_MARKER, MEDIA_PLACEHOLDER)
    # Substitute the prompt last so its content is never rescanned.
    return text.replace(_PROMPT_MARKER, prompt_text)


def _require_prompt(prompt_text: str) -> str:
    if not prompt_text or not prompt_text.strip():
        raise ValueError("prompt_text must be nonempty")
    return prompt_text


def build_quality_prompt(kind: MediaKind, prompt_text: str) -> MessageSeq:
    """Visual-quality context prompt as a single user turn."""
    _require_prompt(prompt_text)
    return (Message("user", _fill(load_template("quality"), kind, prompt_text)),)


def build_alignment_prompt(kind: MediaKind, prompt_text: str) -> MessageSeq:
    """Text-alignment context prompt as a single user turn."""
    _require_prompt(prompt_text)
    return (Message("user", _fill(load_template("alignment"), kind, prompt_text)),)


def build_yes_probe(kind: MediaKind, prompt_text: str) -> MessageSeq:
    """Softer yes/no question for one specific prompt.

    Trailing sentence punctuation is stripped so the question carries a
    single terminal '?'.
    """
    _require_prompt(prompt_text)
    cleaned = prompt_text.strip().rstrip(".?! ")
    text = f"{MEDIA_PLACEHOLDER} Does the {kind.value} show {cleaned}?"
    return (Message("user", text),)


def build_summarize_instruction(long_prompt: str) -> str:
    """Instruction asking the text backend for the 15-25 word vague prompt."""
    _require_prompt(long_prompt)
    return _fill(load_template("summarize"), None, long_prompt)


def build_split_instruction(long_prompt: str) -> str:
    """Instruction asking the text backend for up to three specific prompts."""
    _require_prompt(long_prompt)
    return _fill(load_template("split"), None, long_prompt)


def build_sft_record(instance: InstanceRecord, dim: Dimension, mos: MosValue | float) -> SftRecord:
    """Turn one labeled instance into a context-prompt training example."""
    instance.validate()
    mos_value = mos_float(mos)
    builder = build_quality_prompt if dim is Dimension.QUALITY else build_alignment_prompt
    context = builder(instance.kind, instance.prompt)
    rating = mos_to_rating(mos_value)
    record = SftRecord(
        id=f"{instance.id}:{dim.value}",
        dimension=dim,
        messages=context + (Message("assistant", rating.word),),
        media=instance.media,
        target_rating=rating,
        target_score=normalize_mos(mos_value),
    )
    record.validate()
    return record
