"""Model backends: the three query contracts plus media preparation.

A backend answers three kinds of queries:
  rating_distribution  probabilities over the five rating words
  yes_probability      probability of "Yes" over {Yes, No}
  text_transform       free-text completion (summarize / split instructions)

Two implementations ship here: an HTTP client speaking a chat-completion
style wire format with candidate-token logprobs, and a deterministic mock
used for tests and dry runs. Token log-probabilities are always renormalized
with a softmax restricted to the candidate set; candidates missing from the
response get a configured floor logprob instead of probability zero.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shlex
import subprocess
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .errors import BackendError, ProtocolError, ValidationError
from .prompts import MessageSeq
from .rating import DEFAULT_RATING_WEIGHTS
from .types import (
    MEDIA_PLACEHOLDER,
    Dimension,
    InstanceRecord,
    MediaKind,
    ProbabilityVector5,
)

RATING_TOKENS: tuple[str, ...] = ("Excellent", "Good", "Fair", "Poor", "Bad")
YES_TOKENS: tuple[str, ...] = ("Yes", "No")


@dataclass(frozen=True)
class RatingQuery:
    """One rating-distribution request.

    instance_id/dimension are provenance only: the HTTP backend ignores them,
    the oracle mock uses them to look up its hidden truth.
    """

    messages: MessageSeq
    media: tuple[str, ...] = ()
    candidate_tokens: tuple[str, ...] = RATING_TOKENS
    instance_id: str | None = None
    dimension: Dimension | None = None

    def validate(self) -> None:
        if set(self.candidate_tokens) != set(RATING_TOKENS):
            raise ValidationError("candidate_tokens", f"must be exactly {set(RATING_TOKENS)}")
        if not self.messages:
            raise ValidationError("messages", "must be nonempty")


@dataclass(frozen=True)
class YesProbe:
    """One yes-probability request; probe_index keys mock fixtures."""

    messages: MessageSeq
    media: tuple[str, ...] = ()
    candidate_tokens: tuple[str, ...] = YES_TOKENS
    instance_id: str | None = None
    probe_index: int = 0

    def validate(self) -> None:
        if set(self.candidate_tokens) != {"Yes", "No"}:
            raise ValidationError("candidate_tokens", "must be exactly {Yes, No}")
        if not self.messages:
            raise ValidationError("messages", "must be nonempty")


@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str = ""
    model: str = "qeval-lmm"
    api_key_env: str = "QEVAL_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    missing_logprob_floor: float = -20.0
    max_frames: int = 32
    frame_command: str | None = None

    def validate(self) -> None:
        if self.timeout_s <= 0:
            raise ValidationError("timeout_s", "must be positive")
        if self.max_retries < 0:
            raise ValidationError("max_retries", "must be nonnegative")
        if self.max_frames < 1:
            raise ValidationError("max_frames", "must be at least 1")


def restricted_softmax(
    token_logprobs: Mapping[str, float],
    candidates: Sequence[str],
    floor: float = -20.0,
) -> list[float]:
    """Renormalize response logprobs over the candidate set.

    Matching is case-sensitive on the canonical word, with a fallback to a
    single leading-token match when the tokenizer split the word. Two or more
    leading-token matches for one candidate are ambiguous; candidates missing
    entirely get the floor logprob. Softmax is shift-invariant, so any common
    offset in the response scale cancels.
    """
    gathered: list[float] = []
    any_found = False
    for cand in candidates:
        if cand in token_logprobs:
            gathered.append(float(token_logprobs[cand]))
            any_found = True
            continue
        prefixes = [k for k in token_logprobs if k and cand.startswith(k)]
        if len(prefixes) > 1:
            raise ProtocolError(f"ambiguous leading-token matches for {cand!r}: {sorted(prefixes)}")
        if prefixes:
            gathered.append(float(token_logprobs[prefixes[0]]))
            any_found = True
        else:
            gathered.append(floor)
    if not any_found:
        raise ProtocolError(f"candidate tokens entirely absent from response: {list(candidates)}")
    peak = max(gathered)
    exps = [math.exp(v - peak) for v in gathered]
    total = math.fsum(exps)
    return [e / total for e in exps]


class Backend(ABC):
    """Contract every backend implements."""

    id: str

    @abstractmethod
    def rating_distribution(self, q: RatingQuery) -> ProbabilityVector5: ...

    @abstractmethod
    def yes_probability(self, q: YesProbe) -> float: ...

    @abstractmethod
    def text_transform(self, instruction: str) -> str: ...


class HttpBackend(Backend):
    """Chat-completion style HTTP client with candidate-token logprobs.

    Request:  {"model", "messages": [{"role", "content": [{"type": "text", "text"}
              | {"type": "image", "uri"}]}], "candidates": [...]}
    Response: {"token_logprobs": {"<token>": <logprob>, ...}} for candidate
              queries, {"text": "..."} for free-text transforms.
    """

    def __init__(self, config: BackendConfig, session: requests.Session | None = None):
        config.validate()
        if not config.endpoint_url:
            raise ValueError("endpoint_url is required for the HTTP backend")
        self.config = config
        self.id = f"http:{config.endpoint_url}#{config.model}"
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, payload: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(2 ** (attempt - 1))
            try:
                resp = self._session.post(
                    self.config.endpoint_url,
                    json=payload,
                    headers=self._headers(),
                    timeout=self.config.timeout_s,
                )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = BackendError(f"server error {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"request rejected with status {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"response is not JSON: {exc}") from exc
        raise BackendError(f"request failed after {self.config.max_retries + 1} attempts: {last_exc}")

    def _wire_messages(self, messages: MessageSeq, media: Sequence[str]) -> list[dict]:
        wire = []
        for msg in messages:
            parts: list[dict] = []
            chunks = msg.text.split(MEDIA_PLACEHOLDER)
            for i, chunk in enumerate(chunks):
                if i:
                    parts.extend({"type": "image", "uri": ref} for ref in media)
                if chunk:
                    parts.append({"type": "text", "text": chunk})
            wire.append({"role": msg.role, "content": parts})
        return wire

    def _candidate_logprobs(self, messages: MessageSeq, media: Sequence[str], candidates: Sequence[str]) -> dict:
        payload = {
            "model": self.config.model,
            "messages": self._wire_messages(messages, media),
            "candidates": list(candidates),
        }
        body = self._post(payload)
        logprobs = body.get("token_logprobs")
        if not isinstance(logprobs, dict):
            raise ProtocolError(f"response lacks token_logprobs: {body!r}")
        return logprobs

    def rating_distribution(self, q: RatingQuery) -> ProbabilityVector5:
        q.validate()
        logprobs = self._candidate_logprobs(q.messages, q.media, RATING_TOKENS)
        probs = restricted_softmax(logprobs, RATING_TOKENS, self.config.missing_logprob_floor)
        return ProbabilityVector5.from_values(probs)

    def yes_probability(self, q: YesProbe) -> float:
        q.validate()
        logprobs = self._candidate_logprobs(q.messages, q.media, YES_TOKENS)
        probs = restricted_softmax(logprobs, YES_TOKENS, self.config.missing_logprob_floor)
        return probs[0]

    def text_transform(self, instruction: str) -> str:
        if not instruction:
            raise ValueError("instruction must be nonempty")
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": [{"type": "text", "text": instruction}]}],
        }
        body = self._post(payload)
        text = body.get("text")
        if not isinstance(text, str):
            raise ProtocolError(f"response lacks text field: {body!r}")
        return text


def oracle_emit(t: float) -> ProbabilityVector5:
    """Distribution whose fused score is exactly t (inverts the fusion).

    Places mass on the two weight levels bracketing t; an exact weight match
    yields a one-hot vector.
    """
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"target {t} outside [0, 1]")
    w = DEFAULT_RATING_WEIGHTS.w
    probs = [0.0] * 5
    for k in range(4):
        hi, lo = w[k], w[k + 1]
        if hi >= t >= lo:
            if t == hi:
                probs[k] = 1.0
            elif t == lo:
                probs[k + 1] = 1.0
            else:
                lam = (t - lo) / (hi - lo)
                probs[k] = lam
                probs[k + 1] = 1.0 - lam
            break
    return ProbabilityVector5.from_values(probs)


def _stable_digest(*parts: str) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.digest()


def _digest_floats(digest: bytes, n: int) -> list[float]:
    # 8 bytes -> uniform float in [0, 1); enough entropy for mock outputs.
    out = []
    material = digest
    while len(material) < 8 * n:
        material += hashlib.sha256(material).digest()
    for i in range(n):
        chunk = material[8 * i : 8 * i + 8]
        out.append(int.from_bytes(chunk, "big") / 2**64)
    return out


class MockBackend(Backend):
    """Deterministic stand-in for the LMM.

    hash mode   derives pseudo-random outputs from sha256(seed, query), so
                identical (query, seed) pairs agree across runs and platforms.
    oracle mode reads a hidden truth file: rating queries emit a distribution
                whose fused score equals the normalized truth MOS, yes probes
                read `yes_probabilities[probe_index]` (null injects a fault).

    Canned text_transform fixtures are keyed by sha256 of the instruction and
    take precedence over the built-in deterministic fallback.
    """

    def __init__(
        self,
        mode: str = "hash",
        seed: int = 0,
        truth: Mapping[str, Mapping] | None = None,
        truth_path: str | None = None,
    ):
        if mode not in ("hash", "oracle"):
            raise ValueError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self.seed = seed
        self.truth: dict[str, dict] = dict(truth or {})
        self.canned_text: dict[str, str] = {}
        if mode == "hash":
            self.id = f"mock:hash:{seed}"
        else:
            self.id = f"mock:oracle:{truth_path or '<inline>'}"

    @classmethod
    def from_spec(cls, spec: str) -> "MockBackend":
        """Parse 'mock:hash:<seed>' or 'mock:oracle:<truth.jsonl>'."""
        parts = spec.split(":", 2)
        if len(parts) != 3 or parts[0] != "mock":
            raise ValueError(f"bad mock backend spec {spec!r}")
        if parts[1] == "hash":
            return cls(mode="hash", seed=int(parts[2]))
        if parts[1] == "oracle":
            path = Path(parts[2])
            truth: dict[str, dict] = {}
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    truth[row["instance_id"]] = row
            backend = cls(mode="oracle", truth=truth, truth_path=str(path))
            return backend
        raise ValueError(f"unknown mock mode {parts[1]!r}")

    def add_canned_text(self, instruction: str, completion: str) -> None:
        self.canned_text[hashlib.sha256(instruction.encode("utf-8")).hexdigest()] = completion

    def _truth_row(self, instance_id: str | None) -> dict:
        if instance_id is None or instance_id not in self.truth:
            raise BackendError(f"oracle mock has no truth for instance {instance_id!r}")
        return self.truth[instance_id]

    def rating_distribution(self, q: RatingQuery) -> ProbabilityVector5:
        q.validate()
        if self.mode == "oracle":
            row = self._truth_row(q.instance_id)
            key = f"mos_{q.dimension.value}" if q.dimension is not None else "mos"
            mos = row.get(key, row.get("mos"))
            if mos is None:
                raise BackendError(f"truth row for {q.instance_id!r} lacks {key}")
            return oracle_emit((float(mos) - 1.0) / 4.0)
        digest = _stable_digest(
            "rating", str(self.seed), json.dumps([(m.role, m.text) for m in q.messages]), ",".join(q.candidate_tokens)
        )
        raw = _digest_floats(digest, 5)
        total = math.fsum(raw)
        return ProbabilityVector5.from_values(v / total for v in raw)

    def yes_probability(self, q: YesProbe) -> float:
        q.validate()
        if self.mode == "oracle":
            row = self._truth_row(q.instance_id)
            fixtures = row.get("yes_probabilities")
            if not fixtures:
                raise BackendError(f"truth row for {q.instance_id!r} lacks yes_probabilities")
            value = fixtures[q.probe_index % len(fixtures)]
            if value is None:
                raise BackendError(f"injected fault for probe {q.probe_index} of {q.instance_id!r}")
            return float(value)
        digest = _stable_digest("yes", str(self.seed), json.dumps([(m.role, m.text) for m in q.messages]))
        return _digest_floats(digest, 1)[0]

    def text_transform(self, instruction: str) -> str:
        if not instruction:
            raise ValueError("instruction must be nonempty")
        key = hashlib.sha256(instruction.encode("utf-8")).hexdigest()
        if key in self.canned_text:
            return self.canned_text[key]
        return self._fallback_transform(instruction)

    @staticmethod
    def _fallback_transform(instruction: str) -> str:
        # Keeps CLI dry runs usable without registered fixtures: recover the
        # embedded prompt and apply a crude word-count transform.
        marker = "The prompt is as follows "
        idx = instruction.find(marker)
        prompt = instruction[idx + len(marker) :].rstrip(". ") if idx >= 0 else instruction
        words = prompt.split()
        if instruction.startswith("Please shorten"):
            return " ".join(words[:20])
        if instruction.startswith("Split"):
            per = max(1, min(14, (len(words) + 2) // 3))
            chunks = [" ".join(words[i : i + per]) for i in range(0, len(words), per)]
            return "\n".join(chunks[:3])
        return " ".join(words[:20])


def backend_from_spec(spec: str, config: BackendConfig | None = None) -> Backend:
    """Build a backend from a CLI spec string.

    mock:hash:<seed> | mock:oracle:<truth.jsonl> | http(s)://<endpoint-url>
    """
    if spec.startswith("mock:"):
        return MockBackend.from_spec(spec)
    if spec.startswith("http://") or spec.startswith("https://"):
        cfg = config or BackendConfig()
        cfg = BackendConfig(**{**cfg.__dict__, "endpoint_url": spec})
        return HttpBackend(cfg)
    raise ValueError(f"unknown backend spec {spec!r}")


def sample_frame_timestamps(duration_s: float, rate_hz: float = 1.0, max_frames: int = 32) -> list[float]:
    """Frame timestamps 0, 1/rate, 2/rate, ... strictly below duration_s.

    Guarantees at least one timestamp; longer videos are uniformly subsampled
    (order preserved) down to max_frames.
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    if rate_hz <= 0:
        raise ValueError(f"rate_hz must be positive, got {rate_hz}")
    if max_frames < 1:
        raise ValueError(f"max_frames must be at least 1, got {max_frames}")
    timestamps: list[float] = []
    k = 0
    while True:
        t = k / rate_hz
        if t >= duration_s:
            break
        timestamps.append(t)
        k += 1
    if not timestamps:
        timestamps = [0.0]
    n = len(timestamps)
    if n > max_frames:
        timestamps = [timestamps[i * n // max_frames] for i in range(max_frames)]
    return timestamps


def prepare_media(instance: InstanceRecord, config: BackendConfig) -> tuple[str, ...]:
    """Resolve an instance's media into frame/image references for a query.

    Images and pre-extracted frames pass through (frames capped at
    max_frames). A single video file is expanded at 1 fps: either through the
    configured external extraction command, or as media-fragment references
    (`file#t=<ts>`) when no command is set. Video bitstream decoding never
    happens in-process.
    """
    instance.validate()
    if instance.kind is MediaKind.IMAGE:
        return instance.media
    if len(instance.media) > 1:
        frames = list(instance.media)
        n = len(frames)
        if n > config.max_frames:
            frames = [frames[i * n // config.max_frames] for i in range(config.max_frames)]
        return tuple(frames)
    video = instance.media[0]
    timestamps = sample_frame_timestamps(instance.duration_s or 0.0, 1.0, config.max_frames)
    if config.frame_command:
        return tuple(_extract_frame(config.frame_command, video, t) for t in timestamps)
    return tuple(f"{video}#t={_format_ts(t)}" for t in timestamps)


def _format_ts(t: float) -> str:
    return f"{t:g}"


def _extract_frame(command_template: str, video: str, timestamp: float) -> str:
    """Run the user-configured extractor; it prints the frame path on stdout."""
    argv = [
        part.replace("{video}", video).replace("{time}", _format_ts(timestamp))
        for part in shlex.split(command_template)
    ]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, check=True, timeout=120)
    except (subprocess.SubprocessError, OSError) as exc:
        raise BackendError(f"frame extraction failed for {video} at t={timestamp}: {exc}") from exc
    path = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else ""
    if not path:
        raise BackendError(f"frame extractor produced no path for {video} at t={timestamp}")
    return path
