from __future__ import annotations

import json
import math
import random

import pytest

from conftest import make_instance, synthetic_truth, write_jsonl
from qeval.backend import (
    BackendConfig,
    HttpBackend,
    MockBackend,
    RatingQuery,
    YesProbe,
    backend_from_spec,
    oracle_emit,
    prepare_media,
    restricted_softmax,
    sample_frame_timestamps,
)
from qeval.errors import BackendError, ProtocolError
from qeval.prompts import build_quality_prompt, build_yes_probe
from qeval.rating import fuse
from qeval.types import Dimension, MediaKind, Message


class TestRestrictedSoftmax:
    def test_two_candidates_renormalized(self):
        probs = restricted_softmax({"Yes": math.log(0.6), "No": math.log(0.4)}, ("Yes", "No"))
        assert probs[0] == pytest.approx(0.6, abs=1e-12)
        assert probs[1] == pytest.approx(0.4, abs=1e-12)

    def test_equal_logprobs_uniform(self):
        probs = restricted_softmax({w: -1.5 for w in ("Excellent", "Good", "Fair", "Poor", "Bad")}, ("Excellent", "Good", "Fair", "Poor", "Bad"))
        assert probs == pytest.approx([0.2] * 5, abs=1e-12)

    def test_missing_token_gets_floor(self):
        probs = restricted_softmax({"Yes": math.log(0.6)}, ("Yes", "No"), floor=-20.0)
        assert probs[0] == pytest.approx(1.0, abs=1e-6)

    def test_shift_invariance(self):
        rng = random.Random(2)
        candidates = ("Excellent", "Good", "Fair", "Poor", "Bad")
        for _ in range(50):
            logprobs = {c: rng.uniform(-8, 0) for c in candidates}
            shift = rng.uniform(-100, 100)
            base = restricted_softmax(logprobs, candidates)
            shifted = restricted_softmax({c: v + shift for c, v in logprobs.items()}, candidates)
            assert base == pytest.approx(shifted, abs=1e-9)
            assert math.fsum(base) == pytest.approx(1.0, abs=1e-9)

    def test_leading_token_fallback(self):
        probs = restricted_softmax({"Exc": math.log(0.7), "Good": math.log(0.3)}, ("Excellent", "Good"))
        assert probs[0] == pytest.approx(0.7, abs=1e-9)

    def test_ambiguous_leading_tokens(self):
        with pytest.raises(ProtocolError, match="ambiguous"):
            restricted_softmax({"Exc": -1.0, "Excel": -2.0}, ("Excellent", "Good"))

    def test_all_candidates_absent(self):
        with pytest.raises(ProtocolError, match="absent"):
            restricted_softmax({"something": -1.0}, ("Yes", "No"))


class TestOracleEmit:
    def test_top_weight_one_hot(self):
        assert oracle_emit(1.0).p == (1.0, 0.0, 0.0, 0.0, 0.0)

    def test_between_weights(self):
        p = oracle_emit(0.9).p
        assert p[0] == pytest.approx(0.6, abs=1e-12)
        assert p[1] == pytest.approx(0.4, abs=1e-12)
        assert p[2:] == (0.0, 0.0, 0.0)

    def test_exact_weight_one_hot(self):
        assert oracle_emit(0.5).p == (0.0, 0.0, 1.0, 0.0, 0.0)
        assert oracle_emit(0.0).p == (0.0, 0.0, 0.0, 0.0, 1.0)

    def test_fusion_closure(self):
        for i in range(1000):
            t = i / 999.0
            assert abs(fuse(oracle_emit(t)) - t) <= 1e-12

    def test_range_error(self):
        with pytest.raises(ValueError):
            oracle_emit(1.01)


class TestFrameSampling:
    @pytest.mark.parametrize("duration,expected", [(3.5, [0.0, 1.0, 2.0, 3.0]), (0.5, [0.0]), (2.0, [0.0, 1.0])])
    def test_one_fps(self, duration, expected):
        assert sample_frame_timestamps(duration) == expected

    def test_subsampled_to_max_frames(self):
        stamps = sample_frame_timestamps(100.0, max_frames=32)
        assert len(stamps) == 32
        assert all(a < b for a, b in zip(stamps, stamps[1:]))
        assert all(t < 100.0 for t in stamps)

    def test_custom_rate(self):
        assert sample_frame_timestamps(1.0, rate_hz=2.0) == [0.0, 0.5]

    def test_errors(self):
        with pytest.raises(ValueError):
            sample_frame_timestamps(0.0)
        with pytest.raises(ValueError):
            sample_frame_timestamps(1.0, rate_hz=0.0)


class TestMockBackend:
    def _query(self, text: str = "q") -> RatingQuery:
        return RatingQuery(messages=(Message("user", f"{text} <media>"),))

    def test_hash_mode_deterministic(self):
        a = MockBackend(mode="hash", seed=42)
        b = MockBackend(mode="hash", seed=42)
        q = self._query()
        assert a.rating_distribution(q) == b.rating_distribution(q)
        assert a.yes_probability(YesProbe(messages=(Message("user", "y"),))) == b.yes_probability(
            YesProbe(messages=(Message("user", "y"),))
        )

    def test_hash_mode_seed_sensitivity(self):
        q = self._query()
        assert MockBackend(seed=1).rating_distribution(q) != MockBackend(seed=2).rating_distribution(q)

    def test_hash_mode_valid_distribution(self):
        backend = MockBackend(seed=0)
        for i in range(20):
            vec = backend.rating_distribution(self._query(f"q{i}"))
            vec.validate()

    def test_oracle_mode_emits_truth(self, tmp_path):
        truth = synthetic_truth(5)
        path = write_jsonl(tmp_path / "truth.jsonl", truth)
        backend = MockBackend.from_spec(f"mock:oracle:{path}")
        row = truth[0]
        query = RatingQuery(
            messages=(Message("user", "q <media>"),),
            instance_id=row["instance_id"],
            dimension=Dimension.QUALITY,
        )
        value = fuse(backend.rating_distribution(query))
        assert value == pytest.approx((row["mos_quality"] - 1.0) / 4.0, abs=1e-12)

    def test_oracle_mode_hidden_09(self):
        backend = MockBackend(mode="oracle", truth={"i1": {"mos": 4.6}})
        q = RatingQuery(messages=(Message("user", "q"),), instance_id="i1")
        p = backend.rating_distribution(q).p
        assert p[0] == pytest.approx(0.6, abs=1e-12)  # normalize(4.6) = 0.9
        assert p[1] == pytest.approx(0.4, abs=1e-12)

    def test_oracle_unknown_instance(self):
        backend = MockBackend(mode="oracle", truth={})
        with pytest.raises(BackendError, match="no truth"):
            backend.rating_distribution(RatingQuery(messages=(Message("user", "q"),), instance_id="nope"))

    def test_oracle_yes_fixtures_and_fault(self):
        backend = MockBackend(mode="oracle", truth={"i1": {"yes_probabilities": [0.9, None, 0.8]}})
        probe = lambda i: YesProbe(messages=(Message("user", "p"),), instance_id="i1", probe_index=i)
        assert backend.yes_probability(probe(0)) == 0.9
        assert backend.yes_probability(probe(2)) == 0.8
        with pytest.raises(BackendError, match="injected fault"):
            backend.yes_probability(probe(1))

    def test_canned_text_precedence(self):
        backend = MockBackend(seed=0)
        backend.add_canned_text("instruction text", "canned answer")
        assert backend.text_transform("instruction text") == "canned answer"

    def test_fallback_transform_deterministic(self):
        backend = MockBackend(seed=0)
        instruction = "Please shorten the prompt to between 15 and 25 words. The prompt is as follows " + " ".join(
            f"w{i}" for i in range(40)
        ) + "."
        assert backend.text_transform(instruction) == backend.text_transform(instruction)

    def test_empty_instruction_rejected(self):
        with pytest.raises(ValueError):
            MockBackend(seed=0).text_transform("")

    def test_spec_parsing(self):
        assert isinstance(backend_from_spec("mock:hash:7"), MockBackend)
        with pytest.raises(ValueError):
            backend_from_spec("bogus:1")


class FakeResponse:
    def __init__(self, status_code: int, payload: dict | None = None):
        self.status_code = status_code
        self._payload = payload or {}
        self.text = json.dumps(self._payload)

    def json(self):
        return self._payload


class TestHttpBackend:
    def _backend(self, monkeypatch, responses: list, config: BackendConfig | None = None) -> tuple[HttpBackend, list]:
        cfg = config or BackendConfig(endpoint_url="https://judge.example/v1", max_retries=2)
        backend = HttpBackend(cfg)
        calls: list[dict] = []

        def fake_post(url, json=None, headers=None, timeout=None):
            calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
            result = responses.pop(0)
            if isinstance(result, Exception):
                raise result
            return result

        monkeypatch.setattr(backend._session, "post", fake_post)
        return backend, calls

    def test_rating_distribution_wire_format(self, monkeypatch):
        logprobs = {w: math.log(p) for w, p in [("Excellent", 0.6), ("Good", 0.4)]}
        backend, calls = self._backend(monkeypatch, [FakeResponse(200, {"token_logprobs": logprobs})])
        query = RatingQuery(
            messages=build_quality_prompt(MediaKind.IMAGE, "a red cube"),
            media=("img.png",),
        )
        vec = backend.rating_distribution(query)
        assert vec.p[0] == pytest.approx(0.6, abs=1e-6)
        request = calls[0]["json"]
        assert request["model"] == "qeval-lmm"
        assert request["candidates"] == ["Excellent", "Good", "Fair", "Poor", "Bad"]
        parts = request["messages"][0]["content"]
        assert {"type": "image", "uri": "img.png"} in parts
        joined = "".join(p["text"] for p in parts if p["type"] == "text")
        assert "a red cube" in joined
        assert "<media>" not in joined

    def test_yes_probability(self, monkeypatch):
        logprobs = {"Yes": math.log(0.6), "No": math.log(0.4)}
        backend, _ = self._backend(monkeypatch, [FakeResponse(200, {"token_logprobs": logprobs})])
        probe = YesProbe(messages=build_yes_probe(MediaKind.IMAGE, "rain"), media=("img.png",))
        assert backend.yes_probability(probe) == pytest.approx(0.6, abs=1e-9)

    def test_bearer_credential_from_env(self, monkeypatch):
        monkeypatch.setenv("QEVAL_API_KEY", "sekrit")
        backend, calls = self._backend(
            monkeypatch, [FakeResponse(200, {"token_logprobs": {"Yes": -0.1, "No": -3.0}})]
        )
        backend.yes_probability(YesProbe(messages=(Message("user", "q"),)))
        assert calls[0]["headers"]["Authorization"] == "Bearer sekrit"

    def test_retries_then_success(self, monkeypatch):
        monkeypatch.setattr("time.sleep", lambda s: None)
        responses = [
            FakeResponse(503),
            FakeResponse(500),
            FakeResponse(200, {"token_logprobs": {"Yes": -0.5, "No": -1.0}}),
        ]
        backend, calls = self._backend(monkeypatch, responses)
        backend.yes_probability(YesProbe(messages=(Message("user", "q"),)))
        assert len(calls) == 3

    def test_retries_exhausted(self, monkeypatch):
        monkeypatch.setattr("time.sleep", lambda s: None)
        backend, calls = self._backend(monkeypatch, [FakeResponse(500)] * 3)
        with pytest.raises(BackendError, match="after 3 attempts"):
            backend.yes_probability(YesProbe(messages=(Message("user", "q"),)))
        assert len(calls) == 3

    def test_client_error_is_protocol_error(self, monkeypatch):
        backend, _ = self._backend(monkeypatch, [FakeResponse(400, {"error": "bad"})])
        with pytest.raises(ProtocolError):
            backend.yes_probability(YesProbe(messages=(Message("user", "q"),)))

    def test_missing_logprobs_field(self, monkeypatch):
        backend, _ = self._backend(monkeypatch, [FakeResponse(200, {"weird": 1})])
        with pytest.raises(ProtocolError, match="token_logprobs"):
            backend.yes_probability(YesProbe(messages=(Message("user", "q"),)))

    def test_text_transform(self, monkeypatch):
        backend, calls = self._backend(monkeypatch, [FakeResponse(200, {"text": "a short prompt"})])
        assert backend.text_transform("Please shorten ...") == "a short prompt"
        assert "candidates" not in calls[0]["json"]


class TestPrepareMedia:
    def test_image_passthrough(self):
        inst = make_instance(0)
        assert prepare_media(inst, BackendConfig()) == inst.media

    def test_preextracted_frames_capped(self):
        frames = tuple(f"f{i:03d}.png" for i in range(50))
        inst = make_instance(1, kind=MediaKind.VIDEO, media=frames)
        out = prepare_media(inst, BackendConfig(max_frames=8))
        assert len(out) == 8
        assert list(out) == sorted(out)

    def test_video_file_expanded_to_fragments(self):
        inst = make_instance(2, kind=MediaKind.VIDEO, duration_s=3.5)
        out = prepare_media(inst, BackendConfig())
        assert out == (
            f"{inst.media[0]}#t=0",
            f"{inst.media[0]}#t=1",
            f"{inst.media[0]}#t=2",
            f"{inst.media[0]}#t=3",
        )

    def test_external_extraction_command(self, tmp_path):
        script = tmp_path / "extract.sh"
        script.write_text("#!/bin/sh\necho frame-$2.png\n")
        script.chmod(0o755)
        inst = make_instance(3, kind=MediaKind.VIDEO, duration_s=2.0)
        cfg = BackendConfig(frame_command=f"{script} {{video}} {{time}}")
        assert prepare_media(inst, cfg) == ("frame-0.png", "frame-1.png")
