"""Acceptance gate: one test per release criterion, at its stated tolerance.

Run with `pytest tests/test_acceptance.py -s` to see one pass/fail line per
criterion.
"""

from __future__ import annotations

import json
import math
import random
import time
from contextlib import contextmanager

import pytest

from conftest import make_instance, synthetic_truth, words, write_jsonl
from reference import brute_pearson, brute_spearman, central_difference_grad, spearman_d2
from qeval.backend import MockBackend, oracle_emit, sample_frame_timestamps
from qeval.cli import main
from qeval.metrics import instance_level, plcc, srcc
from qeval.prompts import (
    build_alignment_prompt,
    build_quality_prompt,
    build_split_instruction,
    build_summarize_instruction,
    build_yes_probe,
    load_template,
)
from qeval.qc.protocol import QcConfig, gate_batch, plan_campaign
from qeval.rating import DEFAULT_RATING_WEIGHTS, ce_loss, fuse, mos_to_rating, mse_grad, mse_loss, one_hot
from qeval.scorer import score_instance
from qeval.types import (
    MEDIA_PLACEHOLDER,
    Annotation,
    AnnotationBatch,
    BatchStatus,
    Dimension,
    MediaKind,
    ProbabilityVector5,
    RatingLevel,
)
from qeval.v2s import combine, decompose, is_long_prompt
from test_qc import SMALL_GATE_CFG, ann, batch_of, goldens_for
from test_v2s import COMPLIANT_SPLIT, LONG_PROMPT, compliant_backend


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def pv(*values: float) -> ProbabilityVector5:
    return ProbabilityVector5.from_values(values)


def test_eq1_binning():
    with criterion("eq1-binning"):
        start = time.monotonic()
        sweep = [1.0, 1.8, 1.81, 2.6, 3.4, 3.41, 4.2, 4.21, 5.0]
        expected = ["Bad", "Bad", "Poor", "Poor", "Fair", "Good", "Good", "Excellent", "Excellent"]
        assert [mos_to_rating(s).word for s in sweep] == expected
        previous = RatingLevel.BAD
        for i in range(10_000):
            level = mos_to_rating(1.0 + 4.0 * i / 9_999)
            assert level >= previous
            previous = level
        elapsed = time.monotonic() - start
        assert elapsed < 1.0, f"binning criterion took {elapsed:.2f}s"


def test_fusion_closure(tmp_path):
    with criterion("fusion-closure"):
        start = time.monotonic()
        for i in range(1000):
            t = i / 999.0
            assert abs(fuse(oracle_emit(t)) - t) <= 1e-12

        rows = synthetic_truth(200)
        truth_path = write_jsonl(tmp_path / "truth.jsonl", rows)
        instances = write_jsonl(tmp_path / "instances.jsonl", [make_instance(i).to_json_dict() for i in range(200)])
        out = tmp_path / "reports.jsonl"
        code = main(
            [
                "score",
                "--input", str(instances),
                "--backend", f"mock:oracle:{truth_path}",
                "--dimension", "quality",
                "--out", str(out),
            ]
        )
        assert code == 0
        pred = {}
        for line in out.read_text().strip().splitlines():
            report = json.loads(line)
            pred[report["instance_id"]] = report["results"]["quality"]["score"]
        truth = {row["instance_id"]: row["mos_quality"] for row in rows}
        result = instance_level(pred, truth)
        assert abs(result.srcc - 1.0) <= 1e-9
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"fusion closure took {elapsed:.2f}s"


def test_loss_suite():
    with criterion("loss-suite"):
        start = time.monotonic()
        assert ce_loss(one_hot(RatingLevel.EXCELLENT), pv(1, 0, 0, 0, 0)) == pytest.approx(0.0, abs=1e-9)
        assert ce_loss(one_hot(RatingLevel.EXCELLENT), pv(0.2, 0.2, 0.2, 0.2, 0.2)) == pytest.approx(
            1.6094379124341003, abs=1e-9
        )
        assert ce_loss(one_hot(RatingLevel.FAIR), pv(0, 0, 0.5, 0.5, 0)) == pytest.approx(
            0.6931471805599453, abs=1e-9
        )
        assert mse_loss(pv(1, 0, 0, 0, 0), 1.0) == pytest.approx(0.0, abs=1e-9)
        assert mse_loss(pv(0.2, 0.2, 0.2, 0.2, 0.2), 0.5) == pytest.approx(0.0, abs=1e-9)
        assert mse_loss(pv(0.5, 0.3, 0.2, 0, 0), 0.5) == pytest.approx(0.105625, abs=1e-9)

        rng = random.Random(101)
        w = DEFAULT_RATING_WEIGHTS.w
        for _ in range(1000):
            raw = [rng.random() + 1e-9 for _ in range(5)]
            total = math.fsum(raw)
            p = pv(*(v / total for v in raw))
            target = rng.random()

            def objective(vec):
                return (math.fsum(v * wj for v, wj in zip(vec, w)) - target) ** 2

            numeric = central_difference_grad(objective, p.p, h=1e-6)
            analytic = mse_grad(p, target)
            for a, b in zip(analytic, numeric):
                denom = max(abs(a), abs(b), 1e-9)
                assert abs(a - b) / denom < 1e-6 or abs(a - b) < 1e-9
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"loss suite took {elapsed:.2f}s"


def test_correlation_oracle():
    with criterion("correlation-oracle"):
        rng = random.Random(202)
        checked = 0
        while checked < 200:
            with_ties = checked % 5 == 0  # 20% of the pairs contain ties
            n = rng.randint(3, 50)
            if with_ties:
                x = [float(rng.randint(0, 9)) for _ in range(n)]
                y = [float(rng.randint(0, 9)) for _ in range(n)]
                if len(set(x)) < 2 or len(set(y)) < 2:
                    continue
            else:
                x = [float(v) for v in rng.sample(range(100_000), n)]
                y = [float(v) for v in rng.sample(range(100_000), n)]
            assert abs(srcc(x, y) - brute_spearman(x, y)) <= 1e-9
            assert abs(plcc(x, y) - brute_pearson(x, y)) <= 1e-9
            if not with_ties:
                assert abs(srcc(x, y) - spearman_d2(x, y)) <= 1e-12
            checked += 1


def test_gate_behavior():
    with criterion("gate-behavior"):
        perfect = gate_batch(batch_of([1, 2, 3, 4, 5]), goldens_for([1.1, 2.2, 3.3, 4.4, 4.9]), SMALL_GATE_CFG)
        assert perfect.verdict is BatchStatus.ACCEPTED and perfect.srcc == pytest.approx(1.0, abs=1e-12)

        reversed_ = gate_batch(batch_of([5, 4, 3, 2, 1]), goldens_for([1.0, 2.0, 3.0, 4.0, 5.0]), SMALL_GATE_CFG)
        assert reversed_.verdict is BatchStatus.REJECTED and reversed_.srcc == pytest.approx(-1.0, abs=1e-12)

        point_six = gate_batch(batch_of([2, 1, 4, 3]), goldens_for([1.0, 2.0, 3.0, 4.0]), SMALL_GATE_CFG)
        assert point_six.verdict is BatchStatus.REJECTED and point_six.srcc == pytest.approx(0.6, abs=1e-12)

        rng = random.Random(303)
        scores = [2, 5, 1, 4, 3, 2, 5, 3, 1, 4]
        goldens = goldens_for([1.5, 4.5, 1.1, 4.0, 3.2, 2.2, 4.9, 2.8, 1.3, 3.7])
        annotations = [ann(i, s) for i, s in enumerate(scores)]
        reference_result = gate_batch(AnnotationBatch("b", "r1", tuple(annotations)), goldens, SMALL_GATE_CFG)
        for _ in range(100):
            rng.shuffle(annotations)
            shuffled = AnnotationBatch("b", "r1", tuple(annotations))
            assert gate_batch(shuffled, goldens, SMALL_GATE_CFG) == reference_result


def test_campaign_arithmetic():
    with criterion("campaign-arithmetic"):
        assert plan_campaign(80_000, 20_000, 2, 3, 12) == 960_000


def test_v2s_pipeline():
    with criterion("v2s"):
        assert combine(0.8, [0.9, 0.7, 0.8]) == pytest.approx(0.8, abs=1e-12)
        assert combine(1.0, [1.0]) == 1.0
        from qeval.v2s import V2sConfig

        assert combine(0.3, [0.9], V2sConfig(alpha2=1.0, beta2=0.0)) == 0.3
        for i in range(1001):
            x = i / 1000.0
            assert combine(x, [x, x]) == x

        # Routing: 25 words stays on the single-query path, 26 goes long.
        oracle = MockBackend(
            mode="oracle",
            truth={"inst-00000": {"mos_alignment": 3.0, "yes_probabilities": [0.5, 0.5, 0.5]}},
        )
        short_report = score_instance(make_instance(0, prompt=words(25)), (Dimension.ALIGNMENT,), oracle)
        assert short_report.entry(Dimension.ALIGNMENT).probabilities is not None
        assert short_report.entry(Dimension.ALIGNMENT).v2s is None
        long_report = score_instance(make_instance(0, prompt=words(26)), (Dimension.ALIGNMENT,), oracle)
        assert long_report.entry(Dimension.ALIGNMENT).v2s is not None
        assert long_report.entry(Dimension.ALIGNMENT).probabilities is None

        # Noncompliant decomposition: a 30-word vague (twice) is accepted with
        # a warning after the retry.
        noncompliant = compliant_backend()
        noncompliant.add_canned_text(build_summarize_instruction(LONG_PROMPT), words(30, "v"))
        _, _, warnings = decompose(LONG_PROMPT, noncompliant)
        assert "vague length 30 > 25" in warnings


def test_template_fidelity():
    with criterion("template-fidelity"):
        quality_built = build_quality_prompt(MediaKind.IMAGE, "a red cube")[0].text
        quality_expected = (
            load_template("quality")
            .replace("image/video", "image")
            .replace("[Image/Frames]", MEDIA_PLACEHOLDER)
            .replace("[Prompt]", "a red cube")
        )
        assert quality_built == quality_expected
        assert "identify any visual distortions and positive visual appeal" in quality_built

        alignment_built = build_alignment_prompt(MediaKind.VIDEO, "a dog on a sofa")[0].text
        alignment_expected = (
            load_template("alignment")
            .replace("image/video", "video")
            .replace("[Image/Frames]", MEDIA_PLACEHOLDER)
            .replace("[Prompt]", "a dog on a sofa")
        )
        assert alignment_built == alignment_expected
        assert "Begin by considering whether the overall concept" in alignment_built

        long_prompt = words(30)
        assert build_summarize_instruction(long_prompt) == load_template("summarize").replace("[Prompt]", long_prompt)
        assert build_split_instruction(long_prompt) == load_template("split").replace("[Prompt]", long_prompt)
        assert build_yes_probe(MediaKind.IMAGE, "a red cube.")[0].text.endswith("Does the image show a red cube?")


def test_frame_sampling():
    with criterion("frame-sampling"):
        expectations = {0.5: 1, 2.0: 2, 3.5: 4, 100.0: 32}
        for duration, count in expectations.items():
            stamps = sample_frame_timestamps(duration, rate_hz=1.0, max_frames=32)
            assert len(stamps) == count, (duration, stamps)
            assert all(a < b for a, b in zip(stamps, stamps[1:]))
            assert all(t < duration for t in stamps)


def test_cli_determinism(tmp_path):
    with criterion("cli-determinism"):
        rows = synthetic_truth(40)
        for row in rows[::5]:  # every fifth instance gets a long prompt
            row["yes_probabilities"] = [0.9, 0.6, 0.3]
        truth_path = write_jsonl(tmp_path / "truth.jsonl", rows)
        instance_dicts = []
        for i in range(40):
            prompt = words(31, f"p{i}w") if i % 5 == 0 else f"scene number {i}"
            instance_dicts.append(make_instance(i, prompt=prompt).to_json_dict())
        instances = write_jsonl(tmp_path / "instances.jsonl", instance_dicts)

        outputs = []
        for name, inflight in (("run1", 1), ("run2", 8), ("run3", 8)):
            out = tmp_path / f"{name}.jsonl"
            code = main(
                [
                    "score",
                    "--input", str(instances),
                    "--backend", f"mock:oracle:{truth_path}",
                    "--dimension", "both",
                    "--out", str(out),
                    "--max-inflight", str(inflight),
                ]
            )
            assert code == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]
