"""qeval command line: score, build-sft, eval, v2s, and the qc subcommands.

Configuration is a JSON file with optional sections (backend, v2s, scoring,
qc, instances_path); command-line flags override file values. All commands
are deterministic given the same config, mock backend, and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Iterator, Sequence

from .backend import Backend, BackendConfig, backend_from_spec
from .errors import MetricError, QevalError
from .metrics import instance_level, model_level
from .prompts import build_sft_record
from .qc.protocol import QcConfig, plan_campaign, sample_golden
from .scorer import DEFAULT_MAX_INFLIGHT, InputError, ScoreReport, score_batch
from .types import Dimension, InstanceRecord, MediaKind, decode_jsonl, encode_jsonl
from .v2s import V2sConfig, is_long_prompt, score_alignment_long


def load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError("config file must contain a JSON object")
    return config


def _dataclass_from_section(cls: type, section: dict[str, Any], **overrides: Any) -> Any:
    valid = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
    unknown = set(section) - valid
    if unknown:
        raise ValueError(f"unknown {cls.__name__} config keys: {sorted(unknown)}")
    merged = {**section, **{k: v for k, v in overrides.items() if v is not None}}
    if "vague_bounds" in merged and isinstance(merged["vague_bounds"], list):
        merged["vague_bounds"] = tuple(merged["vague_bounds"])
    return cls(**merged)


def backend_config(config: dict[str, Any]) -> BackendConfig:
    return _dataclass_from_section(BackendConfig, config.get("backend", {}))


def v2s_config(config: dict[str, Any]) -> V2sConfig:
    return _dataclass_from_section(V2sConfig, config.get("v2s", {}))


def qc_config(config: dict[str, Any], **overrides: Any) -> QcConfig:
    return _dataclass_from_section(QcConfig, config.get("qc", {}), **overrides)


def _parse_dimensions(value: str) -> tuple[Dimension, ...]:
    if value == "both":
        return (Dimension.QUALITY, Dimension.ALIGNMENT)
    return (Dimension(value),)


def _decode_instance_lines(fh) -> Iterator[InstanceRecord | InputError]:
    for line_no, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield InstanceRecord.from_json_dict(json.loads(line))
        except Exception as exc:
            yield InputError(message=f"{type(exc).__name__}: {exc}", line=line_no)


def _read_instance_lines(path: str) -> Iterator[InstanceRecord | InputError]:
    if path == "-":
        yield from _decode_instance_lines(sys.stdin)
        return
    with open(path, encoding="utf-8") as fh:
        yield from _decode_instance_lines(fh)


def _make_backend(spec: str, config: dict[str, Any]) -> Backend:
    return backend_from_spec(spec, backend_config(config))


def cmd_score(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    rating = _make_backend(args.backend, config)
    text = _make_backend(args.text_backend, config) if args.text_backend else rating
    max_inflight = args.max_inflight or config.get("scoring", {}).get("max_inflight", DEFAULT_MAX_INFLIGHT)
    dims = _parse_dimensions(args.dimension)

    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    ok = failed = 0
    try:
        results = score_batch(
            _read_instance_lines(args.input),
            dims,
            rating,
            text,
            backend_cfg=backend_config(config),
            v2s_cfg=v2s_config(config),
            max_inflight=int(max_inflight),
        )
        for result in results:
            out.write(json.dumps(result.to_json_dict(), ensure_ascii=False) + "\n")
            if isinstance(result, InputError):
                failed += 1
            else:
                # A report with any per-dimension error still counts as a failure
                # for the exit status.
                if any(entry.error is not None for _, entry in result.results):
                    failed += 1
                else:
                    ok += 1
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"scored {ok} ok, {failed} failed", file=sys.stderr)
    return 0 if failed == 0 else 1


def cmd_build_sft(args: argparse.Namespace) -> int:
    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    written = skipped = 0
    try:
        with open(args.input, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    instance = InstanceRecord.from_json_dict(row)
                    records = []
                    if row.get("mos_quality") is not None:
                        records.append(build_sft_record(instance, Dimension.QUALITY, float(row["mos_quality"])))
                    if row.get("mos_alignment") is not None:
                        records.append(build_sft_record(instance, Dimension.ALIGNMENT, float(row["mos_alignment"])))
                    if not records:
                        raise ValueError("row has neither mos_quality nor mos_alignment")
                except Exception as exc:
                    print(f"line {line_no}: skipped ({type(exc).__name__}: {exc})", file=sys.stderr)
                    skipped += 1
                    continue
                written += encode_jsonl(records, out)
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"wrote {written} records, skipped {skipped} rows", file=sys.stderr)
    return 0 if skipped == 0 else 1


def _load_predictions(path: str, dim: Dimension) -> dict[str, float]:
    pred: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            results = row.get("results")
            if not results or dim.value not in results:
                continue
            entry = results[dim.value]
            if entry.get("error") is None and entry.get("score") is not None:
                pred[row["instance_id"]] = float(entry["score"])
    return pred


def _load_truth(path: str, dim: Dimension) -> tuple[dict[str, float], dict[str, str]]:
    truth: dict[str, float] = {}
    generators: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            mos = row.get(f"mos_{dim.value}", row.get("mos"))
            if mos is None:
                continue
            truth[row["instance_id"]] = float(mos)
            if "generator_id" in row:
                generators[row["instance_id"]] = row["generator_id"]
    return truth, generators


def cmd_eval(args: argparse.Namespace) -> int:
    dim = Dimension(args.dimension)
    pred = _load_predictions(args.pred, dim)
    truth, generators = _load_truth(args.truth, dim)
    try:
        if args.level == "instance":
            result = instance_level(pred, truth)
        else:
            result = model_level(pred, truth, generators)
    except MetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result.to_json_dict()))
    return 0


def cmd_v2s(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    cfg = v2s_config(config)
    if not is_long_prompt(args.prompt, cfg):
        print(
            f"error: prompt has {len(args.prompt.split())} words; the long-prompt pipeline "
            f"needs more than {cfg.word_threshold}",
            file=sys.stderr,
        )
        return 2
    backend = _make_backend(args.backend, config)
    text = _make_backend(args.text_backend, config) if args.text_backend else backend
    instance = InstanceRecord(
        id=args.instance_id,
        prompt=args.prompt,
        media=("debug://none",),
        kind=MediaKind.IMAGE,
        generator_id="debug",
    )
    breakdown = score_alignment_long(instance, backend, text, cfg, backend_config(config))
    print(json.dumps(breakdown.to_json_dict(), ensure_ascii=False, indent=2))
    return 0


def cmd_qc_serve(args: argparse.Namespace) -> int:
    from .qc.service import serve

    config = load_config(args.config)
    instances_path = args.instances or config.get("instances_path")
    if not instances_path:
        print("error: provide --instances or set instances_path in the config file", file=sys.stderr)
        return 2
    cfg = qc_config(config, seed=args.seed)
    server = serve(args.port, args.store, instances_path, cfg, host=args.host)
    host, port = server.server_address[:2]
    print(f"qc service listening on http://{host}:{port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_qc_golden_sample(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    cfg = qc_config(config, golden_count=args.n, seed=args.seed)
    with open(args.input, encoding="utf-8") as fh:
        dataset = list(decode_jsonl(fh, InstanceRecord))
    stubs = sample_golden(dataset, cfg)
    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    try:
        for stub in stubs:
            out.write(
                json.dumps(
                    {
                        "instance_id": stub.instance_id,
                        "dimension": stub.dimension.value,
                        "golden_score": stub.golden_score,
                        "hidden": stub.hidden,
                    }
                )
                + "\n"
            )
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"sampled {args.n} instances ({len(stubs)} golden stubs)", file=sys.stderr)
    return 0


def cmd_qc_plan(args: argparse.Namespace) -> int:
    total = plan_campaign(args.train, args.test, args.dims, args.k_train, args.k_test)
    print(total)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qeval", description="Text-to-vision scoring and annotation QC toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_score = sub.add_parser("score", help="score instances from JSONL")
    p_score.add_argument("--input", required=True, help="instances JSONL ('-' for stdin)")
    p_score.add_argument("--dimension", choices=["quality", "alignment", "both"], default="both")
    p_score.add_argument("--backend", required=True, help="mock:hash:<seed> | mock:oracle:<truth.jsonl> | http(s)://url")
    p_score.add_argument("--text-backend", help="separate backend for prompt decomposition")
    p_score.add_argument("--config", help="JSON config file")
    p_score.add_argument("--out", required=True, help="report JSONL ('-' for stdout)")
    p_score.add_argument("--max-inflight", type=int, help="concurrent instances (default 8)")
    p_score.set_defaults(func=cmd_score)

    p_sft = sub.add_parser("build-sft", help="convert MOS-labeled instances into SFT records")
    p_sft.add_argument("--input", required=True)
    p_sft.add_argument("--out", required=True)
    p_sft.set_defaults(func=cmd_build_sft)

    p_eval = sub.add_parser("eval", help="correlate predictions against MOS truth")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--level", choices=["instance", "model"], default="instance")
    p_eval.add_argument("--dimension", choices=["quality", "alignment"], default="quality")
    p_eval.set_defaults(func=cmd_eval)

    p_v2s = sub.add_parser("v2s", help="debug the long-prompt decomposition pipeline")
    p_v2s.add_argument("--prompt", required=True)
    p_v2s.add_argument("--backend", default="mock:hash:0")
    p_v2s.add_argument("--text-backend")
    p_v2s.add_argument("--config")
    p_v2s.add_argument("--instance-id", default="debug")
    p_v2s.set_defaults(func=cmd_v2s)

    p_qc = sub.add_parser("qc", help="annotation quality control")
    qc_sub = p_qc.add_subparsers(dest="qc_command", required=True)

    p_serve = qc_sub.add_parser("serve", help="run the annotation QC service")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--store", required=True, help="event log directory")
    p_serve.add_argument("--config", help="JSON config file")
    p_serve.add_argument("--instances", help="instances JSONL (or instances_path in config)")
    p_serve.add_argument("--seed", type=int, help="override qc seed")
    p_serve.set_defaults(func=cmd_qc_serve)

    p_sample = qc_sub.add_parser("golden-sample", help="sample instances for expert golden scoring")
    p_sample.add_argument("--n", type=int, default=5000)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--input", required=True)
    p_sample.add_argument("--out", default="-")
    p_sample.add_argument("--config")
    p_sample.set_defaults(func=cmd_qc_golden_sample)

    p_plan = qc_sub.add_parser("plan", help="campaign annotation-count arithmetic")
    p_plan.add_argument("--train", type=int, required=True)
    p_plan.add_argument("--test", type=int, required=True)
    p_plan.add_argument("--dims", type=int, default=2)
    p_plan.add_argument("--k-train", type=int, default=3)
    p_plan.add_argument("--k-test", type=int, default=12)
    p_plan.set_defaults(func=cmd_qc_plan)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QevalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
