"""Annotation QC service: batch lifecycle over JSON/HTTP.

State lives in memory and is rebuilt from the event log on startup; every
mutation appends an event first (single writer, one lock), then applies it.
Rater-facing payloads never carry golden markers: batch views expose only
instance id, prompt, media, and kind.

Endpoints:
  POST /raters/{id}/batches/next          assign a fresh batch
  POST /batches/{id}/annotations          submit ratings (accumulative)
  POST /batches/{id}/submit               gate the batch -> verdict
  GET  /batches/{id}                      batch state
  POST /golden/import                     privileged golden-score entry
  GET  /stats/variance                    per-key variance summary
  GET  /export/mos?split=train|test       aggregated MOS as JSONL
"""

from __future__ import annotations

import json
import math
import os
import random
import re
import threading
import warnings
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, urlparse

from ..errors import ValidationError
from ..types import (
    Annotation,
    AnnotationBatch,
    BatchStatus,
    Dimension,
    GoldenRecord,
    InstanceRecord,
    decode_jsonl,
)
from .protocol import QcConfig, aggregate_mos, gate_batch, variance_stats
from .store import EventLog

ADMIN_TOKEN_ENV = "QEVAL_QC_ADMIN_TOKEN"


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(message)


def _golden_key(instance_id: str, dimension: str) -> str:
    return f"{instance_id}\x00{dimension}"


class QcState:
    """In-memory index over the event log; mutated only via apply()."""

    def __init__(self, instances: list[InstanceRecord]):
        self.instances: dict[str, InstanceRecord] = {r.id: r for r in instances}
        self.instance_order: list[str] = [r.id for r in instances]
        self.golden: dict[str, float] = {}  # _golden_key -> score
        self.batches: dict[str, dict[str, Any]] = {}
        self.batch_seq = 0
        # instance ids currently or successfully worked by each rater;
        # instances from rejected batches are removed again (re-assignable).
        self.rater_seen: dict[str, set[str]] = {}

    def apply(self, event: dict[str, Any]) -> None:
        kind = event["kind"]
        if kind == "golden_imported":
            for rec in event["records"]:
                self.golden[_golden_key(rec["instance_id"], rec["dimension"])] = rec["golden_score"]
        elif kind == "batch_created":
            self.batch_seq += 1
            batch = {
                "batch_id": event["batch_id"],
                "rater_id": event["rater_id"],
                "instance_ids": list(event["instance_ids"]),
                "annotations": {},  # (instance_id, dimension) -> score record
                "status": BatchStatus.PENDING.value,
                "srcc": None,
                "overlap_n": None,
                "reason": None,
            }
            self.batches[event["batch_id"]] = batch
            seen = self.rater_seen.setdefault(event["rater_id"], set())
            seen.update(event["instance_ids"])
        elif kind == "annotations_submitted":
            batch = self.batches[event["batch_id"]]
            for ann in event["annotations"]:
                batch["annotations"][(ann["instance_id"], ann["dimension"])] = ann
        elif kind == "batch_gated":
            batch = self.batches[event["batch_id"]]
            batch["status"] = event["verdict"]
            batch["srcc"] = event["srcc"]
            batch["overlap_n"] = event["overlap_n"]
            batch["reason"] = event.get("reason")
            if event["verdict"] == BatchStatus.REJECTED.value:
                seen = self.rater_seen.get(batch["rater_id"], set())
                seen.difference_update(batch["instance_ids"])
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    # Snapshot round-trip (instances are an input corpus, not state).
    def to_snapshot(self) -> dict[str, Any]:
        return {
            "golden": self.golden,
            "batch_seq": self.batch_seq,
            "rater_seen": {r: sorted(s) for r, s in self.rater_seen.items()},
            "batches": [
                {**b, "annotations": list(b["annotations"].values())} for b in self.batches.values()
            ],
        }

    def load_snapshot(self, snap: dict[str, Any]) -> None:
        self.golden = dict(snap["golden"])
        self.batch_seq = snap["batch_seq"]
        self.rater_seen = {r: set(s) for r, s in snap["rater_seen"].items()}
        self.batches = {}
        for b in snap["batches"]:
            anns = {(a["instance_id"], a["dimension"]): a for a in b["annotations"]}
            self.batches[b["batch_id"]] = {**b, "annotations": anns}

    def accepted_annotations(self) -> dict[tuple[str, str], list[dict[str, Any]]]:
        """Annotations of accepted batches grouped by (instance, dimension)."""
        groups: dict[tuple[str, str], list[dict[str, Any]]] = {}
        for batch in self.batches.values():
            if batch["status"] != BatchStatus.ACCEPTED.value:
                continue
            for ann in batch["annotations"].values():
                key = (ann["instance_id"], ann["dimension"])
                groups.setdefault(key, []).append({**ann, "rater_id": batch["rater_id"]})
        return groups


class QcService:
    def __init__(self, instances: list[InstanceRecord], cfg: QcConfig, store_dir: str | Path):
        cfg.validate()
        self.cfg = cfg
        self.lock = threading.Lock()
        self.log = EventLog(store_dir)
        self.state = QcState(instances)
        self._applied = 0
        self._last_snapshot = 0
        snap = self.log.read_snapshot()
        if snap is not None:
            state_dict, applied = snap
            self.state.load_snapshot(state_dict)
            self._applied = applied
            self._last_snapshot = applied
        for event in self.log.iter_events(start=self._applied):
            self.state.apply(event)
            self._applied += 1

    def _record(self, event: dict[str, Any]) -> None:
        """Write-ahead: persist the event, then apply it to memory."""
        self.log.append(event)
        self.state.apply(event)
        self._applied += 1
        if self.log.should_snapshot(self._applied, self._last_snapshot):
            self.log.write_snapshot(self.state.to_snapshot(), self._applied)
            self._last_snapshot = self._applied

    # ---- operations (each called under self.lock by the handler) ----

    def next_batch(self, rater_id: str) -> dict[str, Any]:
        if not rater_id:
            raise ApiError(400, "rater id must be nonempty")
        seen = self.state.rater_seen.get(rater_id, set())
        golden_ids = {k.split("\x00", 1)[0] for k in self.state.golden}
        golden_pool = [i for i in self.state.instance_order if i in golden_ids and i not in seen]
        normal_pool = [i for i in self.state.instance_order if i not in golden_ids and i not in seen]
        cap = self.cfg.batch_cap
        want_golden = math.ceil(self.cfg.golden_injection_fraction * cap)
        rng = random.Random(f"{self.cfg.seed}:{self.state.batch_seq}")
        chosen_golden = rng.sample(golden_pool, min(want_golden, len(golden_pool)))
        chosen_normal = rng.sample(normal_pool, min(cap - len(chosen_golden), len(normal_pool)))
        chosen = chosen_golden + chosen_normal
        rng.shuffle(chosen)
        if not chosen:
            return {"batch_id": None, "rater_id": rater_id, "instances": []}
        batch_id = f"b{self.state.batch_seq + 1:06d}"
        self._record({"kind": "batch_created", "batch_id": batch_id, "rater_id": rater_id, "instance_ids": chosen})
        return {
            "batch_id": batch_id,
            "rater_id": rater_id,
            "instances": [self._instance_view(i) for i in chosen],
        }

    def _instance_view(self, instance_id: str) -> dict[str, Any]:
        rec = self.state.instances[instance_id]
        return {"instance_id": rec.id, "prompt": rec.prompt, "media": list(rec.media), "kind": rec.kind.value}

    def _get_batch(self, batch_id: str) -> dict[str, Any]:
        batch = self.state.batches.get(batch_id)
        if batch is None:
            raise ApiError(404, f"no such batch {batch_id!r}")
        return batch

    def submit_annotations(self, batch_id: str, payload: Any) -> dict[str, Any]:
        batch = self._get_batch(batch_id)
        if batch["status"] != BatchStatus.PENDING.value:
            raise ApiError(409, f"batch {batch_id} already gated")
        rows = payload.get("annotations") if isinstance(payload, dict) else payload
        if not isinstance(rows, list) or not rows:
            raise ApiError(400, "body must be a nonempty list of annotations")
        allowed = set(batch["instance_ids"])
        now = datetime.now(timezone.utc).isoformat()
        cleaned = []
        for row in rows:
            try:
                instance_id = row["instance_id"]
                dimension = Dimension(row["dimension"]).value
                score = row["score"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ApiError(400, f"bad annotation row {row!r}: {exc}") from exc
            if instance_id not in allowed:
                raise ApiError(400, f"instance {instance_id!r} is not part of batch {batch_id}")
            if not isinstance(score, int) or isinstance(score, bool) or not (1 <= score <= 5):
                raise ApiError(400, f"score out of range for {instance_id!r}: {score!r}")
            cleaned.append({"instance_id": instance_id, "dimension": dimension, "score": score, "timestamp": now})
        self._record({"kind": "annotations_submitted", "batch_id": batch_id, "annotations": cleaned})
        return {"ok": True, "count": len(self._get_batch(batch_id)["annotations"])}

    def submit_batch(self, batch_id: str) -> dict[str, Any]:
        batch = self._get_batch(batch_id)
        if batch["status"] != BatchStatus.PENDING.value:
            # Gating is atomic and happens exactly once; duplicate submits
            # just see the stored verdict.
            return self._verdict_view(batch)
        missing = [
            i
            for i in batch["instance_ids"]
            for dim in (Dimension.QUALITY.value, Dimension.ALIGNMENT.value)
            if (i, dim) not in batch["annotations"]
        ]
        if missing:
            raise ApiError(400, f"{len(missing)} ratings missing; every instance needs both dimensions")
        annotations = tuple(
            Annotation(
                rater_id=batch["rater_id"],
                instance_id=a["instance_id"],
                dimension=Dimension(a["dimension"]),
                score=a["score"],
                timestamp=datetime.fromisoformat(a["timestamp"]),
            )
            for a in batch["annotations"].values()
        )
        model = AnnotationBatch(batch_id=batch_id, rater_id=batch["rater_id"], annotations=annotations)
        goldens = {
            (k.split("\x00", 1)[0], Dimension(k.split("\x00", 1)[1])): v for k, v in self.state.golden.items()
        }
        result = gate_batch(model, goldens, self.cfg)
        self._record(
            {
                "kind": "batch_gated",
                "batch_id": batch_id,
                "verdict": result.verdict.value,
                "srcc": result.srcc,
                "overlap_n": result.overlap_n,
                "reason": result.reason,
            }
        )
        return self._verdict_view(self._get_batch(batch_id))

    @staticmethod
    def _verdict_view(batch: dict[str, Any]) -> dict[str, Any]:
        return {
            "verdict": batch["status"],
            "srcc": batch["srcc"],
            "overlap_n": batch["overlap_n"],
            "reason": batch["reason"],
        }

    def batch_view(self, batch_id: str) -> dict[str, Any]:
        batch = self._get_batch(batch_id)
        return {
            "batch_id": batch["batch_id"],
            "rater_id": batch["rater_id"],
            "status": batch["status"],
            "instances": [self._instance_view(i) for i in batch["instance_ids"]],
            "annotations": sorted(batch["annotations"].values(), key=lambda a: (a["instance_id"], a["dimension"])),
            "srcc": batch["srcc"],
            "overlap_n": batch["overlap_n"],
            "reason": batch["reason"],
        }

    def import_golden(self, payload: Any, auth_header: str | None) -> dict[str, Any]:
        expected = os.environ.get(ADMIN_TOKEN_ENV, "")
        if not expected:
            raise ApiError(403, f"golden import disabled: {ADMIN_TOKEN_ENV} not configured")
        if auth_header != f"Bearer {expected}":
            raise ApiError(403, "invalid admin token")
        rows = payload.get("records") if isinstance(payload, dict) else payload
        if not isinstance(rows, list) or not rows:
            raise ApiError(400, "body must be a nonempty list of golden records")
        cleaned = []
        for row in rows:
            try:
                rec = GoldenRecord(
                    instance_id=row["instance_id"],
                    dimension=Dimension(row["dimension"]),
                    golden_score=float(row["golden_score"]),
                )
                rec.validate()
            except (KeyError, TypeError, ValueError, ValidationError) as exc:
                raise ApiError(400, f"bad golden record {row!r}: {exc}") from exc
            if rec.instance_id not in self.state.instances:
                raise ApiError(400, f"unknown instance {rec.instance_id!r}")
            cleaned.append(
                {"instance_id": rec.instance_id, "dimension": rec.dimension.value, "golden_score": rec.golden_score}
            )
        self._record({"kind": "golden_imported", "records": cleaned})
        return {"ok": True, "imported": len(cleaned)}

    def variance_view(self) -> dict[str, Any]:
        groups = {key: [a["score"] for a in anns] for key, anns in self.state.accepted_annotations().items()}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # singleton groups are routine here
            stats = variance_stats(groups)
        return stats.to_json_dict()

    def export_mos(self, split: str) -> str:
        if split not in ("train", "test"):
            raise ApiError(400, f"split must be 'train' or 'test', got {split!r}")
        lines = []
        for (instance_id, dimension), anns in sorted(self.state.accepted_annotations().items()):
            annotations = tuple(
                Annotation(
                    rater_id=a["rater_id"],
                    instance_id=instance_id,
                    dimension=Dimension(dimension),
                    score=a["score"],
                    timestamp=datetime.fromisoformat(a["timestamp"]),
                )
                for a in anns
            )
            try:
                mos = aggregate_mos(annotations, split, self.cfg)
            except Exception:
                continue  # below the split's minimum annotation count
            lines.append(
                json.dumps(
                    {"instance_id": instance_id, "dimension": dimension, "mos": mos.value, "n": len(annotations)},
                    ensure_ascii=False,
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")


_ROUTES = [
    ("POST", re.compile(r"^/raters/(?P<rater_id>[^/]+)/batches/next$"), "next_batch"),
    ("POST", re.compile(r"^/batches/(?P<batch_id>[^/]+)/annotations$"), "submit_annotations"),
    ("POST", re.compile(r"^/batches/(?P<batch_id>[^/]+)/submit$"), "submit_batch"),
    ("GET", re.compile(r"^/batches/(?P<batch_id>[^/]+)$"), "batch_view"),
    ("POST", re.compile(r"^/golden/import$"), "import_golden"),
    ("GET", re.compile(r"^/stats/variance$"), "variance_view"),
    ("GET", re.compile(r"^/export/mos$"), "export_mos"),
]


class _Handler(BaseHTTPRequestHandler):
    server: "QcHttpServer"

    def log_message(self, fmt: str, *args: Any) -> None:  # quiet by default
        if os.environ.get("QEVAL_QC_VERBOSE"):
            super().log_message(fmt, *args)

    def _send(self, status: int, body: str, content_type: str = "application/json") -> None:
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type, Authorization")
        self.end_headers()
        self.wfile.write(data)

    def _send_json(self, status: int, obj: Any) -> None:
        self._send(status, json.dumps(obj, ensure_ascii=False))

    def do_OPTIONS(self) -> None:
        self._send(204, "")

    def _read_body(self) -> Any:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return None
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ApiError(400, f"body is not valid JSON: {exc}") from exc

    def _dispatch(self, method: str) -> None:
        service = self.server.service
        parsed = urlparse(self.path)
        try:
            for verb, pattern, name in _ROUTES:
                if verb != method:
                    continue
                match = pattern.match(parsed.path)
                if not match:
                    continue
                with service.lock:
                    if name == "next_batch":
                        self._send_json(200, service.next_batch(match["rater_id"]))
                    elif name == "submit_annotations":
                        self._send_json(200, service.submit_annotations(match["batch_id"], self._read_body()))
                    elif name == "submit_batch":
                        self._send_json(200, service.submit_batch(match["batch_id"]))
                    elif name == "batch_view":
                        self._send_json(200, service.batch_view(match["batch_id"]))
                    elif name == "import_golden":
                        self._send_json(200, service.import_golden(self._read_body(), self.headers.get("Authorization")))
                    elif name == "variance_view":
                        self._send_json(200, service.variance_view())
                    elif name == "export_mos":
                        query = parse_qs(parsed.query)
                        split = (query.get("split") or ["train"])[0]
                        self._send(200, service.export_mos(split), content_type="application/x-ndjson")
                return
            raise ApiError(404, f"no route for {method} {parsed.path}")
        except ApiError as exc:
            self._send_json(exc.status, {"error": exc.message})
        except Exception as exc:  # surface internal errors as JSON, keep serving
            self._send_json(500, {"error": f"{type(exc).__name__}: {exc}"})

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")


class QcHttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: QcService):
        super().__init__(address, _Handler)
        self.service = service


def load_instances(path: str | Path) -> list[InstanceRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        return list(decode_jsonl(fh, InstanceRecord))


def serve(
    port: int,
    store_dir: str | Path,
    instances_path: str | Path,
    cfg: QcConfig,
    host: str = "127.0.0.1",
) -> QcHttpServer:
    """Build a ready-to-run server; caller invokes serve_forever()."""
    service = QcService(load_instances(instances_path), cfg, store_dir)
    return QcHttpServer((host, port), service)
