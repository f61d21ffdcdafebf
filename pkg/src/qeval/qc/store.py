"""Append-only JSONL event log with snapshot replay.

Every state change in the QC service is an event appended to events.jsonl;
startup replays the log into memory. A periodic snapshot (written atomically
alongside the log) records the state after the first N events so replay cost
stays bounded while the log itself is never rewritten.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterator


class EventLog:
    def __init__(self, root: str | Path, snapshot_every: int = 500):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.events_path = self.root / "events.jsonl"
        self.snapshot_path = self.root / "snapshot.json"
        self.snapshot_every = snapshot_every
        self._count = sum(1 for _ in self.iter_events())

    @property
    def count(self) -> int:
        return self._count

    def append(self, event: dict[str, Any]) -> int:
        """Append one event; returns the total event count afterwards."""
        line = json.dumps(event, ensure_ascii=False)
        with self.events_path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._count += 1
        return self._count

    def iter_events(self, start: int = 0) -> Iterator[dict[str, Any]]:
        """Yield events in order, skipping the first `start`."""
        if not self.events_path.exists():
            return
        with self.events_path.open(encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                line = line.strip()
                if not line or i < start:
                    continue
                yield json.loads(line)

    def write_snapshot(self, state: dict[str, Any], applied: int) -> None:
        """Atomically persist the state reached after `applied` events."""
        tmp = self.snapshot_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps({"applied": applied, "state": state}, ensure_ascii=False), encoding="utf-8")
        tmp.replace(self.snapshot_path)

    def read_snapshot(self) -> tuple[dict[str, Any], int] | None:
        if not self.snapshot_path.exists():
            return None
        payload = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
        return payload["state"], payload["applied"]

    def should_snapshot(self, applied: int, last_snapshot: int) -> bool:
        return applied - last_snapshot >= self.snapshot_every
