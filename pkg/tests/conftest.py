from __future__ import annotations

import json
import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qeval.types import InstanceRecord, MediaKind


def make_instance(
    idx: int = 0,
    prompt: str = "a red cube on a table",
    kind: MediaKind = MediaKind.IMAGE,
    generator_id: str = "gen-a",
    duration_s: float | None = None,
    media: tuple[str, ...] | None = None,
) -> InstanceRecord:
    if media is None:
        media = (f"media/{idx:05d}.mp4",) if kind is MediaKind.VIDEO else (f"media/{idx:05d}.png",)
    if kind is MediaKind.VIDEO and len(media) == 1 and duration_s is None:
        duration_s = 4.0
    return InstanceRecord(
        id=f"inst-{idx:05d}",
        prompt=prompt,
        media=media,
        kind=kind,
        generator_id=generator_id,
        duration_s=duration_s,
    )


@pytest.fixture
def instance() -> InstanceRecord:
    return make_instance()


def synthetic_truth(n: int, seed: int = 7, generators: int = 4) -> list[dict]:
    """Hidden-truth rows for the oracle mock: distinct MOS per instance."""
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        rows.append(
            {
                "instance_id": f"inst-{i:05d}",
                "mos_quality": round(rng.uniform(1.0, 5.0), 6),
                "mos_alignment": round(rng.uniform(1.0, 5.0), 6),
                "generator_id": f"gen-{i % generators}",
            }
        )
    return rows


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


@pytest.fixture
def truth_file(tmp_path: Path) -> Path:
    return write_jsonl(tmp_path / "truth.jsonl", synthetic_truth(20))


def words(n: int, base: str = "word") -> str:
    """A prompt with exactly n whitespace tokens."""
    return " ".join(f"{base}{i}" for i in range(n))
