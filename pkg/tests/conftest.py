from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
FIXED_TIME = datetime(2024, 12, 30, 2, 6, 7, tzinfo=timezone.utc)


def fixed_clock() -> datetime:
    return FIXED_TIME


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def feloria_bytes() -> bytes:
    return (FIXTURES / "ovon_feloria.json").read_bytes()


def replay_text(role: str, replay_dir: Path = FIXTURES / "usecase" / "replay") -> str:
    """Recorded reply for ``role`` in a replay directory holding one reply per role."""
    import json

    for meta in sorted(replay_dir.glob("*.meta.json")):
        if json.loads(meta.read_text(encoding="utf-8"))["role"] == role:
            return meta.with_name(meta.name.replace(".meta.json", ".txt")).read_text(encoding="utf-8")
    raise LookupError(role)
