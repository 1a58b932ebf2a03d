"""Prompt corpora in, run records and CSV tables out."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

from .agents import PipelineRunRecord
from .scoring import EmptyInput, delta_ths

log = logging.getLogger(__name__)

RECORD_VERSION = 1


class EmptyCorpus(ValueError):
    pass


class NonContiguousIds(ValueError):
    pass


class UnknownRecordVersion(ValueError):
    def __init__(self, path: str, line: int, version: object):
        self.line = line
        self.version = version
        super().__init__(f"{path}:{line}: unknown record_version {version!r} (supported: {RECORD_VERSION})")


@dataclass(frozen=True)
class PromptEntry:
    prompt_id: int
    text: str
    tags: tuple[str, ...] = ()


def _warn_duplicates(entries: Sequence[PromptEntry]) -> None:
    seen: dict[str, int] = {}
    for e in entries:
        if e.text in seen:
            log.warning("prompt %d duplicates prompt %d", e.prompt_id, seen[e.text])
        else:
            seen[e.text] = e.prompt_id


def _load_jsonl(path: Path, first: int) -> list[PromptEntry]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        text = obj.get("text") if isinstance(obj, dict) else None
        if not isinstance(text, str) or not text.strip():
            raise ValueError(f"{path}:{lineno}: each line needs a non-empty 'text'")
        rows.append((lineno, obj.get("id"), text.strip(), tuple(obj.get("tags") or ())))
    explicit = [r[1] is not None for r in rows]
    if any(explicit) and not all(explicit):
        raise NonContiguousIds(f"{path}: either every line or no line may carry an id")
    if rows and all(explicit):
        ids = sorted(int(r[1]) for r in rows)
        if ids != list(range(first, first + len(rows))):
            raise NonContiguousIds(f"{path}: ids must be unique and contiguous from {first}")
        rows.sort(key=lambda r: int(r[1]))
        return [PromptEntry(int(r[1]), r[2], r[3]) for r in rows]
    return [PromptEntry(first + i, r[2], r[3]) for i, r in enumerate(rows)]


def load_prompts(path: str | Path, zero_based: bool = False) -> list[PromptEntry]:
    """Read ``.txt`` (one prompt per non-empty line) or ``.jsonl`` corpora."""
    path = Path(path)
    first = 0 if zero_based else 1
    if path.suffix == ".jsonl":
        entries = _load_jsonl(path, first)
    else:
        lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
        entries = [PromptEntry(first + i, t) for i, t in enumerate(ln for ln in lines if ln)]
    if not entries:
        raise EmptyCorpus(f"{path}: no prompts")
    _warn_duplicates(entries)
    return entries


# --- run records -----------------------------------------------------------


def append_record(sink: IO[str], rec: PipelineRunRecord) -> None:
    doc = {"record_version": RECORD_VERSION, **rec.to_dict()}
    sink.write(json.dumps(doc, ensure_ascii=False) + "\n")
    sink.flush()


def load_records(path: str | Path) -> list[PipelineRunRecord]:
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        doc = json.loads(line)
        version = doc.pop("record_version", None)
        if version != RECORD_VERSION:
            raise UnknownRecordVersion(str(path), lineno, version)
        out.append(PipelineRunRecord.from_dict(doc))
    out.sort(key=lambda r: r.prompt_id)
    return out


# --- CSV -------------------------------------------------------------------


def fmt_number(x: float | None) -> str:
    """Six decimals with trailing zeros dropped; ``None`` becomes an empty cell."""
    if x is None:
        return ""
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _rows(records: Sequence[PipelineRunRecord], which: str) -> tuple[list[str], list[list[str]]]:
    if which == "ths":
        header = ["prompt_id", "ths1", "ths2", "ths3"]
        rows = [
            [str(r.prompt_id), *(fmt_number(v) for v in (r.ths.as_tuple() if r.ths else (None,) * 3))]
            for r in records
        ]
    elif which == "deltas":
        header = ["prompt_id", "delta_ths"]
        rows = [[str(r.prompt_id), fmt_number(delta_ths(r.ths) if r.ths else None)] for r in records]
    elif which == "kpis":
        header = ["prompt_id"] + [f"{k}{lvl}" for lvl in (1, 2, 3) for k in ("fcd", "fgr", "fdf", "ecs")]
        rows = []
        for r in records:
            row = [str(r.prompt_id)]
            for lvl in (1, 2, 3):
                k = r.kpis.get(lvl)
                row += [fmt_number(getattr(k, f)) if k else "" for f in ("fcd", "fgr", "fdf", "ecs")]
            rows.append(row)
    else:
        raise ValueError(f"unknown export {which!r}; expected kpis, ths or deltas")
    return header, rows


def export_csv(records: Iterable[PipelineRunRecord], which: str) -> str:
    records = sorted(records, key=lambda r: r.prompt_id)
    if not records:
        raise EmptyInput("no records to export")
    header, rows = _rows(records, which)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
