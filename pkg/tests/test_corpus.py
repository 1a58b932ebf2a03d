from __future__ import annotations

import csv
import io
import json
import logging

import pytest

from halluguard.agents import PipelineConfig, PipelineRunRecord, run_pipeline
from halluguard.backend import ReplayBackend
from halluguard.corpus import (
    EmptyCorpus, NonContiguousIds, UnknownRecordVersion, append_record, export_csv, fmt_number,
    load_prompts, load_records,
)
from halluguard.kpi import KpiRecord
from halluguard.scoring import EmptyInput, ThsTriple, ths_weighted

from conftest import FIXTURES, fixed_clock
from reference_values import CANINES_PROMPT_KEY, N_PROMPTS, USECASE_PROMPT_START

EXEMPLARS = FIXTURES / "corpus310" / "prompts.txt"


def write(tmp_path, name: str, text: str):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def record(pid: int, kpis: tuple[KpiRecord, KpiRecord, KpiRecord] | None = None, ths=None) -> PipelineRunRecord:
    if kpis is not None and ths is None:
        ths = ThsTriple(*(ths_weighted(k) for k in kpis))
    return PipelineRunRecord(pid, f"prompt {pid}", (), dict(enumerate(kpis or (), start=1)), ths)


# --- prompts ------------------------------------------------------------------------


def test_first_five_exemplars(tmp_path):
    lines = EXEMPLARS.read_text(encoding="utf-8").splitlines()[:5]
    entries = load_prompts(write(tmp_path, "p.txt", "\n".join(lines) + "\n"))
    assert [e.prompt_id for e in entries] == [1, 2, 3, 4, 5]
    assert entries[0].text.startswith("Explain the ancient communication methods")
    assert entries[3].text.startswith(USECASE_PROMPT_START)


def test_blank_lines_do_not_skip_ids(tmp_path):
    entries = load_prompts(write(tmp_path, "p.txt", "\n a \n\n\nb\n  \nc"))
    assert [(e.prompt_id, e.text) for e in entries] == [(1, "a"), (2, "b"), (3, "c")]
    assert [e.prompt_id for e in load_prompts(tmp_path / "p.txt", zero_based=True)] == [0, 1, 2]


@pytest.mark.parametrize("name, text", [("e.txt", ""), ("e.txt", "\n  \n"), ("e.jsonl", "\n")])
def test_empty_corpus(tmp_path, name, text):
    with pytest.raises(EmptyCorpus):
        load_prompts(write(tmp_path, name, text))


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_prompts(tmp_path / "none.txt")


def test_jsonl_with_and_without_ids(tmp_path):
    p = write(tmp_path, "p.jsonl", '{"id": 2, "text": "b", "tags": ["x"]}\n{"id": 1, "text": "a"}\n')
    assert [(e.prompt_id, e.text, e.tags) for e in load_prompts(p)] == [(1, "a", ()), (2, "b", ("x",))]
    p = write(tmp_path, "q.jsonl", '{"text": "a"}\n\n{"text": "b"}\n')
    assert [e.prompt_id for e in load_prompts(p)] == [1, 2]


@pytest.mark.parametrize("text", [
    '{"id": 1, "text": "a"}\n{"id": 3, "text": "b"}\n',
    '{"id": 1, "text": "a"}\n{"id": 1, "text": "b"}\n',
    '{"id": 1, "text": "a"}\n{"text": "b"}\n',
    '{"id": 0, "text": "a"}\n',
])
def test_jsonl_bad_ids(tmp_path, text):
    with pytest.raises(NonContiguousIds):
        load_prompts(write(tmp_path, "p.jsonl", text))


def test_jsonl_needs_text(tmp_path):
    with pytest.raises(ValueError):
        load_prompts(write(tmp_path, "p.jsonl", '{"id": 1}\n'))


def test_duplicates_warn(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        entries = load_prompts(write(tmp_path, "p.txt", "a\nb\na\n"))
    assert len(entries) == 3
    assert "prompt 3 duplicates prompt 1" in caplog.text


def test_shipped_corpus():
    entries = load_prompts(EXEMPLARS)
    assert len(entries) == N_PROMPTS
    assert entries[3].text.startswith(USECASE_PROMPT_START)
    assert CANINES_PROMPT_KEY in entries[55].text
    assert len({e.text for e in entries}) == N_PROMPTS


# --- records -------------------------------------------------------------------------------


def test_append_load_round_trip(tmp_path):
    rec = run_pipeline(4, (FIXTURES / "usecase" / "prompts.txt").read_text().strip(),
                       ReplayBackend(FIXTURES / "usecase" / "replay"), PipelineConfig(clock=fixed_clock))
    failed = PipelineRunRecord(2, "x", (), failed_stage="front_end", error="BackendError: no")
    path = tmp_path / "runs.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        append_record(fh, rec)
        append_record(fh, failed)
    assert json.loads(path.read_text().splitlines()[0])["record_version"] == 1
    assert load_records(path) == [failed, rec]


def test_unknown_version(tmp_path):
    path = tmp_path / "runs.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        append_record(fh, record(1, (KpiRecord(),) * 3))
        fh.write(json.dumps({"record_version": 2, "prompt_id": 2}) + "\n")
    with pytest.raises(UnknownRecordVersion) as ei:
        load_records(path)
    assert ei.value.line == 2 and ":2:" in str(ei.value)


def test_shipped_runs_load_in_order():
    recs = load_records(FIXTURES / "corpus310" / "runs.jsonl")
    assert [r.prompt_id for r in recs] == list(range(1, N_PROMPTS + 1))
    assert all(r.ok and len(r.stages) == 4 for r in recs)


# --- CSV -------------------------------------------------------------------------------------


@pytest.mark.parametrize("x, s", [
    (None, ""), (0.0, "0"), (-0.0, "0"), (-1e-9, "0"), (-0.1 / 12, "-0.008333"), (2.0, "2"),
    (0.5, "0.5"), (-0.0666666667, "-0.066667"), (828.947368, "828.947368"),
])
def test_fmt_number(x, s):
    assert fmt_number(x) == s


def test_export_usecase_row():
    kp = (KpiRecord(0.2, 0.1, 0.1, 0.1), KpiRecord(0.1, 0.1, 0.2, 0.2), KpiRecord(0.1, 0.2, 0.3, 0.4))
    out = export_csv([record(4, kp)], "ths")
    assert out.splitlines() == ["prompt_id,ths1,ths2,ths3", "4,-0.008333,-0.033333,-0.066667"]
    kp_csv = export_csv([record(4, kp)], "kpis").splitlines()
    assert kp_csv[0] == "prompt_id,fcd1,fgr1,fdf1,ecs1,fcd2,fgr2,fdf2,ecs2,fcd3,fgr3,fdf3,ecs3"
    assert kp_csv[1] == "4,0.2,0.1,0.1,0.1,0.1,0.1,0.2,0.2,0.1,0.2,0.3,0.4"


def test_export_deltas_zero():
    out = export_csv([record(1, ths=ThsTriple(0, 0, 0))], "deltas")
    assert out.splitlines()[1] == "1,0"


def test_export_rectangular_and_sorted():
    recs = [record(3, (KpiRecord(),) * 3), PipelineRunRecord(1, "x", (), failed_stage="front_end"),
            record(2, (KpiRecord(fdf=1),) * 3)]
    for which in ("kpis", "ths", "deltas"):
        rows = list(csv.reader(io.StringIO(export_csv(recs, which))))
        assert len(rows) == 4
        assert len({len(r) for r in rows}) == 1
        assert [r[0] for r in rows[1:]] == ["1", "2", "3"]


def test_export_errors():
    with pytest.raises(EmptyInput):
        export_csv([], "ths")
    with pytest.raises(ValueError):
        export_csv([record(1, ths=ThsTriple(0, 0, 0))], "nope")
