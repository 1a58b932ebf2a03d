from __future__ import annotations

import csv
import io
import json
import subprocess
import sys

import pytest

from halluguard import __version__
from halluguard.backend import fixture_key
from halluguard.cli import main
from halluguard.corpus import load_records
from halluguard.envelope import envelope_to_dict, parse_envelope

from conftest import FIXTURES
from reference_values import USECASE_THS

USECASE = FIXTURES / "usecase"


def run_cli(*argv: str) -> int:
    return main([str(a) for a in argv])


# --- run ------------------------------------------------------------------------------


def test_run_usecase_replay(tmp_path, capsys):
    out = tmp_path / "runs.jsonl"
    code = run_cli("run", "--prompts", USECASE / "prompts.txt", "--backend", "replay",
                   "--replay-dir", USECASE / "replay", "--out", out)
    assert code == 0
    recs = load_records(out)
    assert len(recs) == 1 and recs[0].ok
    assert recs[0].ths.as_tuple() == pytest.approx(USECASE_THS, abs=5e-4)
    assert "1 records written" in capsys.readouterr().err


def test_run_mock_five_prompts(tmp_path):
    prompts = tmp_path / "p.txt"
    prompts.write_text("".join(f"Describe place {i}.\n" for i in range(5)))
    out = tmp_path / "runs.jsonl"
    assert run_cli("run", "--prompts", prompts, "--out", out, "--workers", "2") == 0
    recs = load_records(out)
    assert [r.prompt_id for r in recs] == [1, 2, 3, 4, 5]
    # the echoing mock judge returns no JSON, so the lexicon fallback scores the texts
    assert all(r.ok and r.stages[3].notes for r in recs)


def test_record_then_replay_with_one_missing(tmp_path, capsys):
    prompts = tmp_path / "p.txt"
    prompts.write_text("Explain the tides of Zharmoria.\nDescribe the city of Orlan.\nDiscuss the myth of Kel.\n")
    fixtures = tmp_path / "fx"
    assert run_cli("run", "--prompts", prompts, "--out", tmp_path / "a.jsonl", "--record-dir", fixtures) == 0
    assert len(list(fixtures.glob("*.txt"))) == 12
    # drop the front-end fixture for prompt 2
    (fixtures / f"{fixture_key('front_end', 'Describe the city of Orlan.')}.txt").unlink()
    out = tmp_path / "b.jsonl"
    code = run_cli("run", "--prompts", prompts, "--backend", "replay", "--replay-dir", fixtures, "--out", out)
    assert code == 1
    recs = load_records(out)
    assert len(recs) == 3
    assert [r.prompt_id for r in recs if not r.ok] == [2]
    assert recs[1].failed_stage == "front_end" and "FixtureMiss" in recs[1].error
    assert "prompt 2 failed at front_end" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["run"],
    ["run", "--prompts", "/nonexistent/p.txt"],
    ["run", "--prompts", USECASE / "prompts.txt", "--backend", "replay"],
    ["run", "--prompts", USECASE / "prompts.txt", "--weights", "1,2"],
    ["run", "--prompts", USECASE / "prompts.txt", "--na", "0"],
    ["run", "--prompts", USECASE / "prompts.txt", "--backend", "live"],
    ["--config", "/nonexistent.toml", "run"],
])
def test_config_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("HG_ENDPOINT_URL", raising=False)
    monkeypatch.chdir(tmp_path)
    assert run_cli(*argv) == 2
    assert capsys.readouterr().err.startswith("halluguard: ")


def test_run_with_toml(tmp_path):
    cfg = tmp_path / "hg.toml"
    out = tmp_path / "r.jsonl"
    cfg.write_text(f'[run]\nprompts = "{USECASE / "prompts.txt"}"\nbackend = "replay"\n'
                   f'replay_dir = "{USECASE / "replay"}"\nout = "{out}"\n')
    assert run_cli("--config", cfg, "run") == 0
    assert load_records(out)[0].ok


def test_empty_corpus_is_config_error(tmp_path):
    p = tmp_path / "p.txt"
    p.write_text("\n")
    assert run_cli("run", "--prompts", p, "--out", tmp_path / "o.jsonl") == 2


# --- report -------------------------------------------------------------------------------


def test_report_fixture(tmp_path, capsys):
    out = tmp_path / "rep"
    assert run_cli("report", FIXTURES / "corpus310" / "runs.jsonl", "--out-dir", out) == 0
    totals = list(csv.DictReader(io.StringIO((out / "totals.csv").read_text())))
    for row, want in zip(totals, (-1.52, -14.12, -43.27)):
        assert float(row["total"]) == pytest.approx(want, rel=0.01)
    red = {(r["basis"], r["to_level"]): r["percent"]
           for r in csv.DictReader(io.StringIO((out / "reductions.csv").read_text()))}
    assert float(red[("totals", "2")]) == pytest.approx(828, rel=0.02)
    assert float(red[("totals", "3")]) == pytest.approx(2746, rel=0.02)
    assert "Mean" in capsys.readouterr().out
    assert len((out / "ths_per_prompt.csv").read_text().splitlines()) == 311


def test_report_is_pure(tmp_path):
    runs = FIXTURES / "corpus310" / "runs.jsonl"
    run_cli("report", runs, "--out-dir", tmp_path / "a", "--svg")
    run_cli("report", runs, "--out-dir", tmp_path / "b", "--svg")
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_report_errors(tmp_path):
    assert run_cli("report", tmp_path / "none.jsonl") == 2
    bad = tmp_path / "v9.jsonl"
    bad.write_text('{"record_version": 9}\n')
    assert run_cli("report", bad, "--out-dir", tmp_path / "o") == 1
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run_cli("report", empty, "--out-dir", tmp_path / "o") == 1


def test_report_population_sd(tmp_path):
    run_cli("report", FIXTURES / "corpus310" / "runs.jsonl", "--out-dir", tmp_path, "--population-sd")
    sd1 = float(next(csv.DictReader(io.StringIO((tmp_path / "totals.csv").read_text())))["sd"])
    assert sd1 == pytest.approx(0.031720 * (309 / 310) ** 0.5, abs=1e-6)


# --- score ----------------------------------------------------------------------------------


def test_score_empty(tmp_path, capsys):
    f = tmp_path / "e.txt"
    f.write_text("")
    assert run_cli("score", "--text-file", f) == 0
    assert capsys.readouterr().out.strip() == '{"FCD":0,"FDF":0,"FGR":0,"ECS":0}'


def test_score_text(tmp_path, capsys):
    f = tmp_path / "t.txt"
    f.write_text(" ".join(["word"] * 96 + ["historical", "records", "purely", "fictional"]))
    assert run_cli("score", "--text-file", f) == 0
    assert json.loads(capsys.readouterr().out) == {"FCD": 0, "FDF": 1, "FGR": 1, "ECS": 1}
    assert run_cli("score", "--text-file", f, "--no-normalize-fgr") == 0
    assert json.loads(capsys.readouterr().out)["FGR"] == 1


def test_score_errors(tmp_path):
    assert run_cli("score", "--text-file", tmp_path / "none.txt") == 2
    f = tmp_path / "t.txt"
    f.write_text("x")
    assert run_cli("score", "--text-file", f, "--lexicon", tmp_path / "nolex.txt") == 2


# --- validate-envelope -------------------------------------------------------------------------


def test_validate_listing(capsys):
    assert run_cli("validate-envelope", FIXTURES / "ovon_feloria.json") == 0
    assert capsys.readouterr().out == ""


def test_validate_201_words(tmp_path, capsys):
    doc = envelope_to_dict(parse_envelope((FIXTURES / "ovon_feloria.json").read_bytes()))
    doc["ovon"]["events"][2]["parameters"]["dialogEvent"]["features"]["text"]["tokens"] = [
        {"value": " ".join(["w"] * 201)}]
    f = tmp_path / "e.json"
    f.write_text(json.dumps(doc))
    assert run_cli("validate-envelope", f) == 1
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["error events[2].whisper.value max-200-words"]


def test_validate_malformed(tmp_path, capsys):
    f = tmp_path / "e.json"
    f.write_text("{")
    assert run_cli("validate-envelope", f) == 1
    assert capsys.readouterr().out.startswith("error $ MalformedJson")
    assert run_cli("validate-envelope", tmp_path / "none.json") == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "halluguard", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
