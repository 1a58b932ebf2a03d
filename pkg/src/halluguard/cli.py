"""Command line: ``run``, ``report``, ``score`` and ``validate-envelope``.

Exit codes: 0 success, 1 data or pipeline failures, 2 configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .agents import run_batch
from .backend import Backend, LiveBackend, MockBackend, RecordingBackend, ReplayBackend
from .config import ConfigError, RunConfig, build_run_config, load_toml
from .corpus import append_record, load_prompts, load_records, UnknownRecordVersion
from .envelope import EnvelopeError, parse_envelope, validate_envelope
from .kpi import Lexicon, score_all
from .report import build_report, write_report
from .scoring import EmptyInput

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("halluguard")


def _err(msg: str) -> None:
    print(f"halluguard: {msg}", file=sys.stderr)


def _make_backend(cfg: RunConfig) -> Backend:
    backend: Backend
    if cfg.backend == "live":
        backend = LiveBackend(cfg.endpoint_profile())
    elif cfg.backend == "replay":
        assert cfg.replay_dir is not None
        backend = ReplayBackend(cfg.replay_dir)
    else:
        backend = MockBackend()
    if cfg.record_dir is not None:
        backend = RecordingBackend(backend, cfg.record_dir)
    return backend


def cmd_run(args: argparse.Namespace, doc: dict) -> int:
    overrides = {
        "prompts": args.prompts,
        "out": args.out,
        "backend": args.backend,
        "replay_dir": args.replay_dir,
        "record_dir": args.record_dir,
        "workers": args.workers,
        "weights": args.weights,
        "na": args.na,
        "lexicon": args.lexicon,
        "strict_envelope": args.strict_envelope,
        "judge_fallback": False if args.no_judge_fallback else None,
        "normalize_fgr": False if args.no_normalize_fgr else None,
        "zero_based": args.zero_based,
        "envelope_every_hop": args.envelope_every_hop,
    }
    try:
        cfg = build_run_config(doc, overrides)
        cfg.validate()
        pcfg = cfg.pipeline_config()
        backend = _make_backend(cfg)
        assert cfg.prompts is not None
        prompts = load_prompts(cfg.prompts, zero_based=cfg.zero_based)
    except (ConfigError, ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_CONFIG

    n = failed = 0
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    with open(cfg.out, "w", encoding="utf-8") as sink:
        for rec in run_batch(((p.prompt_id, p.text) for p in prompts), backend, pcfg, cfg.workers):
            append_record(sink, rec)
            n += 1
            if not rec.ok:
                failed += 1
                _err(f"prompt {rec.prompt_id} failed at {rec.failed_stage}: {rec.error}")
    print(f"{n} records written to {cfg.out} ({failed} failed)", file=sys.stderr)
    return EXIT_DATA if failed else EXIT_OK


def cmd_report(args: argparse.Namespace, doc: dict) -> int:
    try:
        records = load_records(args.runs)
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except (UnknownRecordVersion, ValueError) as exc:
        _err(str(exc))
        return EXIT_DATA
    try:
        rep = build_report(records, population_sd=args.population_sd)
    except EmptyInput as exc:
        _err(str(exc))
        return EXIT_DATA
    write_report(rep, args.out_dir, svg=args.svg)
    sys.stdout.write(Path(args.out_dir, "summary.txt").read_text(encoding="utf-8"))
    return EXIT_OK


def _compact(x: float) -> float | int:
    return int(x) if x == int(x) else x


def cmd_score(args: argparse.Namespace, doc: dict) -> int:
    try:
        text = Path(args.text_file).read_text(encoding="utf-8")
        lex = Lexicon.load(args.lexicon) if args.lexicon else Lexicon.default()
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    rec = score_all(text, lex, normalize_fgr=not args.no_normalize_fgr)
    print(json.dumps({k: _compact(v) for k, v in rec.to_dict().items()}, separators=(",", ":")))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, doc: dict) -> int:
    try:
        raw = Path(args.file).read_bytes()
    except OSError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        env = parse_envelope(raw)
    except EnvelopeError as exc:
        print(f"error {exc.path or '$'} {type(exc).__name__}: {exc.message}")
        return EXIT_DATA
    violations = validate_envelope(env)
    for v in violations:
        print(v)
    return EXIT_DATA if violations else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="halluguard", description="Multi-agent hallucination mitigation pipeline")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the pipeline over a prompt corpus")
    r.add_argument("--prompts", help="prompts.txt or prompts.jsonl")
    r.add_argument("--out", help="output runs.jsonl (default runs.jsonl)")
    r.add_argument("--backend", choices=("live", "replay", "mock"))
    r.add_argument("--replay-dir")
    r.add_argument("--record-dir", help="store every reply as a replay fixture here")
    r.add_argument("--workers", type=int)
    r.add_argument("--weights", help="w1,w2,w3,w4 (default 0.25 each)")
    r.add_argument("--na", type=int, help="number of agents in the THS denominator (default 3)")
    r.add_argument("--lexicon", help="lexicon file for the fallback scorer")
    r.add_argument("--strict-envelope", action="store_true", default=None)
    r.add_argument("--no-judge-fallback", action="store_true")
    r.add_argument("--no-normalize-fgr", action="store_true")
    r.add_argument("--zero-based", action="store_true", default=None)
    r.add_argument("--envelope-every-hop", action="store_true", default=None)
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="tables and figure data from runs.jsonl")
    rep.add_argument("runs")
    rep.add_argument("--out-dir", default="report")
    rep.add_argument("--svg", action="store_true", help="also write SVG charts")
    rep.add_argument("--population-sd", action="store_true")
    rep.set_defaults(func=cmd_report)

    s = sub.add_parser("score", help="lexicon KPIs for one text file")
    s.add_argument("--text-file", required=True)
    s.add_argument("--lexicon")
    s.add_argument("--no-normalize-fgr", action="store_true")
    s.set_defaults(func=cmd_score)

    v = sub.add_parser("validate-envelope", help="check an OVON envelope file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        doc = load_toml(args.config) if args.config else {}
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    return args.func(args, doc)


if __name__ == "__main__":
    sys.exit(main())
