"""Hallucination KPIs: lexicon scorer and parser for LLM-judge replies.

FCD, FDF and ECS are densities per 100 words. FGR is a raw count of
grounding phrases unless ``normalize_fgr`` is set, in which case it is also
reported per 100 words.
"""
from __future__ import annotations

import ast
import json
import math
import re
import string
from dataclasses import dataclass
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator

from .envelope import count_words

KPI_NAMES = ("FCD", "FDF", "FGR", "ECS")
CLAIM_MARKERS = ("numeral", "date", "proper_noun")

_MONTHS = {
    "january", "february", "march", "april", "may", "june", "july",
    "august", "september", "october", "november", "december",
}
_ERAS = {"BC", "AD", "BCE", "CE"}
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
_STRIP = string.punctuation + "“”‘’«»"
_FENCE = re.compile(r"```(?:[A-Za-z0-9_-]+)?\s*(.*?)```", re.DOTALL)


class JudgeParseError(ValueError):
    pass


class NoJsonFound(JudgeParseError):
    pass


class NonNumericKpi(JudgeParseError):
    pass


@dataclass(frozen=True)
class KpiRecord:
    fcd: float = 0.0
    fgr: float = 0.0
    fdf: float = 0.0
    ecs: float = 0.0

    def __post_init__(self):
        for name in ("fcd", "fgr", "fdf", "ecs"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"KPI {name.upper()} must be finite and >= 0, got {v!r}")
            object.__setattr__(self, name, v)

    def to_dict(self) -> dict[str, float]:
        return {"FCD": self.fcd, "FDF": self.fdf, "FGR": self.fgr, "ECS": self.ecs}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> KpiRecord:
        return cls(fcd=d["FCD"], fgr=d["FGR"], fdf=d["FDF"], ecs=d["ECS"])


ZERO = KpiRecord()


def _clean_phrases(phrases: Iterable[str]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for p in phrases:
        p = " ".join(p.lower().split())
        if p:
            seen.setdefault(p, None)
    return tuple(seen)


def _phrase_pattern(phrases: tuple[str, ...]) -> re.Pattern:
    # longest first so the alternation prefers the fuller phrase
    alts = sorted((r" ".join(map(re.escape, p.split(" "))) for p in phrases), key=len, reverse=True)
    return re.compile(r"(?<!\w)(?:" + "|".join(alts) + r")(?!\w)", re.IGNORECASE)


@dataclass(frozen=True)
class Lexicon:
    fgr_phrases: tuple[str, ...]
    fdf_terms: tuple[str, ...]
    ecs_phrases: tuple[str, ...]
    fcd_claim_markers: tuple[str, ...] = CLAIM_MARKERS

    def __post_init__(self):
        for name in ("fgr_phrases", "fdf_terms", "ecs_phrases"):
            cleaned = _clean_phrases(getattr(self, name))
            if not cleaned:
                raise ValueError(f"lexicon section {name} is empty")
            object.__setattr__(self, name, cleaned)
        unknown = set(self.fcd_claim_markers) - set(CLAIM_MARKERS)
        if unknown:
            raise ValueError(f"unknown claim markers: {sorted(unknown)}")
        object.__setattr__(self, "fcd_claim_markers", tuple(self.fcd_claim_markers))

    @cached_property
    def fgr_re(self) -> re.Pattern:
        return _phrase_pattern(self.fgr_phrases)

    @cached_property
    def fdf_re(self) -> re.Pattern:
        return _phrase_pattern(self.fdf_terms)

    @cached_property
    def ecs_re(self) -> re.Pattern:
        return _phrase_pattern(self.ecs_phrases)

    @classmethod
    def from_text(cls, text: str) -> Lexicon:
        """Parse the ``[fgr]`` / ``[fdf]`` / ``[ecs]`` (and optional ``[fcd]``) format."""
        sections: dict[str, list[str]] = {"fgr": [], "fdf": [], "ecs": [], "fcd": []}
        current = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                if current not in sections:
                    raise ValueError(f"line {lineno}: unknown section [{current}]")
                continue
            if current is None:
                raise ValueError(f"line {lineno}: phrase outside of a section")
            sections[current].append(line)
        return cls(
            fgr_phrases=tuple(sections["fgr"]),
            fdf_terms=tuple(sections["fdf"]),
            ecs_phrases=tuple(sections["ecs"]),
            fcd_claim_markers=tuple(sections["fcd"]) or CLAIM_MARKERS,
        )

    @classmethod
    def load(cls, path: str | Path) -> Lexicon:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> Lexicon:
        return _default_lexicon()


@lru_cache(maxsize=None)
def _default_lexicon() -> Lexicon:
    text = resources.files("halluguard").joinpath("data/lexicon.txt").read_text(encoding="utf-8")
    return Lexicon.from_text(text)


# --- lexicon scorers -------------------------------------------------------


def _per_100(count: int, text: str) -> float:
    n = count_words(text)
    return count * 100.0 / n if n else 0.0


def count_fdf(text: str, lex: Lexicon) -> int:
    return len(lex.fdf_re.findall(text))


def count_ecs(text: str, lex: Lexicon) -> int:
    return len(lex.ecs_re.findall(text))


def count_fgr(text: str, lex: Lexicon) -> int:
    return len(lex.fgr_re.findall(text))


def score_fdf(text: str, lex: Lexicon) -> float:
    return _per_100(count_fdf(text, lex), text)


def score_ecs(text: str, lex: Lexicon) -> float:
    return _per_100(count_ecs(text, lex), text)


def score_fgr(text: str, lex: Lexicon, normalize: bool = True) -> float:
    n = count_fgr(text, lex)
    return _per_100(n, text) if normalize else float(n)


def split_sentences(text: str) -> list[str]:
    text = text.strip()
    return [s for s in _SENTENCE_END.split(text) if s] if text else []


def _is_capitalized(word: str) -> bool:
    return bool(word) and word[0].isupper()


def _has_claim_marker(sentence: str, markers: tuple[str, ...]) -> bool:
    words = [w.strip(_STRIP) for w in sentence.split()]
    if "numeral" in markers and any(ch.isdigit() for ch in sentence):
        return True
    # capitalised month names only, so the modal verb "may" is not a date
    if "date" in markers and any(
        (_is_capitalized(w) and w.lower() in _MONTHS) or w in _ERAS for w in words
    ):
        return True
    if "proper_noun" in markers:
        run = 0
        for w in words[1:]:
            run = run + 1 if _is_capitalized(w) else 0
            if run >= 2:
                return True
    return False


def is_claim_sentence(sentence: str, lex: Lexicon) -> bool:
    """Declarative sentence with a claim marker and no fictional disclaimer."""
    if sentence.rstrip().rstrip("\"')]”’»").endswith("?"):
        return False
    if lex.fdf_re.search(sentence):
        return False
    return _has_claim_marker(sentence, lex.fcd_claim_markers)


def count_fcd(text: str, lex: Lexicon) -> int:
    return sum(1 for s in split_sentences(text) if is_claim_sentence(s, lex))


def score_fcd(text: str, lex: Lexicon) -> float:
    return _per_100(count_fcd(text, lex), text)


def score_all(text: str, lex: Lexicon | None = None, normalize_fgr: bool = True) -> KpiRecord:
    lex = lex or Lexicon.default()
    return KpiRecord(
        fcd=score_fcd(text, lex),
        fgr=score_fgr(text, lex, normalize_fgr),
        fdf=score_fdf(text, lex),
        ecs=score_ecs(text, lex),
    )


# --- judge output ----------------------------------------------------------

_KPI_ALIASES = {
    "fcd": "FCD", "factualclaimdensity": "FCD",
    "fdf": "FDF", "fictionaldisclaimerfrequency": "FDF",
    "fgr": "FGR", "factualgroundingreferences": "FGR",
    "ecs": "ECS", "explicitcontextualizationscore": "ECS",
}

SINGLE_RESPONSE_KEY = "response"


def _kpi_name(key: str) -> str | None:
    m = re.search(r"\(([A-Za-z]{3})\)", key)
    if m and m.group(1).upper() in KPI_NAMES:
        return m.group(1).upper()
    return _KPI_ALIASES.get(re.sub(r"[^a-z]", "", key.lower()))


def _object_spans(text: str) -> Iterator[str]:
    """Balanced ``{...}`` spans in order of their opening brace, honouring quoted strings."""
    start = text.find("{")
    while start != -1:
        depth = 0
        quote = None
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if quote:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == quote:
                    quote = None
            elif ch in "\"'":
                quote = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield text[start : i + 1]
                    break
        start = text.find("{", start + 1)


def _load_object(span: str) -> Any:
    try:
        return json.loads(span)
    except json.JSONDecodeError:
        try:
            return ast.literal_eval(span)
        except (ValueError, SyntaxError, MemoryError, RecursionError):
            return None


def extract_json_object(raw: str) -> dict:
    """First JSON (or Python-literal) object in ``raw``, looking inside code fences first."""
    candidates = [m.group(1) for m in _FENCE.finditer(raw)] + [raw]
    for cand in candidates:
        for span in _object_spans(cand):
            obj = _load_object(span)
            if isinstance(obj, dict):
                return obj
    raise NoJsonFound("no JSON object found in judge output")


def _to_number(value: Any, where: str) -> float:
    if isinstance(value, bool):
        raise NonNumericKpi(f"{where}: boolean is not a KPI value")
    if isinstance(value, (int, float)):
        v = float(value)
    elif isinstance(value, str):
        try:
            v = float(value.strip())
        except ValueError:
            raise NonNumericKpi(f"{where}: {value!r} is not numeric") from None
    else:
        raise NonNumericKpi(f"{where}: {value!r} is not numeric")
    if not math.isfinite(v) or v < 0:
        raise NonNumericKpi(f"{where}: {v!r} is not a finite non-negative number")
    return v


def _record(obj: dict, where: str, notes: list[str] | None) -> KpiRecord:
    values: dict[str, float] = {}
    for key, value in obj.items():
        name = _kpi_name(str(key))
        if name is not None:
            values[name] = _to_number(value, f"{where}.{key}")
    for name in KPI_NAMES:
        if name not in values:
            values[name] = 0.0
            if notes is not None:
                notes.append(f"{where}: missing {name}, defaulted to 0")
    return KpiRecord.from_dict(values)


def parse_judge_output(raw: str, notes: list[str] | None = None) -> dict[str, KpiRecord]:
    """Extract KPI records from a judge reply.

    Accepts code fences and Python-style single-quoted dicts. A flat object
    of KPI values maps to the key ``"response"``; a nested object maps each
    agent key to its record. Missing KPIs default to 0 and are reported in
    ``notes``.
    """
    obj = extract_json_object(raw)
    nested = {k: v for k, v in obj.items() if isinstance(v, dict)}
    if nested and not any(_kpi_name(str(k)) for k in obj):
        return {str(k): _record(v, str(k), notes) for k, v in nested.items()}
    return {SINGLE_RESPONSE_KEY: _record(obj, SINGLE_RESPONSE_KEY, notes)}
