"""Four-stage review pipeline.

front_end -> second_reviewer -> third_reviewer -> kpi_evaluator. The second
reviewer's reply is packed into an OVON envelope (utterance + whisper) and
the third reviewer is prompted from that envelope. The evaluator's reply is
parsed into one KpiRecord per level, from which the THS triple is computed.
"""
from __future__ import annotations

import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

from . import kpi as kpi_mod
from .backend import Backend, BackendError, ChatRequest
from .envelope import (
    ConversationEnvelope,
    EnvelopeError,
    MissingEvent,
    SenderInfo,
    build_review_envelope,
    build_utterance_envelope,
    envelope_from_dict,
    envelope_to_dict,
    extract_utterance,
    extract_whisper,
    format_timestamp,
    utc_now,
)
from .kpi import JudgeParseError, KpiRecord, Lexicon
from .scoring import DEFAULT_NA, ThsTriple, WeightVector, ths_weighted

log = logging.getLogger(__name__)

FRONT_END = "front_end"
SECOND_REVIEWER = "second_reviewer"
THIRD_REVIEWER = "third_reviewer"
KPI_EVALUATOR = "kpi_evaluator"
ROLES = (FRONT_END, SECOND_REVIEWER, THIRD_REVIEWER, KPI_EVALUATOR)

INSTRUCTIONS = {
    FRONT_END: (
        "You are a front-end assistant. Respond to the prompt provided, even if it involves "
        "speculation or fiction. Do not ever add any explicit disclaimer wherever content is "
        "speculative or fictional to ensure users are aware of its nature."
    ),
    SECOND_REVIEWER: (
        "Review the front-end agent's response. Rephrase it for clarity, accuracy, and "
        "factualness. Explicit disclaimers wherever content is speculative or fictional to "
        "ensure users are aware of its nature, even if it is a repetition. Include: 'utterance' "
        "(rewritten response), 'whisper context' (summary of hallucination levels, max 30 "
        "words), and 'whisper value' (detailed explanation of hallucination, max 200 words)."
    ),
    THIRD_REVIEWER: (
        "Refine the second-level reviewer's response. Explicit disclaimers wherever content is "
        "speculative or fictional to ensure users are aware of its nature, even if it is a "
        "repetition. Improve clarity, style, and factuality without generating another JSON "
        "response."
    ),
    KPI_EVALUATOR: (
        "Analyze the responses from the FrontEndAgent, Second Level Reviewer, and "
        "ThirdLevelReviewer. Return the following metrics for each: Factual Claim Density "
        "(FCD), Fictional Disclaimer Frequency (FDF), Factual Grounding References (FGR), and "
        "Explicit Contextualization Score (ECS) in JSON format."
    ),
}

DEFAULT_MODELS = {
    FRONT_END: "gpt-3.5-turbo",
    SECOND_REVIEWER: "gpt-4o",
    THIRD_REVIEWER: "gpt-4o",
    KPI_EVALUATOR: "gpt-4o",
}

DEFAULT_TEMPERATURES = {FRONT_END: 1.0, SECOND_REVIEWER: 1.0, THIRD_REVIEWER: 1.0, KPI_EVALUATOR: 0.0}

DEFAULT_SENDER = SenderInfo("https://organization_url_from", "https://organization_url_to")


class EnvelopeConstructionError(ValueError):
    pass


@dataclass(frozen=True)
class AgentRole:
    name: str
    instruction: str
    model_id: str
    temperature: float = 1.0

    @classmethod
    def default(cls, name: str) -> AgentRole:
        return cls(name, INSTRUCTIONS[name], DEFAULT_MODELS[name], DEFAULT_TEMPERATURES[name])


def default_roles() -> dict[str, AgentRole]:
    return {name: AgentRole.default(name) for name in ROLES}


@dataclass
class PipelineConfig:
    roles: dict[str, AgentRole] = field(default_factory=default_roles)
    weights: WeightVector = field(default_factory=WeightVector)
    na: int = DEFAULT_NA
    strict_envelope: bool = False
    judge_fallback: bool = True
    lexicon: Lexicon | None = None
    normalize_fgr: bool = True
    sender: SenderInfo = DEFAULT_SENDER
    clock: Callable[[], datetime] = utc_now
    envelope_every_hop: bool = False
    max_tokens: int = 1024

    def __post_init__(self):
        if self.na < 1:
            raise ValueError("na must be >= 1")
        missing = set(ROLES) - set(self.roles)
        if missing:
            raise ValueError(f"missing agent roles: {sorted(missing)}")

    def request(self, role: str, user_content: str) -> ChatRequest:
        r = self.roles[role]
        return ChatRequest(
            system_instruction=r.instruction,
            user_content=user_content,
            model_id=r.model_id,
            temperature=r.temperature,
            max_tokens=self.max_tokens,
            role=role,
        )

    def conversation_id(self) -> str:
        return f"conv_{int(self.clock().timestamp() * 1000)}"


@dataclass(frozen=True)
class StageResult:
    role: str
    response_text: str
    envelope: ConversationEnvelope | None = None
    latency: float = 0.0
    raw_backend_payload: str = ""
    request_content: str = ""
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "response_text": self.response_text,
            "envelope": None if self.envelope is None else envelope_to_dict(self.envelope),
            "latency": self.latency,
            "raw_backend_payload": self.raw_backend_payload,
            "request_content": self.request_content,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StageResult:
        env = d.get("envelope")
        return cls(
            role=d["role"],
            response_text=d["response_text"],
            envelope=None if env is None else envelope_from_dict(env),
            latency=float(d.get("latency", 0.0)),
            raw_backend_payload=d.get("raw_backend_payload", ""),
            request_content=d.get("request_content", ""),
            notes=tuple(d.get("notes", ())),
        )


@dataclass(frozen=True)
class PipelineRunRecord:
    prompt_id: int
    prompt: str
    stages: tuple[StageResult, ...] = ()
    kpis: dict[int, KpiRecord] = field(default_factory=dict)
    ths: ThsTriple | None = None
    started_at: str = ""
    finished_at: str = ""
    failed_stage: str | None = None
    error: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def ok(self) -> bool:
        return self.failed_stage is None

    def stage(self, role: str) -> StageResult | None:
        for s in self.stages:
            if s.role == role:
                return s
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt_id": self.prompt_id,
            "prompt": self.prompt,
            "stages": [s.to_dict() for s in self.stages],
            "kpis": {str(level): k.to_dict() for level, k in sorted(self.kpis.items())},
            "ths": None if self.ths is None else list(self.ths.as_tuple()),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "failed_stage": self.failed_stage,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PipelineRunRecord:
        ths = d.get("ths")
        return cls(
            prompt_id=int(d["prompt_id"]),
            prompt=d["prompt"],
            stages=tuple(StageResult.from_dict(s) for s in d.get("stages", ())),
            kpis={int(level): KpiRecord.from_dict(k) for level, k in d.get("kpis", {}).items()},
            ths=None if ths is None else ThsTriple(*ths),
            started_at=d.get("started_at", ""),
            finished_at=d.get("finished_at", ""),
            failed_stage=d.get("failed_stage"),
            error=d.get("error"),
        )


# --- request content -------------------------------------------------------


def second_review_content(prompt: str, front_text: str) -> str:
    return f"User prompt:\n{prompt}\n\nFront-end agent response:\n{front_text}"


def third_review_content(utterance: str, whisper_context: str, whisper_value: str) -> str:
    return (
        f"Second-level reviewer utterance:\n{utterance}\n\n"
        f"Whisper context:\n{whisper_context}\n\n"
        f"Whisper value:\n{whisper_value}"
    )


def kpi_eval_content(texts: Sequence[str]) -> str:
    t1, t2, t3 = texts
    return (
        f"FrontEndAgent response:\n{t1}\n\n"
        f"SecondLevelReviewer response:\n{t2}\n\n"
        f"ThirdLevelReviewer response:\n{t3}"
    )


# --- reply parsing ---------------------------------------------------------

_LABEL = re.compile(
    r"^[\s*#>'\"-]*(utterance|whisper[ _-]?context|whisper[ _-]?value)[\s*'\"]*[:=][ \t*]*",
    re.IGNORECASE | re.MULTILINE,
)


def _from_json(reply: str) -> dict[str, str] | None:
    try:
        obj = kpi_mod.extract_json_object(reply)
    except JudgeParseError:
        return None
    flat: dict[str, Any] = {}
    for key, value in obj.items():
        k = re.sub(r"[^a-z]+", "_", str(key).lower()).strip("_")
        if k == "whisper" and isinstance(value, dict):
            for sub, v in value.items():
                flat["whisper_" + re.sub(r"[^a-z]+", "_", str(sub).lower()).strip("_")] = v
        else:
            flat[k] = value
    out = {k: flat[k] for k in ("utterance", "whisper_context", "whisper_value") if isinstance(flat.get(k), str)}
    return out or None


def _from_labels(reply: str) -> dict[str, str] | None:
    matches = list(_LABEL.finditer(reply))
    if not matches:
        return None
    out: dict[str, str] = {}
    for m, nxt in zip(matches, matches[1:] + [None]):
        name = "utterance" if m.group(1).lower() == "utterance" else (
            "whisper_context" if "context" in m.group(1).lower() else "whisper_value"
        )
        end = nxt.start() if nxt is not None else len(reply)
        out.setdefault(name, reply[m.end():end].strip())
    return out


def parse_review_reply(reply: str, notes: list[str] | None = None) -> tuple[str, str, str]:
    """Split a second-reviewer reply into (utterance, whisper context, whisper value).

    Accepts a JSON object with ``utterance`` / ``whisper_context`` /
    ``whisper_value`` keys or labelled plain text. Missing parts become empty
    strings; with no recognisable structure the whole reply is the utterance.
    Both cases are reported in ``notes``.
    """
    parts = _from_json(reply) or _from_labels(reply)
    if not parts or not parts.get("utterance", "").strip():
        if notes is not None:
            notes.append("second reviewer reply has no utterance/whisper structure; using whole reply as utterance")
        return reply, "", ""
    for name in ("whisper_context", "whisper_value"):
        if name not in parts and notes is not None:
            notes.append(f"second reviewer reply lacks {name.replace('_', ' ')}")
    return parts["utterance"], parts.get("whisper_context", ""), parts.get("whisper_value", "")


def _level_for(key: str) -> int | None:
    k = re.sub(r"[^a-z0-9]", "", key.lower())
    if "front" in k or k in ("1", "level1", "agent1", "ths1"):
        return 1
    if "second" in k or k in ("2", "level2", "agent2", "ths2"):
        return 2
    if "third" in k or k in ("3", "level3", "agent3", "ths3"):
        return 3
    return None


def kpis_from_judge(raw: str, notes: list[str] | None = None) -> dict[int, KpiRecord]:
    """Map a judge reply to levels 1-3; raises JudgeParseError if any level is missing."""
    parsed = kpi_mod.parse_judge_output(raw, notes)
    out: dict[int, KpiRecord] = {}
    for key, rec in parsed.items():
        level = _level_for(key)
        if level is not None:
            out.setdefault(level, rec)
    missing = {1, 2, 3} - set(out)
    if missing:
        raise JudgeParseError(f"judge reply has no KPIs for level(s) {sorted(missing)}")
    return out


def lexicon_kpis(texts: Sequence[str], cfg: PipelineConfig) -> dict[int, KpiRecord]:
    lex = cfg.lexicon or Lexicon.default()
    return {i: kpi_mod.score_all(t, lex, cfg.normalize_fgr) for i, t in enumerate(texts, start=1)}


# --- stages ----------------------------------------------------------------


def _call(backend: Backend, req: ChatRequest) -> tuple[str, float]:
    t0 = time.perf_counter()
    resp = backend.complete(req)
    return resp.text, time.perf_counter() - t0


def run_front_end(prompt: str, backend: Backend, cfg: PipelineConfig | None = None,
                  conversation_id: str | None = None) -> StageResult:
    cfg = cfg or PipelineConfig()
    if not prompt.strip():
        raise ValueError("prompt must be non-empty")
    text, latency = _call(backend, cfg.request(FRONT_END, prompt))
    env = None
    if cfg.envelope_every_hop and text.strip():
        env = build_utterance_envelope(text, conversation_id or cfg.conversation_id(), cfg.sender, cfg.clock)
    return StageResult(FRONT_END, text, env, latency, text, prompt)


def run_second_review(prompt: str, front_text: str, backend: Backend, conversation_id: str,
                      cfg: PipelineConfig | None = None) -> StageResult:
    cfg = cfg or PipelineConfig()
    if not front_text.strip():
        raise ValueError("front-end response is empty")
    content = second_review_content(prompt, front_text)
    reply, latency = _call(backend, cfg.request(SECOND_REVIEWER, content))
    notes: list[str] = []
    utterance, context, value = parse_review_reply(reply, notes)
    if not utterance.strip():
        raise EnvelopeConstructionError("second reviewer returned an empty reply")
    env = build_review_envelope(
        utterance, context, value, conversation_id, cfg.sender, cfg.clock,
        strict=cfg.strict_envelope, notes=notes,
    )
    for n in notes:
        log.warning("second review: %s", n)
    return StageResult(SECOND_REVIEWER, utterance, env, latency, reply, content, tuple(notes))


def run_third_review(envelope: ConversationEnvelope, backend: Backend,
                     cfg: PipelineConfig | None = None) -> StageResult:
    cfg = cfg or PipelineConfig()
    utterance = extract_utterance(envelope)
    whisper = extract_whisper(envelope)
    content = third_review_content(utterance, whisper.context, whisper.value)
    text, latency = _call(backend, cfg.request(THIRD_REVIEWER, content))
    env = None
    if cfg.envelope_every_hop and text.strip():
        env = build_utterance_envelope(text, envelope.conversation_id, cfg.sender, cfg.clock)
    return StageResult(THIRD_REVIEWER, text, env, latency, text, content)


def _kpi_stage(texts: Sequence[str], backend: Backend, cfg: PipelineConfig) -> tuple[StageResult, dict[int, KpiRecord]]:
    if len(texts) != 3:
        raise ValueError("KPI evaluation needs exactly three responses")
    content = kpi_eval_content(texts)
    notes: list[str] = []
    reply, latency = _call(backend, cfg.request(KPI_EVALUATOR, content))
    try:
        kpis = kpis_from_judge(reply, notes)
    except JudgeParseError as exc:
        if not cfg.judge_fallback:
            raise
        notes.append(f"judge reply unusable ({exc}); scored with the lexicon instead")
        log.warning("kpi evaluation: %s", notes[-1])
        kpis = lexicon_kpis(texts, cfg)
    stage = StageResult(KPI_EVALUATOR, reply, None, latency, reply, content, tuple(notes))
    return stage, kpis


def run_kpi_eval(texts: Sequence[str], backend: Backend, cfg: PipelineConfig | None = None) -> dict[int, KpiRecord]:
    return _kpi_stage(texts, backend, cfg or PipelineConfig())[1]


STAGE_ERRORS = (BackendError, EnvelopeError, MissingEvent, JudgeParseError, ValueError)


def _backend_for(backends: Backend | Mapping[str, Backend], role: str) -> Backend:
    if isinstance(backends, Mapping):
        return backends[role]
    return backends


def run_pipeline(prompt_id: int, prompt: str, backends: Backend | Mapping[str, Backend],
                 cfg: PipelineConfig | None = None) -> PipelineRunRecord:
    """Run all four stages for one prompt. Stage errors produce a failure-marked record."""
    cfg = cfg or PipelineConfig()
    started = format_timestamp(cfg.clock())
    stages: list[StageResult] = []
    role = FRONT_END
    try:
        conv_id = cfg.conversation_id()
        front = run_front_end(prompt, _backend_for(backends, FRONT_END), cfg, conv_id)
        stages.append(front)
        role = SECOND_REVIEWER
        second = run_second_review(prompt, front.response_text, _backend_for(backends, SECOND_REVIEWER), conv_id, cfg)
        stages.append(second)
        role = THIRD_REVIEWER
        assert second.envelope is not None
        third = run_third_review(second.envelope, _backend_for(backends, THIRD_REVIEWER), cfg)
        stages.append(third)
        role = KPI_EVALUATOR
        texts = [front.response_text, second.response_text, third.response_text]
        judge, kpis = _kpi_stage(texts, _backend_for(backends, KPI_EVALUATOR), cfg)
        stages.append(judge)
    except STAGE_ERRORS as exc:
        log.error("prompt %s failed at %s: %s", prompt_id, role, exc)
        return PipelineRunRecord(
            prompt_id, prompt, tuple(stages), started_at=started,
            finished_at=format_timestamp(cfg.clock()), failed_stage=role,
            error=f"{type(exc).__name__}: {exc}",
        )
    ths = ThsTriple(*(ths_weighted(kpis[level], cfg.weights, cfg.na) for level in (1, 2, 3)))
    return PipelineRunRecord(
        prompt_id, prompt, tuple(stages), kpis, ths, started, format_timestamp(cfg.clock())
    )


def run_batch(prompts: Iterable[tuple[int, str]], backends: Backend | Mapping[str, Backend],
              cfg: PipelineConfig | None = None, workers: int = 4) -> Iterator[PipelineRunRecord]:
    """Run prompts on a bounded worker pool, yielding records in prompt-id order."""
    cfg = cfg or PipelineConfig()
    if workers < 1:
        raise ValueError("workers must be >= 1")
    items = sorted(prompts, key=lambda p: p[0])
    if workers == 1:
        for pid, text in items:
            yield run_pipeline(pid, text, backends, cfg)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(lambda p: run_pipeline(p[0], p[1], backends, cfg), items)

