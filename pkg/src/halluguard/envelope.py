"""OVON conversation envelopes: typed model, parser, writer and validator.

Only the subset exchanged between the review agents is modelled
(``invite``, ``utterance`` and ``whisper`` events). Keys the model does not
know about are kept in ``extras`` maps at the level where they appeared, so
``parse_envelope(serialize_envelope(env)) == env`` holds for anything the
parser accepts.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, NamedTuple

DEFAULT_SCHEMA_VERSION = "0.9.3"
DEFAULT_SCHEMA_URL = "https://openvoicenetwork.org/schema/dialog-envelope.json"
DEFAULT_SPEAKER_ID = "humanOrAssistantID"
DEFAULT_INVITE_URL = "https://someurl"
DEFAULT_MIME_TYPE = "text/plain"

WHISPER_CONTEXT_MAX_WORDS = 30
WHISPER_VALUE_MAX_WORDS = 200

INVITE = "invite"
UTTERANCE = "utterance"
WHISPER = "whisper"
KNOWN_EVENT_TYPES = (INVITE, UTTERANCE, WHISPER)

_WORD = re.compile(r"\S+")


class EnvelopeError(ValueError):
    """Base class for envelope failures that carry a JSON path."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class MalformedJson(EnvelopeError):
    pass


class SchemaViolation(EnvelopeError):
    pass


class WordLimitExceeded(EnvelopeError):
    def __init__(self, path: str, words: int, limit: int):
        self.words = words
        self.limit = limit
        super().__init__(path, f"{words} words exceeds limit of {limit}")


class MissingEvent(LookupError):
    pass


# --- model -----------------------------------------------------------------


@dataclass(frozen=True)
class SchemaInfo:
    version: str = DEFAULT_SCHEMA_VERSION
    url: str = DEFAULT_SCHEMA_URL
    extras: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SenderInfo:
    from_: str
    reply_to: str | None = None
    extras: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Token:
    value: str
    extras: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class TextFeature:
    tokens: tuple[Token, ...]
    mime_type: str | None = DEFAULT_MIME_TYPE  # None: key absent on the wire
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @property
    def text(self) -> str:
        return "".join(t.value for t in self.tokens)


@dataclass(frozen=True)
class DialogEventBody:
    speaker_id: str
    span_start: str
    text_feature: TextFeature
    context: str | None = None
    extras: dict[str, Any] = field(default_factory=dict)
    span_extras: dict[str, Any] = field(default_factory=dict)
    features_extras: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class EnvelopeEvent:
    event_type: str
    invite_to_url: str | None = None
    dialog_event: DialogEventBody | None = None
    extras: dict[str, Any] = field(default_factory=dict)
    parameters_extras: dict[str, Any] = field(default_factory=dict)
    to_extras: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ConversationEnvelope:
    schema: SchemaInfo
    conversation_id: str
    sender: SenderInfo
    response_code: int = 200
    events: tuple[EnvelopeEvent, ...] = ()
    # keys inside "ovon", inside "conversation", and beside "ovon"
    extras: dict[str, Any] = field(default_factory=dict)
    conversation_extras: dict[str, Any] = field(default_factory=dict)
    root_extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def find(self, event_type: str) -> EnvelopeEvent | None:
        for ev in self.events:
            if ev.event_type == event_type:
                return ev
        return None


class Whisper(NamedTuple):
    context: str
    value: str


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.severity} {self.path} {self.rule}"


# --- parsing ---------------------------------------------------------------


def _get(obj: dict, key: str, typ: type | tuple[type, ...], path: str, required: bool = True):
    if key not in obj:
        if required:
            raise SchemaViolation(f"{path}.{key}" if path else key, "missing required key")
        return None
    value = obj[key]
    # bool is an int subclass; never accept it where a number is expected
    if not isinstance(value, typ) or (isinstance(value, bool) and typ is int):
        name = typ.__name__ if isinstance(typ, type) else "/".join(t.__name__ for t in typ)
        raise SchemaViolation(f"{path}.{key}" if path else key, f"expected {name}")
    return value


def _rest(obj: dict, known: tuple[str, ...]) -> dict[str, Any]:
    return {k: v for k, v in obj.items() if k not in known}


def _parse_text_feature(obj: dict, path: str) -> TextFeature:
    mime = _get(obj, "mimeType", str, path, required=False)
    raw_tokens = _get(obj, "tokens", list, path)
    tokens = []
    for i, tok in enumerate(raw_tokens):
        tpath = f"{path}.tokens[{i}]"
        if not isinstance(tok, dict):
            raise SchemaViolation(tpath, "expected object")
        tokens.append(Token(_get(tok, "value", str, tpath), _rest(tok, ("value",))))
    return TextFeature(tuple(tokens), mime, _rest(obj, ("mimeType", "tokens")))


def _parse_dialog_event(obj: dict, path: str) -> DialogEventBody:
    speaker = _get(obj, "speakerId", str, path)
    span = _get(obj, "span", dict, path)
    start = _get(span, "startTime", str, f"{path}.span")
    context = _get(obj, "context", str, path, required=False)
    features = _get(obj, "features", dict, path)
    text = _get(features, "text", dict, f"{path}.features")
    return DialogEventBody(
        speaker_id=speaker,
        span_start=start,
        text_feature=_parse_text_feature(text, f"{path}.features.text"),
        context=context,
        extras=_rest(obj, ("speakerId", "span", "context", "features")),
        span_extras=_rest(span, ("startTime",)),
        features_extras=_rest(features, ("text",)),
    )


def _parse_event(obj: Any, path: str) -> EnvelopeEvent:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, "expected object")
    etype = _get(obj, "eventType", str, path)
    if etype not in KNOWN_EVENT_TYPES:
        # carried opaquely
        return EnvelopeEvent(etype, extras=_rest(obj, ("eventType",)))
    params = _get(obj, "parameters", dict, path)
    extras = _rest(obj, ("eventType", "parameters"))
    ppath = f"{path}.parameters"
    if etype == INVITE:
        to = _get(params, "to", dict, ppath, required=False) or {}
        return EnvelopeEvent(
            INVITE,
            invite_to_url=_get(to, "url", str, f"{ppath}.to", required=False),
            extras=extras,
            parameters_extras=_rest(params, ("to",)),
            to_extras=_rest(to, ("url",)),
        )
    de = _get(params, "dialogEvent", dict, ppath)
    return EnvelopeEvent(
        etype,
        dialog_event=_parse_dialog_event(de, f"{ppath}.dialogEvent"),
        extras=extras,
        parameters_extras=_rest(params, ("dialogEvent",)),
    )


def envelope_from_dict(doc: Any) -> ConversationEnvelope:
    if not isinstance(doc, dict):
        raise SchemaViolation("", "top level must be an object")
    ovon = _get(doc, "ovon", dict, "")
    schema = _get(ovon, "schema", dict, "ovon")
    conv = _get(ovon, "conversation", dict, "ovon")
    sender = _get(ovon, "sender", dict, "ovon")
    events = _get(ovon, "events", list, "ovon")
    return ConversationEnvelope(
        schema=SchemaInfo(
            _get(schema, "version", str, "ovon.schema"),
            _get(schema, "url", str, "ovon.schema"),
            _rest(schema, ("version", "url")),
        ),
        conversation_id=_get(conv, "id", str, "ovon.conversation"),
        sender=SenderInfo(
            _get(sender, "from", str, "ovon.sender"),
            _get(sender, "reply-to", str, "ovon.sender", required=False),
            _rest(sender, ("from", "reply-to")),
        ),
        response_code=_get(ovon, "responseCode", int, "ovon"),
        events=tuple(_parse_event(ev, f"ovon.events[{i}]") for i, ev in enumerate(events)),
        extras=_rest(ovon, ("schema", "conversation", "sender", "responseCode", "events")),
        conversation_extras=_rest(conv, ("id",)),
        root_extras=_rest(doc, ("ovon",)),
    )


def parse_envelope(raw: bytes | str) -> ConversationEnvelope:
    """Parse envelope JSON. Raises MalformedJson or SchemaViolation."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson("$", f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedJson("$", f"{exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    return envelope_from_dict(doc)


# --- serialization ---------------------------------------------------------


def _text_feature_dict(tf: TextFeature) -> dict:
    out: dict[str, Any] = {}
    if tf.mime_type is not None:
        out["mimeType"] = tf.mime_type
    out["tokens"] = [{"value": t.value, **t.extras} for t in tf.tokens]
    out.update(tf.extras)
    return out


def _dialog_event_dict(de: DialogEventBody) -> dict:
    out: dict[str, Any] = {
        "speakerId": de.speaker_id,
        "span": {"startTime": de.span_start, **de.span_extras},
    }
    if de.context is not None:
        out["context"] = de.context
    out["features"] = {"text": _text_feature_dict(de.text_feature), **de.features_extras}
    out.update(de.extras)
    return out


def _event_dict(ev: EnvelopeEvent) -> dict:
    out: dict[str, Any] = {"eventType": ev.event_type}
    if ev.event_type not in KNOWN_EVENT_TYPES:
        out.update(ev.extras)
        return out
    params: dict[str, Any] = {}
    if ev.event_type == INVITE:
        if ev.invite_to_url is not None or ev.to_extras:
            to = {} if ev.invite_to_url is None else {"url": ev.invite_to_url}
            params["to"] = {**to, **ev.to_extras}
    elif ev.dialog_event is not None:
        params["dialogEvent"] = _dialog_event_dict(ev.dialog_event)
    params.update(ev.parameters_extras)
    out["parameters"] = params
    out.update(ev.extras)
    return out


def envelope_to_dict(env: ConversationEnvelope) -> dict:
    sender: dict[str, Any] = {"from": env.sender.from_}
    if env.sender.reply_to is not None:
        sender["reply-to"] = env.sender.reply_to
    sender.update(env.sender.extras)
    ovon = {
        "schema": {"version": env.schema.version, "url": env.schema.url, **env.schema.extras},
        "conversation": {"id": env.conversation_id, **env.conversation_extras},
        "sender": sender,
        "responseCode": env.response_code,
        "events": [_event_dict(ev) for ev in env.events],
        **env.extras,
    }
    return {"ovon": ovon, **env.root_extras}


def serialize_envelope(env: ConversationEnvelope, indent: int | None = 2) -> bytes:
    return json.dumps(envelope_to_dict(env), indent=indent, ensure_ascii=False).encode("utf-8")


# --- words and timestamps --------------------------------------------------


def count_words(text: str) -> int:
    """Number of maximal non-whitespace runs in ``text``."""
    return len(text.split())


def truncate_words(text: str, limit: int) -> str:
    """Cut ``text`` right after its ``limit``-th word, keeping inner whitespace."""
    for i, m in enumerate(_WORD.finditer(text), start=1):
        if i == limit:
            return text[: m.end()]
    return text if limit > 0 else ""


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat(sep=" ", timespec="seconds")


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def _parses_as_timestamp(text: str) -> bool:
    try:
        datetime.fromisoformat(text)
    except ValueError:
        return False
    return True


# --- construction ----------------------------------------------------------


def _limited(text: str, limit: int, path: str, strict: bool, notes: list[str] | None) -> str:
    n = count_words(text)
    if n <= limit:
        return text
    if strict:
        raise WordLimitExceeded(path, n, limit)
    if notes is not None:
        notes.append(f"{path}: truncated from {n} to {limit} words")
    return truncate_words(text, limit)


def _dialog_event(text: str, start: str, speaker_id: str, context: str | None = None) -> DialogEventBody:
    return DialogEventBody(
        speaker_id=speaker_id,
        span_start=start,
        text_feature=TextFeature((Token(text),)),
        context=context,
    )


def build_review_envelope(
    utterance_text: str,
    whisper_context: str,
    whisper_value: str,
    conversation_id: str,
    sender: SenderInfo,
    clock: Callable[[], datetime] = utc_now,
    *,
    strict: bool = False,
    notes: list[str] | None = None,
    speaker_id: str = DEFAULT_SPEAKER_ID,
    invite_url: str = DEFAULT_INVITE_URL,
    schema: SchemaInfo | None = None,
) -> ConversationEnvelope:
    """Pack a reviewer's output as invite + utterance + whisper events.

    Word limits apply to the whisper context (30) and value (200). In strict
    mode an overlong field raises :class:`WordLimitExceeded`; otherwise it is
    truncated and a note is appended to ``notes``.
    """
    if not utterance_text.strip():
        raise ValueError("utterance_text must be non-empty")
    whisper_context = _limited(
        whisper_context, WHISPER_CONTEXT_MAX_WORDS, "whisper.context", strict, notes
    )
    whisper_value = _limited(whisper_value, WHISPER_VALUE_MAX_WORDS, "whisper.value", strict, notes)
    start = format_timestamp(clock())
    return ConversationEnvelope(
        schema=schema or SchemaInfo(),
        conversation_id=conversation_id,
        sender=sender,
        response_code=200,
        events=(
            EnvelopeEvent(INVITE, invite_to_url=invite_url),
            EnvelopeEvent(UTTERANCE, dialog_event=_dialog_event(utterance_text, start, speaker_id)),
            EnvelopeEvent(
                WHISPER,
                dialog_event=_dialog_event(whisper_value, start, speaker_id, context=whisper_context),
            ),
        ),
    )


def build_utterance_envelope(
    utterance_text: str,
    conversation_id: str,
    sender: SenderInfo,
    clock: Callable[[], datetime] = utc_now,
    *,
    speaker_id: str = DEFAULT_SPEAKER_ID,
) -> ConversationEnvelope:
    """Single-utterance envelope, used when every hop carries an envelope."""
    start = format_timestamp(clock())
    return ConversationEnvelope(
        schema=SchemaInfo(),
        conversation_id=conversation_id,
        sender=sender,
        events=(EnvelopeEvent(UTTERANCE, dialog_event=_dialog_event(utterance_text, start, speaker_id)),),
    )


# --- access ----------------------------------------------------------------


def extract_utterance(env: ConversationEnvelope) -> str:
    ev = env.find(UTTERANCE)
    if ev is None or ev.dialog_event is None:
        raise MissingEvent(f"envelope {env.conversation_id!r} has no utterance event")
    return ev.dialog_event.text_feature.text


def extract_whisper(env: ConversationEnvelope) -> Whisper:
    ev = env.find(WHISPER)
    if ev is None or ev.dialog_event is None:
        raise MissingEvent(f"envelope {env.conversation_id!r} has no whisper event")
    return Whisper(ev.dialog_event.context or "", ev.dialog_event.text_feature.text)


# --- validation ------------------------------------------------------------


def validate_envelope(env: ConversationEnvelope) -> list[Violation]:
    out: list[Violation] = []
    if not env.schema.version:
        out.append(Violation("schema.version", "non-empty"))
    if not env.conversation_id:
        out.append(Violation("conversation.id", "non-empty"))
    if not env.sender.from_:
        out.append(Violation("sender.from", "non-empty"))
    if not 100 <= env.response_code <= 599:
        out.append(Violation("responseCode", "range-100-599"))

    counts = {t: 0 for t in KNOWN_EVENT_TYPES}
    for i, ev in enumerate(env.events):
        base = f"events[{i}]"
        if ev.event_type not in counts:
            out.append(Violation(f"{base}.eventType", "unknown-event-type", "warning"))
            continue
        counts[ev.event_type] += 1
        if ev.event_type == INVITE:
            if ev.dialog_event is not None:
                out.append(Violation(f"{base}.invite", "unexpected-dialog-event"))
            if not ev.invite_to_url:
                out.append(Violation(f"{base}.invite.to.url", "non-empty"))
            continue
        kind = ev.event_type
        if ev.invite_to_url is not None:
            out.append(Violation(f"{base}.{kind}", "unexpected-invite-url"))
        de = ev.dialog_event
        if de is None:
            out.append(Violation(f"{base}.{kind}", "missing-dialog-event"))
            continue
        if not de.text_feature.tokens:
            out.append(Violation(f"{base}.{kind}.tokens", "non-empty"))
        if not _parses_as_timestamp(de.span_start):
            out.append(Violation(f"{base}.{kind}.span.startTime", "timestamp-format", "warning"))
        if kind == UTTERANCE:
            if de.context is not None:
                out.append(Violation(f"{base}.utterance.context", "whisper-only-field"))
        else:
            if count_words(de.context or "") > WHISPER_CONTEXT_MAX_WORDS:
                out.append(Violation(f"{base}.whisper.context", f"max-{WHISPER_CONTEXT_MAX_WORDS}-words"))
            if count_words(de.text_feature.text) > WHISPER_VALUE_MAX_WORDS:
                out.append(Violation(f"{base}.whisper.value", f"max-{WHISPER_VALUE_MAX_WORDS}-words"))

    if counts[UTTERANCE] == 0:
        out.append(Violation("events", "missing-utterance"))
    if counts[UTTERANCE] > 1:
        out.append(Violation("events", "multiple-utterances"))
    if counts[WHISPER] > 1:
        out.append(Violation("events", "multiple-whispers"))
    return out
