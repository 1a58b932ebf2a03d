"""Chat-completion backends: live HTTP, fixture replay and a pure mock.

Every backend exposes ``complete(request) -> ChatResponse``. Replay fixtures
are keyed by a hash of (role, user content) so they survive corpus
reordering; ``RecordingBackend`` writes them while talking to another
backend.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

log = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class BackendError(RuntimeError):
    pass


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class FixtureMiss(BackendError):
    def __init__(self, key: str, role: str):
        self.key = key
        self.role = role
        super().__init__(f"no replay fixture for role {role!r} (key {key})")


@dataclass(frozen=True)
class ChatRequest:
    system_instruction: str
    user_content: str
    model_id: str = ""
    temperature: float = 1.0
    max_tokens: int = 1024
    role: str = ""

    def __post_init__(self):
        if not self.user_content:
            raise ValueError("user_content must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict[str, int] | None = None
    provider_meta: str = ""


class Backend(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...


# --- mock ------------------------------------------------------------------


class MockBackend:
    """Applies a pure transform to the user content (identity by default)."""

    def __init__(self, transform: Callable[[str], str] | None = None):
        self.transform = transform or (lambda text: text)

    def complete(self, req: ChatRequest) -> ChatResponse:
        return ChatResponse(self.transform(req.user_content), provider_meta="mock")


# --- replay ----------------------------------------------------------------


def fixture_key(role: str, user_content: str) -> str:
    h = hashlib.sha256()
    h.update(role.encode("utf-8"))
    h.update(b"\x00")
    h.update(user_content.encode("utf-8"))
    return h.hexdigest()


def record_fixture(fixture_dir: str | Path, role: str, user_content: str, response_text: str) -> Path:
    """Store a replay entry; rewriting identical content is a no-op."""
    fixture_dir = Path(fixture_dir)
    fixture_dir.mkdir(parents=True, exist_ok=True)
    key = fixture_key(role, user_content)
    body = fixture_dir / f"{key}.txt"
    data = response_text.encode("utf-8")
    if not (body.exists() and body.read_bytes() == data):
        body.write_bytes(data)
    meta = {
        "key": key,
        "role": role,
        "content_sha256": hashlib.sha256(user_content.encode("utf-8")).hexdigest(),
    }
    meta_path = fixture_dir / f"{key}.meta.json"
    meta_bytes = (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode("utf-8")
    if not (meta_path.exists() and meta_path.read_bytes() == meta_bytes):
        meta_path.write_bytes(meta_bytes)
    return body


class ReplayBackend:
    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)
        if not self.fixture_dir.is_dir():
            raise FileNotFoundError(f"replay directory not found: {self.fixture_dir}")

    def complete(self, req: ChatRequest) -> ChatResponse:
        key = fixture_key(req.role, req.user_content)
        path = self.fixture_dir / f"{key}.txt"
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise FixtureMiss(key, req.role) from None
        return ChatResponse(data.decode("utf-8"), provider_meta=f"replay:{key}")


class RecordingBackend:
    """Forwards to ``inner`` and stores every reply as a replay fixture."""

    def __init__(self, inner: Backend, fixture_dir: str | Path):
        self.inner = inner
        self.fixture_dir = Path(fixture_dir)
        self._lock = threading.Lock()

    def complete(self, req: ChatRequest) -> ChatResponse:
        resp = self.inner.complete(req)
        with self._lock:
            record_fixture(self.fixture_dir, req.role, req.user_content, resp.text)
        return resp


# --- live ------------------------------------------------------------------


class TokenBucket:
    """Thread-safe limiter allowing ``per_minute`` acquisitions per minute."""

    def __init__(self, per_minute: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if per_minute <= 0:
            raise ValueError("per_minute must be positive")
        self.rate = per_minute / 60.0
        self.capacity = max(1.0, per_minute / 60.0)
        self.tokens = self.capacity
        self.clock = clock
        self.sleep = sleep
        self.last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.last) * self.rate)
                self.last = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self.sleep(wait)


@dataclass
class EndpointProfile:
    url: str
    api_key: str = ""
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 1.0
    backoff_cap: float = 30.0
    requests_per_minute: float | None = None
    extra_headers: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None, **overrides: Any) -> EndpointProfile:
        env = os.environ if env is None else env
        url = overrides.pop("url", None) or env.get("HG_ENDPOINT_URL", "")
        if not url:
            raise ValueError("live backend needs an endpoint URL (HG_ENDPOINT_URL)")
        key = overrides.pop("api_key", None) or env.get("HG_API_KEY", "")
        return cls(url=url, api_key=key, **overrides)

    def headers(self) -> dict[str, str]:
        h = {"Content-Type": "application/json", **self.extra_headers}
        if self.api_key:
            h[self.auth_header] = f"{self.auth_scheme} {self.api_key}".strip()
        return h


class LiveBackend:
    """Chat-completions POST with bounded exponential-backoff retries.

    Retries on 429, 5xx and timeouts at most ``profile.max_retries`` times;
    401/403 and other 4xx fail after one attempt.
    """

    def __init__(self, profile: EndpointProfile, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 limiter: TokenBucket | None = None):
        self.profile = profile
        self.client = client or httpx.Client(timeout=profile.timeout)
        self.sleep = sleep
        if limiter is None and profile.requests_per_minute:
            limiter = TokenBucket(profile.requests_per_minute)
        self.limiter = limiter

    def _payload(self, req: ChatRequest) -> dict[str, Any]:
        return {
            "model": req.model_id,
            "messages": [
                {"role": "system", "content": req.system_instruction},
                {"role": "user", "content": req.user_content},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }

    def _delay(self, attempt: int, resp: httpx.Response | None) -> float:
        delay = min(self.profile.backoff_base * 2**attempt, self.profile.backoff_cap)
        if resp is not None:
            try:
                delay = max(delay, float(resp.headers.get("Retry-After", "")))
            except ValueError:
                pass
        return delay

    def complete(self, req: ChatRequest) -> ChatResponse:
        payload = self._payload(req)
        headers = self.profile.headers()
        last: Exception | None = None
        for attempt in range(self.profile.max_retries + 1):
            if self.limiter is not None:
                self.limiter.acquire()
            resp = None
            try:
                resp = self.client.post(self.profile.url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"request timed out: {exc}")
            except httpx.HTTPError as exc:
                raise BackendError(f"transport error: {exc}") from exc
            else:
                if resp.status_code == 200:
                    return self._parse(resp)
                if resp.status_code in (401, 403):
                    raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                if resp.status_code not in RETRYABLE_STATUS:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                if resp.status_code == 429:
                    last = RateLimited(f"HTTP 429 after {attempt + 1} attempt(s)")
                else:
                    last = BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if attempt < self.profile.max_retries:
                delay = self._delay(attempt, resp)
                log.info("retrying %s in %.2fs (%s)", req.role or "request", delay, last)
                self.sleep(delay)
        assert last is not None
        raise last

    @staticmethod
    def _parse(resp: httpx.Response) -> ChatResponse:
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response body: {resp.text[:200]}") from exc
        if not isinstance(text, str):
            raise BackendError("response content is not text")
        usage = body.get("usage")
        meta = json.dumps({k: body[k] for k in ("id", "model") if k in body}, sort_keys=True)
        return ChatResponse(text, usage if isinstance(usage, dict) else None, meta)
