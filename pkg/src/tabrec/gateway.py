"""Chat-completion backends and structured-output extraction.

Two backends share one duck-typed surface (``complete(req) -> ChatResponse``
plus ``backend_id`` / ``supports_vision``): a deterministic mock driven by
registered fixtures, and a remote HTTP backend speaking the common
chat-completions wire format. Every stage consumes completions through
``extract_json``; raw completion text never reaches pipeline logic.
"""

from __future__ import annotations

import base64
import json
import os
import random
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    AuthError,
    DuplicateFixture,
    MockFixtureMissing,
    NoJsonFound,
    RateLimited,
    TransportError,
)

STAGE_TAGS = ("explain", "gen_ba", "gen_dv", "gen_sm", "optimize_ok", "optimize_err", "rank")

# Stages allowed to carry image payloads. Chart images inform ranking only;
# generation stages are text-only.
VISION_STAGES = frozenset({"rank"})

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 6000
DEFAULT_TOP_P = 0.95

BACKOFF_BASE_S = 1.0
BACKOFF_CAP_S = 30.0
BACKOFF_JITTER = 0.2

API_KEY_ENV = "TABREC_API_KEY"
API_BASE_ENV = "TABREC_API_BASE"


@dataclass(frozen=True)
class ChatParams:
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    top_p: float = DEFAULT_TOP_P


@dataclass(frozen=True)
class ChatRequest:
    stage_tag: str
    system_prompt: str
    user_prompt: str
    images: tuple[str, ...] = ()
    params: ChatParams = field(default_factory=ChatParams)
    # Routing key for the mock backend; ignored by remote backends.
    mock_key: str = ""

    def __post_init__(self):
        if self.stage_tag not in STAGE_TAGS:
            raise ValueError(f"unknown stage_tag {self.stage_tag!r}")
        if self.images and self.stage_tag not in VISION_STAGES:
            raise ValueError(f"stage {self.stage_tag!r} does not accept images")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency_ms: int
    backend_id: str


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    endpoint: str = ""
    model_name: str = "gpt-4o"
    api_key_env: str = API_KEY_ENV
    max_retries: int = 2
    timeout_s: float = 60.0
    max_parallel: int = 4
    supports_vision: bool = False
    fixtures_path: str = ""

    def __post_init__(self):
        if self.kind not in ("remote", "mock"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


_FENCE_JSON_RE = re.compile(r"```[ \t]*json[ \t]*\r?\n(.*?)```", re.DOTALL | re.IGNORECASE)
_FENCE_ANY_RE = re.compile(r"```[^\n`]*\r?\n(.*?)```", re.DOTALL)


def _balanced_spans(text: str) -> list[str]:
    """All {...} / [...] spans balanced outside string literals, longest first."""
    spans = []
    for start, opener in enumerate(text):
        if opener not in "{[":
            continue
        depth = 0
        in_string = False
        escaped = False
        for end in range(start, len(text)):
            ch = text[end]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch in "{[":
                depth += 1
            elif ch in "}]":
                depth -= 1
                if depth == 0:
                    spans.append(text[start : end + 1])
                    break
                if depth < 0:
                    break
    spans.sort(key=len, reverse=True)
    return spans


def extract_json(text: str):
    """Extract the first syntactically valid JSON value from completion text.

    Scan order: fenced blocks labeled json, then any fenced block, then the
    longest brace-balanced span. Raises NoJsonFound when nothing parses.
    """
    for match in _FENCE_JSON_RE.finditer(text):
        try:
            return json.loads(match.group(1).strip())
        except json.JSONDecodeError:
            continue
    for match in _FENCE_ANY_RE.finditer(text):
        try:
            return json.loads(match.group(1).strip())
        except json.JSONDecodeError:
            continue
    for span in _balanced_spans(text):
        try:
            return json.loads(span)
        except json.JSONDecodeError:
            continue
    raise NoJsonFound(text)


def wrap_json(value) -> str:
    """Serialize a value into a labeled fence, the inverse of extract_json."""
    return "```json\n" + json.dumps(value, indent=2) + "\n```"


class MockBackend:
    """Fixture-driven backend: a pure function of (stage_tag, mock_key).

    The registry is write-once: fixtures are registered (or loaded from a
    file) before the run and only read afterwards.
    """

    backend_id = "mock"
    supports_vision = False

    def __init__(self):
        self._fixtures: dict[tuple[str, str], str] = {}

    def register(self, stage_tag: str, key: str, response: str) -> None:
        if stage_tag not in STAGE_TAGS:
            raise ValueError(f"unknown stage_tag {stage_tag!r}")
        if (stage_tag, key) in self._fixtures:
            raise DuplicateFixture(stage_tag, key)
        self._fixtures[(stage_tag, key)] = response

    def load_fixtures(self, path: str | Path) -> int:
        """Load fixtures from a JSON file.

        Each entry carries "stage", "key", and either "response" (verbatim
        completion text) or "response_json" (a value wrapped in a labeled
        fence on load). Returns the number of fixtures registered.
        """
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
        for entry in entries:
            if "response_json" in entry:
                text = wrap_json(entry["response_json"])
            else:
                text = entry["response"]
            self.register(entry["stage"], entry["key"], text)
        return len(entries)

    def complete(self, req: ChatRequest) -> ChatResponse:
        try:
            text = self._fixtures[(req.stage_tag, req.mock_key)]
        except KeyError:
            raise MockFixtureMissing(req.stage_tag, req.mock_key) from None
        return ChatResponse(text=text, latency_ms=0, backend_id=self.backend_id)


def _default_transport(url: str, headers: dict, body: dict, timeout_s: float) -> str:
    """POST a JSON body and return the completion text from the response."""
    data = json.dumps(body).encode("utf-8")
    request = urllib.request.Request(url, data=data, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=timeout_s) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        if exc.code in (401, 403):
            raise AuthError(f"backend rejected credentials (HTTP {exc.code})") from exc
        if exc.code == 429:
            retry_after = exc.headers.get("Retry-After")
            raise RateLimited(float(retry_after) if retry_after else None) from exc
        raise TransportError(f"HTTP {exc.code}: {exc.reason}") from exc
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, TimeoutError):
            raise TimeoutError(str(exc.reason)) from exc
        raise TransportError(str(exc.reason)) from exc
    try:
        return payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion response: {exc}") from exc


def _encode_image(path: str) -> dict:
    encoded = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    return {
        "type": "image_url",
        "image_url": {"url": f"data:image/png;base64,{encoded}"},
    }


class RemoteBackend:
    """HTTP chat-completions backend with bounded parallelism and backoff."""

    def __init__(self, cfg: BackendConfig, transport=None, sleep=time.sleep, rng=None):
        self.cfg = cfg
        self.backend_id = cfg.model_name
        self.supports_vision = cfg.supports_vision
        self._transport = transport or _default_transport
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._slots = threading.Semaphore(cfg.max_parallel)

    def _endpoint(self) -> str:
        base = self.cfg.endpoint or os.environ.get(API_BASE_ENV, "")
        if not base:
            raise TransportError("no endpoint configured (set endpoint or TABREC_API_BASE)")
        return base.rstrip("/") + "/chat/completions"

    def _build_body(self, req: ChatRequest) -> dict:
        if req.images:
            content = [{"type": "text", "text": req.user_prompt}]
            content.extend(_encode_image(p) for p in req.images)
        else:
            content = req.user_prompt
        return {
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": content},
            ],
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_tokens,
            "top_p": req.params.top_p,
        }

    def _backoff(self, attempt: int, retry_after: float | None) -> float:
        if retry_after is not None:
            return max(retry_after, 0.0)
        delay = min(BACKOFF_CAP_S, BACKOFF_BASE_S * (2**attempt))
        jitter = self._rng.uniform(1 - BACKOFF_JITTER, 1 + BACKOFF_JITTER)
        return delay * jitter

    def complete(self, req: ChatRequest) -> ChatResponse:
        api_key = os.environ.get(self.cfg.api_key_env, "")
        if not api_key:
            raise AuthError(f"environment variable {self.cfg.api_key_env} is not set")
        url = self._endpoint()
        headers = {
            "Content-Type": "application/json",
            "Authorization": f"Bearer {api_key}",
        }
        body = self._build_body(req)

        last_error: Exception | None = None
        with self._slots:
            for attempt in range(self.cfg.max_retries + 1):
                try:
                    started = time.monotonic()
                    text = self._transport(url, headers, body, self.cfg.timeout_s)
                    latency_ms = int((time.monotonic() - started) * 1000)
                    return ChatResponse(text=text, latency_ms=latency_ms, backend_id=self.backend_id)
                except AuthError:
                    raise
                except (RateLimited, TransportError, TimeoutError) as exc:
                    last_error = exc
                    if attempt < self.cfg.max_retries:
                        retry_after = exc.retry_after if isinstance(exc, RateLimited) else None
                        self._sleep(self._backoff(attempt, retry_after))
        assert last_error is not None
        raise last_error


def backend_from_config(cfg: BackendConfig):
    """Instantiate the backend a config describes; loads mock fixtures if set."""
    if cfg.kind == "mock":
        backend = MockBackend()
        if cfg.fixtures_path:
            backend.load_fixtures(cfg.fixtures_path)
        return backend
    return RemoteBackend(cfg)
