"""Chat and embedding backends behind one retrying, metering client.

Backends are addressed by URL. ``http(s)://`` URLs speak the OpenAI-compatible
chat/embeddings JSON protocol; ``mock://`` URLs run deterministic in-process
stand-ins that are scriptable (ordered reply queue, failure injection) so every
pipeline above this module can be exercised offline.

Secrets are handled by name only: configuration carries the environment
variable that holds an API key, never the key itself, and key lookup happens
lazily at call time.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence
from urllib.parse import parse_qsl, urlparse

import numpy as np

from .core import Money, PricingSchedule, UsageRecord, count_tokens, usage_cost
from .errors import BackendError, ConfigurationError, InvalidInputError, TransientBackendError

__all__ = [
    "RetryPolicy",
    "BackendConfig",
    "ChatExchange",
    "LedgerEntry",
    "UsageLedger",
    "LlmClient",
    "MockTransport",
    "HttpTransport",
    "mock_embedding",
]

logger = logging.getLogger(__name__)

ChatMessage = dict  # {"role": ..., "content": ...}

_REASONING_EFFORTS = ("low", "medium", "high")
_TRANSIENT_STATUSES = (429, 500, 502, 503)


@dataclass(frozen=True)
class RetryPolicy:
    """Retry budget for transient failures; backoff doubles per attempt with jitter."""

    max_attempts: int = 4
    backoff_base: float = 1.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise InvalidInputError("max_attempts must be at least 1")
        if self.backoff_base < 0:
            raise InvalidInputError("backoff_base must be non-negative")

    def to_dict(self) -> dict:
        return {"max_attempts": self.max_attempts, "backoff_base": self.backoff_base}

    @classmethod
    def from_dict(cls, data: dict) -> "RetryPolicy":
        unknown = set(data) - {"max_attempts", "backoff_base"}
        if unknown:
            raise ConfigurationError(f"unknown retry field(s): {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class BackendConfig:
    """How to reach one model role.

    Sampling parameters come in exactly one of two shapes: ``reasoning_effort``
    for models that take it, or ``temperature`` + ``max_tokens`` for the rest.
    Embedding backends carry neither; chat completion rejects a config that
    has neither shape at call time.
    """

    model_name: str
    base_url: str
    api_key_env: str | None = None
    reasoning_effort: str | None = None
    temperature: float | None = None
    max_tokens: int | None = None
    timeout: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        if not self.model_name:
            raise InvalidInputError("model_name must be non-empty")
        if not self.base_url:
            raise InvalidInputError("base_url must be non-empty")
        if self.reasoning_effort is not None:
            if self.reasoning_effort not in _REASONING_EFFORTS:
                raise InvalidInputError(f"reasoning_effort must be one of {_REASONING_EFFORTS}")
            if self.temperature is not None or self.max_tokens is not None:
                raise InvalidInputError("reasoning_effort excludes temperature/max_tokens")
        if (self.temperature is None) != (self.max_tokens is None):
            raise InvalidInputError("temperature and max_tokens must be set together")
        if self.timeout <= 0:
            raise InvalidInputError("timeout must be positive")

    @property
    def is_mock(self) -> bool:
        return self.base_url.startswith("mock:")

    def api_key(self) -> str:
        """Resolve the API key from the environment; mocks never need one."""
        if self.api_key_env is None:
            raise ConfigurationError(f"backend {self.model_name!r} has no api_key_env configured")
        value = os.environ.get(self.api_key_env)
        if not value:
            raise ConfigurationError(f"environment variable {self.api_key_env} is not set")
        return value

    def to_dict(self) -> dict:
        data: dict = {"model_name": self.model_name, "base_url": self.base_url, "timeout": self.timeout, "retry": self.retry.to_dict()}
        if self.api_key_env is not None:
            data["api_key_env"] = self.api_key_env
        if self.reasoning_effort is not None:
            data["reasoning_effort"] = self.reasoning_effort
        if self.temperature is not None:
            data["temperature"] = self.temperature
            data["max_tokens"] = self.max_tokens
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "BackendConfig":
        known = {"model_name", "base_url", "api_key_env", "reasoning_effort", "temperature", "max_tokens", "timeout", "retry"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown backend field(s): {sorted(unknown)}")
        kwargs = dict(data)
        if "retry" in kwargs:
            kwargs["retry"] = RetryPolicy.from_dict(kwargs["retry"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(f"malformed backend config: {exc}") from exc


@dataclass(frozen=True)
class ChatExchange:
    """One completed chat call: what was sent, what came back, what it used."""

    request_messages: tuple[ChatMessage, ...]
    response_text: str
    usage: UsageRecord
    attempts: int = 1

    def __post_init__(self) -> None:
        if self.attempts < 1:
            raise InvalidInputError("attempts must be at least 1")


@dataclass(frozen=True)
class RawReply:
    """What a transport returns for a single successful attempt."""

    text: str
    usage: UsageRecord


@dataclass(frozen=True)
class LedgerEntry:
    role: str
    model_name: str
    usage: UsageRecord
    ok: bool


class UsageLedger:
    """Thread-safe append-only record of every attempt, success or failure."""

    def __init__(self) -> None:
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def record(self, entry: LedgerEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def entries(self, role: str | None = None) -> tuple[LedgerEntry, ...]:
        with self._lock:
            snapshot = tuple(self._entries)
        if role is None:
            return snapshot
        return tuple(e for e in snapshot if e.role == role)

    def exchange_count(self, role: str | None = None) -> int:
        return len(self.entries(role))

    def total_usage(self, role: str | None = None) -> UsageRecord:
        total = UsageRecord()
        for entry in self.entries(role):
            total = total + entry.usage
        return total

    def total_cost(self, pricing: PricingSchedule) -> Money:
        total = Money(0)
        for entry in self.entries():
            total = total + usage_cost(entry.usage, pricing.for_role(entry.role))
        return total

    def summary_line(self, pricing: PricingSchedule | None = None) -> str:
        usage = self.total_usage()
        line = (
            f"ledger: {self.exchange_count()} exchanges | prompt {usage.prompt_tokens}"
            f" (cached {usage.cached_prompt_tokens}) | completion {usage.completion_tokens}"
        )
        if pricing is not None:
            line += f" | total {self.total_cost(pricing)}"
        return line


# ---------------------------------------------------------------------------
# Mock transport
# ---------------------------------------------------------------------------


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    v = gen.standard_normal(dim)
    return v / np.linalg.norm(v)


def mock_embedding(text: str, dim: int = 1536, seed: int = 0) -> np.ndarray:
    """Deterministic unit-norm embedding from seeded per-token hash vectors.

    Shared vocabulary raises cosine similarity; texts with no words in common
    land nearly orthogonal. Purely a test double, but a retrieval-faithful one.
    """
    tokens = re.findall(r"[a-z0-9']+", text.lower())
    if not tokens:
        tokens = ["\x00" + text]
    acc = np.zeros(dim)
    for token, count in Counter(tokens).items():
        acc += count * _token_vector(token, dim, seed)
    norm = np.linalg.norm(acc)
    if norm < 1e-12:
        acc = _token_vector("\x00" + text, dim, seed)
        norm = np.linalg.norm(acc)
    return acc / norm


def _last_user_content(messages: Sequence[ChatMessage]) -> str:
    for message in reversed(messages):
        if message.get("role") == "user":
            return str(message.get("content", ""))
    return ""


_SEGMENT_LINE = re.compile(r"^\[[^\]]*\]\s+(?P<name>.+?)\s+\(user\):\s*(?P<content>.*)$")
_GOLD_LINE = re.compile(r"Gold answer:\s*(?P<gold>.*)")
_GENERATED_BLOCK = re.compile(r"Generated answer:\s*(?P<generated>.*?)(?:\n\s*\nFirst, provide|\Z)", re.DOTALL)


class MockTransport:
    """Deterministic in-process backend.

    ``behavior`` picks the default reply:
      - "echo": a fixed string;
      - "extract": one fact line per user-authored line in the prompt;
      - "answer": echoes retrieved fact bullets (or user lines of a history);
      - "judge": labels CORRECT when the gold answer is a substring of the
        generated answer, in the JSON shape the judge parser expects.

    ``script`` overrides the behavior with an ordered queue: a str is a reply,
    ``{"fail": status}`` injects one transient failure, None falls through to
    the behavior. With ``repeat_script`` the queue cycles forever. Billed
    token counters accumulate across attempts, including failed ones.
    """

    def __init__(
        self,
        behavior: str = "echo",
        *,
        script: Sequence[object] | None = None,
        repeat_script: bool = False,
        echo_text: str = "ok",
        dim: int = 1536,
        seed: int = 0,
    ):
        if behavior not in ("echo", "extract", "answer", "judge"):
            raise ConfigurationError(f"unknown mock behavior {behavior!r}")
        self.behavior = behavior
        self._script = list(script or [])
        self._repeat = repeat_script
        self._cursor = 0
        self._echo_text = echo_text
        self.dim = dim
        self.seed = seed
        self.billed_prompt_tokens = 0
        self.billed_completion_tokens = 0
        self._lock = threading.Lock()

    @classmethod
    def from_url(cls, url: str, *, script: Sequence[object] | None = None) -> "MockTransport":
        parsed = urlparse(url)
        options = dict(parse_qsl(parsed.query))
        behavior = parsed.netloc or parsed.path.lstrip("/") or "echo"
        if behavior == "embed":
            behavior = "echo"  # embeddings ignore the chat behavior
        return cls(
            behavior,
            script=script,
            echo_text=options.get("echo_text", "ok"),
            dim=int(options.get("dim", 1536)),
            seed=int(options.get("seed", 0)),
        )

    def _next_script_entry(self) -> object | None:
        with self._lock:
            if self._cursor >= len(self._script):
                if not self._repeat or not self._script:
                    return None
                self._cursor = 0
            entry = self._script[self._cursor]
            self._cursor += 1
            return entry

    def _behavior_reply(self, messages: Sequence[ChatMessage]) -> str:
        if self.behavior == "extract":
            facts = []
            for line in _last_user_content(messages).splitlines():
                match = _SEGMENT_LINE.match(line.strip())
                if match and match.group("content"):
                    facts.append(f"{match.group('name')}: {match.group('content')}")
            return "\n".join(facts)
        if self.behavior == "answer":
            content = _last_user_content(messages)
            bullets = [line[2:].strip() for line in content.splitlines() if line.startswith("- ")]
            if not bullets:
                for line in content.splitlines():
                    match = _SEGMENT_LINE.match(line.strip())
                    if match and match.group("content"):
                        bullets.append(match.group("content"))
            return "; ".join(bullets) if bullets else "I do not know."
        if self.behavior == "judge":
            content = _last_user_content(messages)
            gold_match = _GOLD_LINE.search(content)
            gen_match = _GENERATED_BLOCK.search(content)
            gold = gold_match.group("gold").strip() if gold_match else ""
            generated = gen_match.group("generated").strip() if gen_match else ""
            if gold and gold.lower() in generated.lower():
                return json.dumps({"label": "CORRECT", "explanation": "the generated answer mentions the gold answer"})
            return json.dumps({"label": "WRONG", "explanation": "the generated answer does not mention the gold answer"})
        return self._echo_text

    def _bill(self, prompt_tokens: int, completion_tokens: int) -> None:
        with self._lock:
            self.billed_prompt_tokens += prompt_tokens
            self.billed_completion_tokens += completion_tokens

    def chat(self, config: BackendConfig, messages: Sequence[ChatMessage]) -> RawReply:
        prompt_tokens = sum(count_tokens(str(m.get("content", ""))) for m in messages)
        entry = self._next_script_entry()
        if isinstance(entry, dict) and "fail" in entry:
            self._bill(prompt_tokens, 0)
            status = int(entry["fail"])
            raise TransientBackendError(
                f"scripted failure (status {status})",
                status=status,
                usage=UsageRecord(prompt_tokens=prompt_tokens),
            )
        text = entry if isinstance(entry, str) else self._behavior_reply(messages)
        usage = UsageRecord(prompt_tokens=prompt_tokens, completion_tokens=count_tokens(text))
        self._bill(usage.prompt_tokens, usage.completion_tokens)
        return RawReply(text=text, usage=usage)

    def embed(self, config: BackendConfig, texts: Sequence[str]) -> tuple[list[np.ndarray], UsageRecord]:
        entry = self._next_script_entry()
        prompt_tokens = sum(count_tokens(t) for t in texts)
        if isinstance(entry, dict) and "fail" in entry:
            self._bill(prompt_tokens, 0)
            status = int(entry["fail"])
            raise TransientBackendError(
                f"scripted failure (status {status})",
                status=status,
                usage=UsageRecord(prompt_tokens=prompt_tokens),
            )
        vectors = [mock_embedding(t, dim=self.dim, seed=self.seed) for t in texts]
        self._bill(prompt_tokens, 0)
        return vectors, UsageRecord(prompt_tokens=prompt_tokens)


# ---------------------------------------------------------------------------
# HTTP transport (OpenAI-compatible)
# ---------------------------------------------------------------------------


class HttpTransport:
    """OpenAI-compatible JSON-over-HTTP transport.

    429/5xx and timeouts surface as transient errors for the client's retry
    loop; other HTTP errors are final. An ``httpx_transport`` can be injected
    to test this path without a network.
    """

    def __init__(self, config: BackendConfig, httpx_transport: object | None = None):
        import httpx

        self._httpx = httpx
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.timeout,
            transport=httpx_transport,
        )

    def _post(self, config: BackendConfig, endpoint: str, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {config.api_key()}"}
        try:
            response = self._client.post(endpoint, json=payload, headers=headers)
        except self._httpx.TimeoutException as exc:
            raise TransientBackendError(f"timeout calling {endpoint}: {exc}") from exc
        except self._httpx.TransportError as exc:
            raise TransientBackendError(f"transport failure calling {endpoint}: {exc}") from exc
        if response.status_code in _TRANSIENT_STATUSES:
            raise TransientBackendError(
                f"HTTP {response.status_code} from {endpoint}: {response.text[:200]}",
                status=response.status_code,
            )
        if response.status_code != 200:
            raise BackendError(f"HTTP {response.status_code} from {endpoint}: {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise BackendError(f"non-JSON response from {endpoint}") from exc

    @staticmethod
    def _parse_usage(data: dict) -> UsageRecord:
        usage = data.get("usage") or {}
        prompt = int(usage.get("prompt_tokens", 0))
        details = usage.get("prompt_tokens_details") or {}
        cached = min(int(details.get("cached_tokens", 0)), prompt)
        return UsageRecord(
            prompt_tokens=prompt,
            cached_prompt_tokens=cached,
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )

    def chat(self, config: BackendConfig, messages: Sequence[ChatMessage]) -> RawReply:
        payload: dict = {"model": config.model_name, "messages": list(messages)}
        if config.reasoning_effort is not None:
            payload["reasoning_effort"] = config.reasoning_effort
        elif config.temperature is not None:
            payload["temperature"] = config.temperature
            payload["max_tokens"] = config.max_tokens
        else:
            raise ConfigurationError(f"backend {config.model_name!r} has neither reasoning_effort nor temperature/max_tokens")
        data = self._post(config, "/chat/completions", payload)
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("chat response missing choices[0].message.content") from exc
        return RawReply(text=text, usage=self._parse_usage(data))

    def embed(self, config: BackendConfig, texts: Sequence[str]) -> tuple[list[np.ndarray], UsageRecord]:
        payload = {"model": config.model_name, "input": list(texts)}
        data = self._post(config, "/embeddings", payload)
        try:
            rows = sorted(data["data"], key=lambda item: item["index"])
            vectors = [np.asarray(row["embedding"], dtype=np.float64) for row in rows]
        except (KeyError, TypeError) as exc:
            raise BackendError("embedding response missing data[*].embedding") from exc
        if len(vectors) != len(texts):
            raise BackendError(f"embedding response has {len(vectors)} vectors for {len(texts)} inputs")
        return vectors, self._parse_usage(data)


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


def _build_transport(config: BackendConfig) -> object:
    if config.is_mock:
        return MockTransport.from_url(config.base_url)
    return HttpTransport(config)


class LlmClient:
    """Retrying, metering front end over one backend.

    Every attempt (including failed ones) lands in the ledger under this
    client's role, which is how retried questions end up costing more than
    they score. At most ``max_concurrency`` calls run at once.
    """

    def __init__(
        self,
        config: BackendConfig,
        *,
        role: str = "",
        ledger: UsageLedger | None = None,
        transport: object | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        max_concurrency: int = 4,
    ):
        if max_concurrency < 1:
            raise InvalidInputError("max_concurrency must be at least 1")
        self.config = config
        self.role = role
        self.ledger = ledger
        self.transport = transport if transport is not None else _build_transport(config)
        self._sleeper = sleeper
        self._jitter = random.Random(0)
        self._semaphore = threading.BoundedSemaphore(max_concurrency)

    def _record(self, usage: UsageRecord, ok: bool) -> None:
        if self.ledger is not None:
            self.ledger.record(LedgerEntry(role=self.role, model_name=self.config.model_name, usage=usage, ok=ok))

    def _with_retries(self, call: Callable[[], object], label: str) -> tuple[object, int]:
        policy = self.config.retry
        attempt_log: list[str] = []
        for attempt in range(1, policy.max_attempts + 1):
            try:
                with self._semaphore:
                    return call(), attempt
            except TransientBackendError as exc:
                failed_usage = exc.usage if isinstance(exc.usage, UsageRecord) else UsageRecord()
                self._record(failed_usage, ok=False)
                attempt_log.append(f"attempt {attempt}: {exc}")
                logger.warning("%s attempt %d/%d failed: %s", label, attempt, policy.max_attempts, exc)
                if attempt < policy.max_attempts:
                    delay = policy.backoff_base * (2 ** (attempt - 1)) * (0.5 + self._jitter.random())
                    if delay > 0:
                        self._sleeper(delay)
        raise BackendError(
            f"{label} failed after {policy.max_attempts} attempts",
            attempts=policy.max_attempts,
            attempt_log=tuple(attempt_log),
        )

    def complete(self, messages: Sequence[ChatMessage]) -> ChatExchange:
        """Run one chat completion to success or exhausted retries."""
        if not messages:
            raise InvalidInputError("messages must be non-empty")

        def call() -> RawReply:
            return self.transport.chat(self.config, messages)

        reply, attempts = self._with_retries(call, f"chat({self.config.model_name})")
        assert isinstance(reply, RawReply)
        self._record(reply.usage, ok=True)
        return ChatExchange(
            request_messages=tuple(dict(m) for m in messages),
            response_text=reply.text,
            usage=reply.usage,
            attempts=attempts,
        )

    def embed(self, texts: Sequence[str]) -> tuple[list[np.ndarray], UsageRecord]:
        """Embed a non-empty batch of texts, order-preserving."""
        if not texts:
            raise InvalidInputError("texts must be non-empty")

        def call() -> tuple[list[np.ndarray], UsageRecord]:
            return self.transport.embed(self.config, texts)

        result, _ = self._with_retries(call, f"embed({self.config.model_name})")
        vectors, usage = result
        self._record(usage, ok=True)
        return vectors, usage
