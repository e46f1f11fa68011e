"""Conversation-to-memory pipeline: segment, extract facts, embed, store.

Conversations are processed in chronological windows. A window closes when the
next message would push it past ``batch_size`` messages or ``max_chars``
characters of raw content; a single message longer than the cap becomes its own
oversize segment. The windows partition the conversation exactly.

Ingestion is idempotent per (user_id, content fingerprint): re-ingesting a
byte-identical conversation returns the stored receipt without touching the
index.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .core import Conversation, Message, Money, PricingSchedule, UsageRecord, count_tokens, usage_cost
from .errors import BackendError, ConfigurationError, DuplicateRecordError, ExtractionError, InvalidInputError
from .llm_gateway import LlmClient
from .prompts import load_prompt
from .vector_index import DEFAULT_DIM, HnswIndex, HnswParams

__all__ = [
    "DEFAULT_BATCH_SIZE",
    "DEFAULT_MAX_CHARS",
    "Segment",
    "MemoryRecord",
    "WriteReceipt",
    "MemoryStore",
    "segment_conversation",
    "extract_facts",
    "ingest_conversation",
    "format_message_line",
    "serialize_segment",
    "conversation_fingerprint",
    "parse_fact_reply",
]

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 10
DEFAULT_MAX_CHARS = 8_000


def format_message_line(message: Message) -> str:
    """Canonical one-line rendering: ``[timestamp] name (role): content``.

    User-authored lines always carry the ``(user)`` marker (falling back to the
    role as the name); assistant lines show the speaker only when named.
    """
    ts = message.timestamp.isoformat(sep=" ")
    if message.role == "user":
        name = message.speaker or "user"
        return f"[{ts}] {name} (user): {message.content}"
    if message.speaker:
        return f"[{ts}] {message.speaker} (assistant): {message.content}"
    return f"[{ts}] assistant: {message.content}"


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """One chronological window of a conversation."""

    messages: tuple[Message, ...]
    char_len: int
    seq_no: int
    oversize: bool = False

    def __post_init__(self) -> None:
        if not self.messages:
            raise InvalidInputError("segment must contain at least one message")
        if self.seq_no < 0:
            raise InvalidInputError("seq_no must be non-negative")


def segment_conversation(
    conversation: Conversation,
    batch_size: int = DEFAULT_BATCH_SIZE,
    max_chars: int = DEFAULT_MAX_CHARS,
) -> list[Segment]:
    """Partition a conversation's messages into bounded chronological windows.

    Only raw message content counts toward ``max_chars``. Concatenating the
    returned segments' messages in seq_no order reproduces the conversation.
    """
    if batch_size < 1:
        raise InvalidInputError("batch_size must be at least 1")
    if max_chars < 1:
        raise InvalidInputError("max_chars must be at least 1")

    segments: list[Segment] = []
    window: list[Message] = []
    window_chars = 0

    def close(oversize: bool = False) -> None:
        nonlocal window, window_chars
        if window:
            segments.append(Segment(tuple(window), window_chars, seq_no=len(segments), oversize=oversize))
            window = []
            window_chars = 0

    for message in conversation.all_messages():
        length = len(message.content)
        if length > max_chars:
            close()
            window = [message]
            window_chars = length
            close(oversize=True)
            continue
        if window and (len(window) + 1 > batch_size or window_chars + length > max_chars):
            close()
        window.append(message)
        window_chars += length
    close()
    return segments


def serialize_segment(segment: Segment) -> str:
    lines = [format_message_line(m) for m in segment.messages]
    return "Conversation excerpt (chronological):\n" + "\n".join(lines)


# ---------------------------------------------------------------------------
# Fact extraction
# ---------------------------------------------------------------------------

_BULLET = re.compile(r"^\s*(?:[-*•]\s+|\d+[.)]\s+)")
_FENCE = re.compile(r"^```[a-zA-Z0-9_-]*\n(.*?)\n?```\s*$", re.DOTALL)


def parse_fact_reply(text: str) -> list[str]:
    """Parse an extraction reply into fact strings.

    Accepts a JSON array of strings (or an object with a "facts" array),
    otherwise one fact per non-empty line with leading bullets stripped. JSON
    of any other shape parses to no facts rather than garbage lines.
    """
    stripped = text.strip()
    fence = _FENCE.match(stripped)
    if fence:
        stripped = fence.group(1).strip()
    if not stripped:
        return []
    try:
        parsed = json.loads(stripped)
    except ValueError:
        facts = [_BULLET.sub("", line).strip() for line in stripped.splitlines()]
        return [fact for fact in facts if fact]
    if isinstance(parsed, dict):
        parsed = parsed.get("facts")
    if isinstance(parsed, list) and all(isinstance(item, str) for item in parsed):
        return [item.strip() for item in parsed if item.strip()]
    return []


def extract_facts(
    segment: Segment,
    extractor: LlmClient,
    instructions: str | None = None,
) -> tuple[list[str], UsageRecord]:
    """Turn one segment into standalone fact strings via the extractor backend.

    A backend that fails for good raises ExtractionError carrying the segment's
    seq_no; a reply that parses to nothing yields an empty list plus a warning.
    """
    if instructions is None:
        instructions = load_prompt("fact_extraction")
    messages = [
        {"role": "system", "content": instructions},
        {"role": "user", "content": serialize_segment(segment)},
    ]
    try:
        exchange = extractor.complete(messages)
    except BackendError as exc:
        raise ExtractionError(f"extraction failed for segment {segment.seq_no}: {exc}", seq_no=segment.seq_no) from exc
    facts = parse_fact_reply(exchange.response_text)
    if not facts and exchange.response_text.strip():
        logger.warning("segment %d: unparseable extraction reply, no facts kept", segment.seq_no)
    return facts, exchange.usage


# ---------------------------------------------------------------------------
# Records and receipts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryRecord:
    """One extracted fact, ready for retrieval."""

    id: str
    user_id: str
    text: str
    source_segment: int
    created_at: datetime
    token_len: int

    def __post_init__(self) -> None:
        if not self.id:
            raise InvalidInputError("record id must be non-empty")
        if not self.text:
            raise InvalidInputError("record text must be non-empty")
        if self.token_len < 0:
            raise InvalidInputError("token_len must be non-negative")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "user_id": self.user_id,
            "text": self.text,
            "source_segment": self.source_segment,
            "created_at": self.created_at.isoformat(),
            "token_len": self.token_len,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MemoryRecord":
        return cls(
            id=data["id"],
            user_id=data["user_id"],
            text=data["text"],
            source_segment=data["source_segment"],
            created_at=datetime.fromisoformat(data["created_at"]),
            token_len=data["token_len"],
        )


@dataclass(frozen=True)
class WriteReceipt:
    """What one ingestion did and what it cost."""

    records_created: int
    extraction_usage: UsageRecord
    embedding_tokens: int
    write_cost: Money
    partial: bool = False
    failed_seq_nos: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.records_created < 0:
            raise InvalidInputError("records_created must be non-negative")
        if self.embedding_tokens < 0:
            raise InvalidInputError("embedding_tokens must be non-negative")
        if self.partial != bool(self.failed_seq_nos):
            raise InvalidInputError("partial must mirror failed_seq_nos")

    def to_dict(self) -> dict:
        return {
            "records_created": self.records_created,
            "extraction_usage": {
                "prompt_tokens": self.extraction_usage.prompt_tokens,
                "cached_prompt_tokens": self.extraction_usage.cached_prompt_tokens,
                "completion_tokens": self.extraction_usage.completion_tokens,
            },
            "embedding_tokens": self.embedding_tokens,
            "write_cost_usd": self.write_cost.format(6),
            "partial": self.partial,
            "failed_seq_nos": list(self.failed_seq_nos),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WriteReceipt":
        return cls(
            records_created=data["records_created"],
            extraction_usage=UsageRecord(**data["extraction_usage"]),
            embedding_tokens=data["embedding_tokens"],
            write_cost=Money.from_dollars(data["write_cost_usd"]),
            partial=data["partial"],
            failed_seq_nos=tuple(data["failed_seq_nos"]),
        )


def conversation_fingerprint(conversation: Conversation) -> str:
    """Stable hash of the normalized conversation content (the idempotency key)."""
    hasher = hashlib.sha256()
    hasher.update(conversation.user_id.encode("utf-8"))
    for session in conversation.sessions:
        hasher.update(b"\x1d")
        hasher.update(session.id.encode("utf-8"))
        hasher.update(session.timestamp.isoformat().encode("utf-8"))
        for message in session.messages:
            hasher.update(b"\x1e")
            for part in (message.role, message.speaker or "", message.timestamp.isoformat(), message.content):
                hasher.update(part.encode("utf-8"))
                hasher.update(b"\x1f")
    return hasher.hexdigest()


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

_STORE_FILE = "store.json"


class MemoryStore:
    """Memory records plus one vector index per user, persistable as a directory.

    The underlying index has no filtering, so user isolation comes from
    routing: each user_id gets its own graph built with the same parameters.
    """

    def __init__(self, dim: int = DEFAULT_DIM, params: HnswParams | None = None):
        self.dim = dim
        self.params = params or HnswParams()
        self._indexes: dict[str, HnswIndex] = {}
        self._records: dict[str, MemoryRecord] = {}
        self._receipts: dict[str, WriteReceipt] = {}

    # -- records -----------------------------------------------------------

    def add(self, record: MemoryRecord, vector: object) -> None:
        if record.id in self._records:
            raise DuplicateRecordError(f"record id {record.id!r} already stored")
        index = self._indexes.get(record.user_id)
        if index is None:
            index = HnswIndex(dim=self.dim, params=self.params)
            self._indexes[record.user_id] = index
        index.insert(record.id, vector)
        self._records[record.id] = record

    def get(self, record_id: str) -> MemoryRecord:
        try:
            return self._records[record_id]
        except KeyError:
            raise InvalidInputError(f"no record with id {record_id!r}") from None

    def record_count(self, user_id: str | None = None) -> int:
        if user_id is None:
            return len(self._records)
        index = self._indexes.get(user_id)
        return len(index) if index is not None else 0

    def user_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._indexes))

    def search(self, user_id: str, query_vector: object, k: int = 20) -> list[tuple[MemoryRecord, float]]:
        """Top-k records of one user by cosine similarity; [] for unknown users."""
        index = self._indexes.get(user_id)
        if index is None:
            return []
        hits = index.search(query_vector, k=k)
        return [(self._records[hit.record_id], hit.similarity) for hit in hits]

    # -- receipts ----------------------------------------------------------

    def receipt_for(self, fingerprint: str) -> WriteReceipt | None:
        return self._receipts.get(fingerprint)

    def store_receipt(self, fingerprint: str, receipt: WriteReceipt) -> None:
        self._receipts[fingerprint] = receipt

    # -- persistence -------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        users = {}
        for user_id, index in sorted(self._indexes.items()):
            stem = hashlib.sha256(user_id.encode("utf-8")).hexdigest()[:16]
            index.save(directory / f"{stem}.idx")
            users[user_id] = f"{stem}.idx"
        manifest = {
            "format": "memcost-store",
            "version": 1,
            "dim": self.dim,
            "params": {
                "m": self.params.m,
                "ef_construction": self.params.ef_construction,
                "ef_search": self.params.ef_search,
                "rng_seed": self.params.rng_seed,
            },
            "users": users,
            "records": [self._records[rid].to_dict() for rid in sorted(self._records)],
            "receipts": {key: receipt.to_dict() for key, receipt in sorted(self._receipts.items())},
        }
        (directory / _STORE_FILE).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "MemoryStore":
        directory = Path(directory)
        manifest_path = directory / _STORE_FILE
        if not manifest_path.is_file():
            raise InvalidInputError(f"{directory} does not contain a memory store")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        params = HnswParams(metric="cosine", **manifest["params"])
        store = cls(dim=manifest["dim"], params=params)
        for user_id, filename in manifest["users"].items():
            store._indexes[user_id] = HnswIndex.load(directory / filename)
        for data in manifest["records"]:
            record = MemoryRecord.from_dict(data)
            store._records[record.id] = record
        for key, data in manifest["receipts"].items():
            store._receipts[key] = WriteReceipt.from_dict(data)
        return store


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def ingest_conversation(
    conversation: Conversation,
    *,
    extractor: LlmClient,
    embedder: LlmClient,
    store: MemoryStore,
    pricing: PricingSchedule,
    batch_size: int = DEFAULT_BATCH_SIZE,
    max_chars: int = DEFAULT_MAX_CHARS,
    instructions: str | None = None,
    tokenizer: str = "approx",
) -> WriteReceipt:
    """Segment, extract, embed, and store one conversation; returns the receipt.

    A segment whose extraction fails for good is skipped and listed in the
    receipt's ``failed_seq_nos`` (the receipt is then marked partial); an
    embedding dimension that disagrees with the store is a configuration error.
    Re-ingesting identical content is a no-op returning the stored receipt.
    """
    fingerprint = conversation_fingerprint(conversation)
    existing = store.receipt_for(fingerprint)
    if existing is not None:
        return existing

    extraction_usage = UsageRecord()
    embedding_tokens = 0
    records_created = 0
    failed: list[int] = []

    for segment in segment_conversation(conversation, batch_size, max_chars):
        try:
            facts, usage = extract_facts(segment, extractor, instructions)
        except ExtractionError as exc:
            logger.error("skipping segment %d: %s", exc.seq_no, exc)
            failed.append(exc.seq_no)
            continue
        extraction_usage = extraction_usage + usage
        if not facts:
            continue
        vectors, embed_usage = embedder.embed(facts)
        for vector in vectors:
            if np.asarray(vector).shape != (store.dim,):
                raise ConfigurationError(
                    f"embedder returned dimension {np.asarray(vector).shape}, store needs ({store.dim},)"
                )
        embedding_tokens += embed_usage.prompt_tokens
        created_at = segment.messages[-1].timestamp
        for position, (fact, vector) in enumerate(zip(facts, vectors)):
            record = MemoryRecord(
                id=f"{conversation.user_id}/{segment.seq_no:05d}/{position:03d}",
                user_id=conversation.user_id,
                text=fact,
                source_segment=segment.seq_no,
                created_at=created_at,
                token_len=count_tokens(fact, tokenizer),
            )
            store.add(record, vector)
            records_created += 1

    cost = usage_cost(extraction_usage, pricing.for_role("extractor")) + usage_cost(
        UsageRecord(prompt_tokens=embedding_tokens), pricing.for_role("embedder")
    )
    receipt = WriteReceipt(
        records_created=records_created,
        extraction_usage=extraction_usage,
        embedding_tokens=embedding_tokens,
        write_cost=cost,
        partial=bool(failed),
        failed_seq_nos=tuple(failed),
    )
    store.store_receipt(fingerprint, receipt)
    return receipt
