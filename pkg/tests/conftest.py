"""Shared fixtures: tiny conversations, datasets, and mock-backed clients."""
from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from memcost.core import Conversation, Message, Question, Session
from memcost.llm_gateway import BackendConfig, LlmClient, MockTransport, RetryPolicy, UsageLedger

BASE_TS = datetime(2025, 3, 1, 9, 0, 0, tzinfo=timezone.utc)


def ts(minutes: float = 0.0) -> datetime:
    return BASE_TS + timedelta(minutes=minutes)


def make_message(content: str, role: str = "user", minute: float = 0.0, speaker: str | None = None) -> Message:
    return Message(role=role, content=content, timestamp=ts(minute), speaker=speaker)


def make_session(session_id: str, *contents: str, start_minute: float = 0.0, speaker: str | None = "Ana") -> Session:
    """Alternating user/assistant messages one minute apart, user first."""
    messages = []
    for i, content in enumerate(contents):
        role = "user" if i % 2 == 0 else "assistant"
        messages.append(
            Message(
                role=role,
                content=content,
                timestamp=ts(start_minute + i),
                speaker=speaker if role == "user" else None,
            )
        )
    return Session(id=session_id, timestamp=ts(start_minute), messages=tuple(messages))


@pytest.fixture
def conversation() -> Conversation:
    """Three sessions with distinct planted facts for user u1."""
    return Conversation(
        user_id="u1",
        sessions=(
            make_session(
                "s1",
                "I adopted a golden retriever named Biscuit last week.",
                "Congratulations on Biscuit!",
                "I work as a marine biologist in Lisbon.",
                "Lisbon is a great base for field work.",
                start_minute=0,
            ),
            make_session(
                "s2",
                "My favorite dessert is pastel de nata.",
                "A classic choice.",
                start_minute=60,
            ),
            make_session(
                "s3",
                "My sister Rita plays violin in an orchestra.",
                "That sounds lovely.",
                start_minute=120,
            ),
        ),
    )


@pytest.fixture
def questions() -> list[Question]:
    return [
        Question(
            id="q1",
            text="What is the golden retriever named?",
            golden_answer="Biscuit",
            category="single-hop",
            user_id="u1",
        ),
        Question(
            id="q2",
            text="What instrument does my sister Rita play?",
            golden_answer="violin",
            category="single-hop",
            user_id="u1",
        ),
    ]


@pytest.fixture
def dataset_file(tmp_path: Path, conversation: Conversation, questions: list[Question]) -> Path:
    """The conversation and questions above, serialized to the dataset schema."""
    data = {
        "conversations": [
            {
                "user_id": conversation.user_id,
                "sessions": [
                    {
                        "id": session.id,
                        "timestamp": session.timestamp.isoformat(),
                        "messages": [
                            {
                                "role": m.role,
                                "content": m.content,
                                "timestamp": m.timestamp.isoformat(),
                                **({"speaker": m.speaker} if m.speaker else {}),
                            }
                            for m in session.messages
                        ],
                    }
                    for session in conversation.sessions
                ],
            }
        ],
        "questions": [
            {
                "id": q.id,
                "user_id": q.user_id,
                "text": q.text,
                "golden_answer": q.golden_answer,
                "category": q.category,
            }
            for q in questions
        ],
    }
    path = tmp_path / "dataset.json"
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def ledger() -> UsageLedger:
    return UsageLedger()


def mock_client(
    behavior: str,
    role: str,
    ledger: UsageLedger | None = None,
    *,
    script: list | None = None,
    repeat_script: bool = False,
    dim: int = 64,
    max_attempts: int = 4,
) -> LlmClient:
    """Client over a MockTransport with zero-delay retries."""
    transport = MockTransport(behavior, dim=dim, script=script, repeat_script=repeat_script)
    config = BackendConfig(
        model_name=f"mock-{behavior}",
        base_url=f"mock://{behavior}",
        retry=RetryPolicy(max_attempts=max_attempts, backoff_base=0.0),
    )
    return LlmClient(config, role=role, ledger=ledger, transport=transport, sleeper=lambda _: None)


@pytest.fixture
def extractor(ledger: UsageLedger) -> LlmClient:
    return mock_client("extract", "extractor", ledger)


@pytest.fixture
def embedder(ledger: UsageLedger) -> LlmClient:
    # Embeddings ignore the chat behavior; "echo" is the neutral choice.
    return mock_client("echo", "embedder", ledger)


@pytest.fixture
def reader(ledger: UsageLedger) -> LlmClient:
    return mock_client("answer", "reader", ledger)


@pytest.fixture
def judge(ledger: UsageLedger) -> LlmClient:
    return mock_client("judge", "judge", ledger)
