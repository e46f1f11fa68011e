"""Normalized dataset files: conversations plus questions in one JSON document.

Schema (all timestamps ISO 8601):

    {
      "conversations": [
        {"user_id": "...",
         "sessions": [
           {"id": "...", "timestamp": "...",
            "messages": [
              {"speaker": "...", "role": "user"|"assistant",
               "content": "...", "timestamp": "..."}]}]}],
      "questions": [
        {"id": "...", "user_id": "...", "text": "...",
         "golden_answer": "...", "category": "..."}]
    }

``speaker`` and ``category`` are optional. Two-speaker corpora map every
non-assistant speaker to the user role before they reach this format.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from .core import Conversation, Message, Question, Session
from .errors import InvalidInputError

__all__ = ["Dataset", "load_dataset", "dataset_to_dict"]


@dataclass(frozen=True)
class Dataset:
    conversations: tuple[Conversation, ...]
    questions: tuple[Question, ...]

    def conversation_for(self, user_id: str) -> Conversation:
        for conversation in self.conversations:
            if conversation.user_id == user_id:
                return conversation
        raise InvalidInputError(f"dataset has no conversation for user {user_id!r}")


def _parse_timestamp(value: object, where: str) -> datetime:
    if not isinstance(value, str):
        raise InvalidInputError(f"{where}: timestamp must be an ISO 8601 string")
    try:
        return datetime.fromisoformat(value)
    except ValueError as exc:
        raise InvalidInputError(f"{where}: bad timestamp {value!r}") from exc


def _require(data: dict, key: str, where: str) -> object:
    if key not in data:
        raise InvalidInputError(f"{where}: missing required field {key!r}")
    return data[key]


def _parse_message(data: object, where: str) -> Message:
    if not isinstance(data, dict):
        raise InvalidInputError(f"{where}: message must be an object")
    return Message(
        role=str(_require(data, "role", where)),
        content=str(_require(data, "content", where)),
        timestamp=_parse_timestamp(_require(data, "timestamp", where), where),
        speaker=str(data["speaker"]) if data.get("speaker") is not None else None,
    )


def _parse_session(data: object, where: str) -> Session:
    if not isinstance(data, dict):
        raise InvalidInputError(f"{where}: session must be an object")
    raw_messages = _require(data, "messages", where)
    if not isinstance(raw_messages, list):
        raise InvalidInputError(f"{where}: messages must be a list")
    return Session(
        id=str(_require(data, "id", where)),
        timestamp=_parse_timestamp(_require(data, "timestamp", where), where),
        messages=tuple(_parse_message(m, f"{where}.messages[{i}]") for i, m in enumerate(raw_messages)),
    )


def _parse_conversation(data: object, where: str) -> Conversation:
    if not isinstance(data, dict):
        raise InvalidInputError(f"{where}: conversation must be an object")
    raw_sessions = _require(data, "sessions", where)
    if not isinstance(raw_sessions, list):
        raise InvalidInputError(f"{where}: sessions must be a list")
    return Conversation(
        user_id=str(_require(data, "user_id", where)),
        sessions=tuple(_parse_session(s, f"{where}.sessions[{i}]") for i, s in enumerate(raw_sessions)),
    )


def _parse_question(data: object, where: str) -> Question:
    if not isinstance(data, dict):
        raise InvalidInputError(f"{where}: question must be an object")
    return Question(
        id=str(_require(data, "id", where)),
        text=str(_require(data, "text", where)),
        golden_answer=str(_require(data, "golden_answer", where)),
        category=str(data["category"]) if data.get("category") is not None else None,
        user_id=str(data["user_id"]) if data.get("user_id") is not None else None,
    )


def load_dataset(path: str | Path) -> Dataset:
    """Load and validate a normalized dataset file."""
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"dataset file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise InvalidInputError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: top level must be an object")
    conversations = data.get("conversations", [])
    questions = data.get("questions", [])
    if not isinstance(conversations, list) or not isinstance(questions, list):
        raise InvalidInputError(f"{path}: conversations and questions must be lists")
    return Dataset(
        conversations=tuple(_parse_conversation(c, f"conversations[{i}]") for i, c in enumerate(conversations)),
        questions=tuple(_parse_question(q, f"questions[{i}]") for i, q in enumerate(questions)),
    )


def dataset_to_dict(dataset: Dataset) -> dict:
    """Inverse of load_dataset, for writing fixtures."""
    return {
        "conversations": [
            {
                "user_id": conversation.user_id,
                "sessions": [
                    {
                        "id": session.id,
                        "timestamp": session.timestamp.isoformat(),
                        "messages": [
                            {
                                **({"speaker": m.speaker} if m.speaker else {}),
                                "role": m.role,
                                "content": m.content,
                                "timestamp": m.timestamp.isoformat(),
                            }
                            for m in session.messages
                        ],
                    }
                    for session in conversation.sessions
                ],
            }
            for conversation in dataset.conversations
        ],
        "questions": [
            {
                "id": q.id,
                **({"user_id": q.user_id} if q.user_id else {}),
                "text": q.text,
                "golden_answer": q.golden_answer,
                **({"category": q.category} if q.category else {}),
            }
            for q in dataset.questions
        ],
    }
