"""Question answering and grading over the two deployment styles.

Memory mode embeds the question, retrieves the user's top-k facts, and answers
from those; long-context mode answers from the full serialized history. Each
answer is graded by three independent judge calls whose majority label is the
consensus. Accuracy counts each question once even when transport retries made
it cost several exchanges.
"""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .core import Conversation, Money, PricingSchedule, Question, UsageRecord, count_tokens, usage_cost
from .errors import InvalidInputError
from .llm_gateway import LlmClient
from .memory_engine import MemoryStore, format_message_line
from .prompts import load_prompt

__all__ = [
    "AnswerTrace",
    "JudgeVerdict",
    "QuestionOutcome",
    "EvalResult",
    "serialize_conversation",
    "answer_with_memory",
    "answer_long_context",
    "judge_once",
    "judge_consensus",
    "accuracy",
    "run_eval",
    "write_results_jsonl",
    "write_summary_json",
]

logger = logging.getLogger(__name__)

MODES = ("memory", "long_context")
LABELS = ("CORRECT", "WRONG")
DEFAULT_TOP_K = 20
JUDGE_VOTES = 3


def serialize_conversation(conversation: Conversation) -> str:
    """Canonical full-history rendering with per-message timestamps."""
    blocks = []
    for session in conversation.sessions:
        header = f"=== Session {session.id} | {session.timestamp.isoformat(sep=' ')} ==="
        lines = [format_message_line(m) for m in session.messages]
        blocks.append(header + "\n" + "\n".join(lines))
    return "\n\n".join(blocks)


@dataclass(frozen=True)
class AnswerTrace:
    """One answered question: what was retrieved or read, said, and spent."""

    question_id: str
    mode: str
    retrieved_token_count: int | None
    answer_text: str
    usage: UsageRecord
    read_cost: Money
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")
        if self.retrieved_token_count is not None and self.retrieved_token_count < 0:
            raise InvalidInputError("retrieved_token_count must be non-negative")


@dataclass(frozen=True)
class JudgeVerdict:
    label: str
    explanation: str
    raw: str
    parse_failed: bool = False

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise InvalidInputError(f"label must be one of {LABELS}")


# ---------------------------------------------------------------------------
# Answering
# ---------------------------------------------------------------------------


def answer_with_memory(
    question: Question,
    user_id: str,
    store: MemoryStore,
    *,
    reader: LlmClient,
    embedder: LlmClient,
    pricing: PricingSchedule,
    top_k: int = DEFAULT_TOP_K,
    tokenizer: str = "approx",
) -> AnswerTrace:
    """Embed the question, retrieve top_k facts, and answer from them.

    An empty store still answers (with an empty facts block) but the trace is
    flagged so downstream reporting can call it out.
    """
    vectors, embed_usage = embedder.embed([question.text])
    hits = store.search(user_id, vectors[0], k=top_k)
    facts = [record.text for record, _ in hits]
    flags = () if hits else ("empty_store",)
    prompt = load_prompt("memory_answer").format(
        user_id=user_id,
        facts="\n".join(f"- {fact}" for fact in facts) if facts else "(none)",
        question=question.text,
    )
    exchange = reader.complete([{"role": "user", "content": prompt}])
    read_cost = usage_cost(exchange.usage, pricing.for_role("reader")) + usage_cost(
        embed_usage, pricing.for_role("embedder")
    )
    return AnswerTrace(
        question_id=question.id,
        mode="memory",
        retrieved_token_count=sum(count_tokens(fact, tokenizer) for fact in facts),
        answer_text=exchange.response_text,
        usage=exchange.usage,
        read_cost=read_cost,
        flags=flags,
    )


def answer_long_context(
    question: Question,
    conversation: Conversation,
    *,
    lc_backend: LlmClient,
    pricing: PricingSchedule,
) -> AnswerTrace:
    """Answer from the full serialized history in a single turn."""
    prompt = load_prompt("long_context_answer").format(
        history=serialize_conversation(conversation),
        question=question.text,
    )
    exchange = lc_backend.complete([{"role": "user", "content": prompt}])
    return AnswerTrace(
        question_id=question.id,
        mode="long_context",
        retrieved_token_count=None,
        answer_text=exchange.response_text,
        usage=exchange.usage,
        read_cost=usage_cost(exchange.usage, pricing.for_role("long_context")),
    )


# ---------------------------------------------------------------------------
# Judging
# ---------------------------------------------------------------------------

_JSON_OBJECT = re.compile(r"\{[^{}]*\}")


def _parse_verdict(raw: str) -> tuple[str, str] | None:
    """Pull (label, explanation) out of a judge reply, or None if unusable."""
    candidates = []
    stripped = raw.strip()
    if stripped:
        candidates.append(stripped)
    candidates.extend(match.group(0) for match in _JSON_OBJECT.finditer(raw))
    for candidate in candidates:
        try:
            parsed = json.loads(candidate)
        except ValueError:
            continue
        if not isinstance(parsed, dict) or "label" not in parsed:
            continue
        label = str(parsed["label"]).strip().upper()
        if label not in LABELS:
            continue
        explanation = str(parsed.get("explanation", "")).strip()
        if not explanation:
            prefix = raw[: raw.find(candidate)].strip() if candidate in raw else ""
            explanation = prefix
        return label, explanation
    return None


def judge_once(
    question_text: str,
    golden_answer: str,
    generated_answer: str,
    judge: LlmClient,
) -> JudgeVerdict:
    """One grading call; an unparseable reply is re-asked once, then scored WRONG."""
    if not question_text or not golden_answer:
        raise InvalidInputError("question_text and golden_answer must be non-empty")
    messages = [
        {"role": "system", "content": load_prompt("judge_system")},
        {
            "role": "user",
            "content": load_prompt("judge_user").format(
                question=question_text,
                golden_answer=golden_answer,
                generated_answer=generated_answer,
            ),
        },
    ]
    raw = ""
    for _ in range(2):
        exchange = judge.complete(messages)
        raw = exchange.response_text
        parsed = _parse_verdict(raw)
        if parsed is not None:
            label, explanation = parsed
            return JudgeVerdict(label=label, explanation=explanation, raw=raw)
        logger.warning("unparseable judge reply, re-asking once")
    return JudgeVerdict(label="WRONG", explanation="judge reply could not be parsed", raw=raw, parse_failed=True)


def judge_consensus(verdicts: list[JudgeVerdict] | tuple[JudgeVerdict, ...]) -> str:
    """Majority label of exactly three verdicts; order cannot matter."""
    if len(verdicts) != JUDGE_VOTES:
        raise InvalidInputError(f"consensus needs exactly {JUDGE_VOTES} verdicts, got {len(verdicts)}")
    correct = sum(1 for v in verdicts if v.label == "CORRECT")
    return "CORRECT" if correct * 2 > JUDGE_VOTES else "WRONG"


def accuracy(labels: list[str] | tuple[str, ...]) -> float:
    """Percentage of CORRECT labels, rounded to two decimals."""
    if not labels:
        raise InvalidInputError("accuracy needs at least one label")
    for label in labels:
        if label not in LABELS:
            raise InvalidInputError(f"unknown label {label!r}")
    correct = sum(1 for label in labels if label == "CORRECT")
    return round(100.0 * correct / len(labels), 2)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuestionOutcome:
    question_id: str
    verdicts: tuple[JudgeVerdict, ...]
    consensus: str
    trace: AnswerTrace


@dataclass(frozen=True)
class EvalResult:
    mode: str
    outcomes: tuple[QuestionOutcome, ...]
    accuracy_pct: float

    @property
    def total_read_cost(self) -> Money:
        total = Money(0)
        for outcome in self.outcomes:
            total = total + outcome.trace.read_cost
        return total

    @property
    def total_usage(self) -> UsageRecord:
        total = UsageRecord()
        for outcome in self.outcomes:
            total = total + outcome.trace.usage
        return total


def _conversations_by_user(conversations: tuple[Conversation, ...]) -> dict[str, Conversation]:
    return {conversation.user_id: conversation for conversation in conversations}


def run_eval(
    questions: list[Question] | tuple[Question, ...],
    conversations: tuple[Conversation, ...],
    mode: str,
    *,
    store: MemoryStore | None,
    reader: LlmClient | None = None,
    lc_backend: LlmClient | None = None,
    embedder: LlmClient | None = None,
    judge: LlmClient,
    pricing: PricingSchedule,
    top_k: int = DEFAULT_TOP_K,
    concurrency: int = 4,
) -> EvalResult:
    """Answer and grade every question; outcomes keep the input order.

    Questions run in parallel up to ``concurrency``; each question's three
    judge votes run sequentially inside its task.
    """
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}")
    if not questions:
        raise InvalidInputError("no questions to evaluate")
    if concurrency < 1:
        raise InvalidInputError("concurrency must be at least 1")
    by_user = _conversations_by_user(conversations)

    def answer(question: Question) -> AnswerTrace:
        if question.user_id is None:
            raise InvalidInputError(f"question {question.id!r} has no user_id")
        if mode == "memory":
            if store is None or reader is None or embedder is None:
                raise InvalidInputError("memory mode needs store, reader, and embedder")
            return answer_with_memory(
                question, question.user_id, store, reader=reader, embedder=embedder, pricing=pricing, top_k=top_k
            )
        if lc_backend is None:
            raise InvalidInputError("long_context mode needs lc_backend")
        if question.user_id not in by_user:
            raise InvalidInputError(f"no conversation for user {question.user_id!r}")
        return answer_long_context(question, by_user[question.user_id], lc_backend=lc_backend, pricing=pricing)

    def grade(question: Question) -> QuestionOutcome:
        trace = answer(question)
        verdicts = tuple(judge_once(question.text, question.golden_answer, trace.answer_text, judge) for _ in range(JUDGE_VOTES))
        return QuestionOutcome(
            question_id=question.id,
            verdicts=verdicts,
            consensus=judge_consensus(verdicts),
            trace=trace,
        )

    if concurrency == 1:
        outcomes = tuple(grade(q) for q in questions)
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            outcomes = tuple(pool.map(grade, questions))
    return EvalResult(
        mode=mode,
        outcomes=outcomes,
        accuracy_pct=accuracy([outcome.consensus for outcome in outcomes]),
    )


# ---------------------------------------------------------------------------
# Result files
# ---------------------------------------------------------------------------


def write_results_jsonl(result: EvalResult, path: str | Path) -> None:
    """One JSON object per question, key-sorted and newline-terminated.

    Output is a pure function of the run's outcomes, so identical runs write
    byte-identical files.
    """
    lines = []
    for outcome in result.outcomes:
        trace = outcome.trace
        lines.append(
            json.dumps(
                {
                    "question_id": outcome.question_id,
                    "mode": trace.mode,
                    "answer": trace.answer_text,
                    "labels": [v.label for v in outcome.verdicts],
                    "consensus": outcome.consensus,
                    "usage": {
                        "prompt_tokens": trace.usage.prompt_tokens,
                        "cached_prompt_tokens": trace.usage.cached_prompt_tokens,
                        "completion_tokens": trace.usage.completion_tokens,
                    },
                    "read_cost_usd": trace.read_cost.format(6),
                    "retrieved_tokens": trace.retrieved_token_count,
                    "flags": list(trace.flags),
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_summary_json(result: EvalResult, path: str | Path) -> None:
    usage = result.total_usage
    summary = {
        "mode": result.mode,
        "questions": len(result.outcomes),
        "correct": sum(1 for o in result.outcomes if o.consensus == "CORRECT"),
        "accuracy_pct": result.accuracy_pct,
        "total_read_cost_usd": result.total_read_cost.format(6),
        "prompt_tokens": usage.prompt_tokens,
        "cached_prompt_tokens": usage.cached_prompt_tokens,
        "completion_tokens": usage.completion_tokens,
    }
    Path(path).write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
