"""Shared domain types: dialogue structures, token counting, money, pricing, usage.

Money is held as an integer number of micro-dollars (USD * 1e-6) so that sums are
associative and independent of evaluation order; rounding happens half-even exactly
once per operation that divides.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from typing import Callable, Iterable, Union

from .errors import ConfigurationError, InvalidInputError

__all__ = [
    "MICRO_PER_DOLLAR",
    "TOKENS_PER_UNIT",
    "ROLES",
    "Money",
    "Message",
    "Session",
    "Conversation",
    "Question",
    "UsageRecord",
    "RoleRates",
    "PricingSchedule",
    "DEFAULT_PRICING",
    "StatsSummary",
    "count_tokens",
    "register_tokenizer",
    "usage_cost",
    "dataset_stats",
]

MICRO_PER_DOLLAR = 1_000_000
# Per-million-token pricing is the native unit of every rate in this package.
TOKENS_PER_UNIT = 1_000_000

ROLES = ("extractor", "reader", "long_context", "judge", "embedder")
_MESSAGE_ROLES = ("user", "assistant")


def _div_half_even(numerator: int, denominator: int) -> int:
    """Integer division rounded half-to-even. ``denominator`` must be positive."""
    if denominator <= 0:
        raise InvalidInputError("denominator must be positive")
    q, r = divmod(numerator, denominator)
    twice = 2 * r
    if twice > denominator or (twice == denominator and q % 2):
        q += 1
    return q


# ---------------------------------------------------------------------------
# Money
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Money:
    """An exact amount of USD held in integer micro-dollars."""

    micro_usd: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.micro_usd, int):
            raise InvalidInputError("micro_usd must be an int")

    @classmethod
    def from_dollars(cls, value: Union[str, int, float, Decimal]) -> "Money":
        """Parse a dollar amount exactly; half-even rounds anything below 1 micro-dollar."""
        try:
            dec = Decimal(str(value))
        except InvalidOperation as exc:
            raise InvalidInputError(f"not a monetary amount: {value!r}") from exc
        micro = (dec * MICRO_PER_DOLLAR).quantize(Decimal(1), rounding=ROUND_HALF_EVEN)
        return cls(int(micro))

    def __add__(self, other: "Money") -> "Money":
        return Money(self.micro_usd + other.micro_usd)

    def __sub__(self, other: "Money") -> "Money":
        return Money(self.micro_usd - other.micro_usd)

    def __neg__(self) -> "Money":
        return Money(-self.micro_usd)

    def __abs__(self) -> "Money":
        return Money(abs(self.micro_usd))

    def __mul__(self, factor: int) -> "Money":
        if not isinstance(factor, int):
            raise InvalidInputError("Money can only be multiplied by an int")
        return Money(self.micro_usd * factor)

    __rmul__ = __mul__

    def scale_div(self, multiplier: int, divisor: int) -> "Money":
        """Return ``self * multiplier / divisor`` rounded half-even to a micro-dollar."""
        return Money(_div_half_even(self.micro_usd * multiplier, divisor))

    def dollars(self) -> Decimal:
        return Decimal(self.micro_usd) / MICRO_PER_DOLLAR

    def format(self, places: int = 4) -> str:
        """Fixed-point decimal string, half-even at ``places`` decimals."""
        if not 0 <= places <= 6:
            raise InvalidInputError("places must be between 0 and 6")
        quant = Decimal(1).scaleb(-places)
        return str(self.dollars().quantize(quant, rounding=ROUND_HALF_EVEN))

    def __str__(self) -> str:
        return f"${self.format(6)}"


# ---------------------------------------------------------------------------
# Dialogue structures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    """One utterance. ``speaker`` is the display name when the dataset has one."""

    role: str
    content: str
    timestamp: datetime
    speaker: str | None = None

    def __post_init__(self) -> None:
        if self.role not in _MESSAGE_ROLES:
            raise InvalidInputError(f"role must be one of {_MESSAGE_ROLES}, got {self.role!r}")
        if not self.content:
            raise InvalidInputError("message content must be non-empty")
        if not isinstance(self.timestamp, datetime):
            raise InvalidInputError("timestamp must be a datetime")


@dataclass(frozen=True)
class Session:
    """A contiguous sitting of messages with non-decreasing timestamps."""

    id: str
    timestamp: datetime
    messages: tuple[Message, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise InvalidInputError("session id must be non-empty")
        if not self.messages:
            raise InvalidInputError(f"session {self.id!r} has no messages")
        object.__setattr__(self, "messages", tuple(self.messages))
        for earlier, later in zip(self.messages, self.messages[1:]):
            if later.timestamp < earlier.timestamp:
                raise InvalidInputError(f"session {self.id!r} timestamps must be non-decreasing")


@dataclass(frozen=True)
class Conversation:
    """All sessions of one user, ordered by session timestamp."""

    user_id: str
    sessions: tuple[Session, ...]

    def __post_init__(self) -> None:
        if not self.user_id:
            raise InvalidInputError("user_id must be non-empty")
        object.__setattr__(self, "sessions", tuple(self.sessions))
        for earlier, later in zip(self.sessions, self.sessions[1:]):
            if later.timestamp < earlier.timestamp:
                raise InvalidInputError("session timestamps must be non-decreasing")

    def all_messages(self) -> tuple[Message, ...]:
        return tuple(msg for session in self.sessions for msg in session.messages)


@dataclass(frozen=True)
class Question:
    """An evaluation question with its reference answer."""

    id: str
    text: str
    golden_answer: str
    category: str | None = None
    user_id: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise InvalidInputError("question id must be non-empty")
        if not self.text:
            raise InvalidInputError(f"question {self.id!r} has empty text")
        if not self.golden_answer:
            raise InvalidInputError(f"question {self.id!r} has empty golden_answer")


# ---------------------------------------------------------------------------
# Token counting
# ---------------------------------------------------------------------------

Tokenizer = Callable[[str], int]
_TOKENIZERS: dict[str, Tokenizer] = {}


def register_tokenizer(name: str, fn: Tokenizer) -> None:
    """Register a tokenizer under ``name`` for use with count_tokens."""
    if not name:
        raise InvalidInputError("tokenizer name must be non-empty")
    _TOKENIZERS[name] = fn


def _approx_tokens(text: str) -> int:
    return math.ceil(len(text.encode("utf-8")) / 4)


register_tokenizer("approx", _approx_tokens)


def _try_register_o200k() -> bool:
    try:
        import tiktoken  # type: ignore
    except ImportError:
        return False
    enc = tiktoken.get_encoding("o200k_base")
    register_tokenizer("o200k_base", lambda text: len(enc.encode(text)))
    return True


def count_tokens(text: str, tokenizer: str = "approx") -> int:
    """Count tokens of ``text`` with a registered tokenizer.

    The built-in "approx" tokenizer is ceil(utf-8 bytes / 4); "o200k_base" is
    available when the optional tiktoken plugin is installed.
    """
    fn = _TOKENIZERS.get(tokenizer)
    if fn is None and tokenizer == "o200k_base" and _try_register_o200k():
        fn = _TOKENIZERS[tokenizer]
    if fn is None:
        raise ConfigurationError(f"unknown tokenizer {tokenizer!r}; registered: {sorted(_TOKENIZERS)}")
    n = fn(text)
    if n < 0:
        raise ConfigurationError(f"tokenizer {tokenizer!r} returned a negative count")
    return n


# ---------------------------------------------------------------------------
# Usage metering and pricing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UsageRecord:
    """Token usage of one or more exchanges; cached tokens are a subset of prompt."""

    prompt_tokens: int = 0
    cached_prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        for field_name in ("prompt_tokens", "cached_prompt_tokens", "completion_tokens"):
            value = getattr(self, field_name)
            if not isinstance(value, int) or value < 0:
                raise InvalidInputError(f"{field_name} must be a non-negative int")
        if self.cached_prompt_tokens > self.prompt_tokens:
            raise InvalidInputError("cached_prompt_tokens cannot exceed prompt_tokens")

    def __add__(self, other: "UsageRecord") -> "UsageRecord":
        return UsageRecord(
            self.prompt_tokens + other.prompt_tokens,
            self.cached_prompt_tokens + other.cached_prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class RoleRates:
    """Per-million-token prices for one model role."""

    input_per_mtok: Money
    cached_input_per_mtok: Money
    output_per_mtok: Money

    def __post_init__(self) -> None:
        for field_name in ("input_per_mtok", "cached_input_per_mtok", "output_per_mtok"):
            if getattr(self, field_name).micro_usd < 0:
                raise InvalidInputError(f"{field_name} must be non-negative")

    @classmethod
    def with_default_cache(cls, input_per_mtok: str, output_per_mtok: str) -> "RoleRates":
        """Build rates where the cached input price is the standard 10% of input."""
        inp = Money.from_dollars(input_per_mtok)
        return cls(inp, inp.scale_div(1, 10), Money.from_dollars(output_per_mtok))

    def to_dict(self) -> dict:
        return {
            "input_per_mtok": self.input_per_mtok.format(6),
            "cached_input_per_mtok": self.cached_input_per_mtok.format(6),
            "output_per_mtok": self.output_per_mtok.format(6),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoleRates":
        known = {"input_per_mtok", "cached_input_per_mtok", "output_per_mtok"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown rate field(s): {sorted(unknown)}")
        if "input_per_mtok" not in data or "output_per_mtok" not in data:
            raise ConfigurationError("rates need at least input_per_mtok and output_per_mtok")
        inp = Money.from_dollars(data["input_per_mtok"])
        cached = (
            Money.from_dollars(data["cached_input_per_mtok"])
            if "cached_input_per_mtok" in data
            else inp.scale_div(1, 10)
        )
        return cls(inp, cached, Money.from_dollars(data["output_per_mtok"]))


@dataclass(frozen=True)
class PricingSchedule:
    """Rates per model role; a role left unset errors only when actually used."""

    extractor: RoleRates | None = None
    reader: RoleRates | None = None
    long_context: RoleRates | None = None
    judge: RoleRates | None = None
    embedder: RoleRates | None = None

    def for_role(self, role: str) -> RoleRates:
        if role not in ROLES:
            raise InvalidInputError(f"unknown role {role!r}; expected one of {ROLES}")
        rates = getattr(self, role)
        if rates is None:
            raise ConfigurationError(f"pricing.{role} is not configured")
        return rates

    def to_dict(self) -> dict:
        return {role: getattr(self, role).to_dict() for role in ROLES if getattr(self, role) is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "PricingSchedule":
        unknown = set(data) - set(ROLES)
        if unknown:
            raise ConfigurationError(f"unknown pricing role(s): {sorted(unknown)}")
        return cls(**{role: RoleRates.from_dict(rates) for role, rates in data.items()})


_MINI_RATES = RoleRates.with_default_cache("0.25", "2.00")

DEFAULT_PRICING = PricingSchedule(
    extractor=RoleRates.with_default_cache("0.05", "0.40"),
    reader=_MINI_RATES,
    long_context=_MINI_RATES,
    judge=_MINI_RATES,
    embedder=RoleRates.with_default_cache("0.02", "0"),
)


def usage_cost(usage: UsageRecord, rates: RoleRates) -> Money:
    """Price a usage record: uncached input + cached input + completion.

    The exact rational sum is rounded half-even to a micro-dollar once.
    """
    uncached = usage.prompt_tokens - usage.cached_prompt_tokens
    numerator = (
        uncached * rates.input_per_mtok.micro_usd
        + usage.cached_prompt_tokens * rates.cached_input_per_mtok.micro_usd
        + usage.completion_tokens * rates.output_per_mtok.micro_usd
    )
    return Money(_div_half_even(numerator, TOKENS_PER_UNIT))


# ---------------------------------------------------------------------------
# Dataset statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatsSummary:
    """Five-number summary of token counts across a dataset."""

    n: int
    min: int
    max: int
    median: int
    mean: float


def _tokens_of(item: object, tokenizer: str) -> int:
    if isinstance(item, bool):
        raise InvalidInputError("cannot take token stats of a bool")
    if isinstance(item, int):
        if item < 0:
            raise InvalidInputError("token counts must be non-negative")
        return item
    if isinstance(item, Question):
        return count_tokens(item.text, tokenizer)
    if isinstance(item, Conversation):
        return sum(count_tokens(msg.content, tokenizer) for msg in item.all_messages())
    raise InvalidInputError(f"cannot take token stats of {type(item).__name__}")


def dataset_stats(items: Iterable[object], tokenizer: str = "approx") -> StatsSummary:
    """Token-count summary over conversations, questions, or raw counts.

    Question stats cover the raw question text; conversation stats cover message
    content only. The median of an even-sized dataset is the lower middle value;
    the mean is rounded to one decimal.
    """
    counts = sorted(_tokens_of(item, tokenizer) for item in items)
    if not counts:
        raise InvalidInputError("dataset is empty")
    n = len(counts)
    return StatsSummary(
        n=n,
        min=counts[0],
        max=counts[-1],
        median=counts[(n - 1) // 2],
        mean=round(sum(counts) / n, 1),
    )
