"""Tests for shared domain types.

Covers: Money arithmetic and half-even rounding, dialogue structure
validation, token counting, usage records, pricing schedules, usage_cost
against a Decimal oracle, and dataset statistics.
"""
from __future__ import annotations

from datetime import timedelta
from decimal import ROUND_HALF_EVEN, Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from memcost.core import (
    DEFAULT_PRICING,
    MICRO_PER_DOLLAR,
    Conversation,
    Message,
    Money,
    PricingSchedule,
    Question,
    RoleRates,
    Session,
    UsageRecord,
    _div_half_even,
    count_tokens,
    dataset_stats,
    register_tokenizer,
    usage_cost,
)
from memcost.errors import ConfigurationError, InvalidInputError

from .conftest import make_message, make_session, ts

# ---------------------------------------------------------------------------
# Half-even division
# ---------------------------------------------------------------------------


class TestDivHalfEven:
    """Integer division with banker's rounding."""

    @pytest.mark.parametrize(
        "numerator, denominator, expected",
        [
            (10, 4, 2),  # 2.5 -> even 2
            (14, 4, 4),  # 3.5 -> even 4
            (-10, 4, -2),  # -2.5 -> even -2
            (-14, 4, -4),  # -3.5 -> even -4
            (9, 4, 2),  # 2.25 -> 2
            (11, 4, 3),  # 2.75 -> 3
            (7, 7, 1),
            (0, 5, 0),
        ],
    )
    def test_matches_decimal(self, numerator: int, denominator: int, expected: int) -> None:
        assert _div_half_even(numerator, denominator) == expected

    def test_rejects_nonpositive_denominator(self) -> None:
        with pytest.raises(InvalidInputError):
            _div_half_even(1, 0)
        with pytest.raises(InvalidInputError):
            _div_half_even(1, -3)

    @given(st.integers(-10**12, 10**12), st.integers(1, 10**9))
    def test_agrees_with_decimal_oracle(self, numerator: int, denominator: int) -> None:
        """Half-even integer division equals Decimal quantize with ROUND_HALF_EVEN."""
        oracle = (Decimal(numerator) / Decimal(denominator)).quantize(
            Decimal(1), rounding=ROUND_HALF_EVEN
        )
        assert _div_half_even(numerator, denominator) == int(oracle)


# ---------------------------------------------------------------------------
# Money
# ---------------------------------------------------------------------------


class TestMoney:
    """Exact micro-dollar amounts."""

    def test_from_dollars_parses_strings_exactly(self) -> None:
        assert Money.from_dollars("0.25").micro_usd == 250_000
        assert Money.from_dollars("0.00106").micro_usd == 1_060
        assert Money.from_dollars("2").micro_usd == 2_000_000

    def test_from_dollars_half_even_below_micro(self) -> None:
        assert Money.from_dollars("0.0000005").micro_usd == 0
        assert Money.from_dollars("0.0000015").micro_usd == 2

    def test_from_dollars_rejects_garbage(self) -> None:
        with pytest.raises(InvalidInputError):
            Money.from_dollars("three dollars")

    def test_requires_int(self) -> None:
        with pytest.raises(InvalidInputError):
            Money(1.5)  # type: ignore[arg-type]

    def test_arithmetic(self) -> None:
        a, b = Money(1_500), Money(400)
        assert (a + b).micro_usd == 1_900
        assert (a - b).micro_usd == 1_100
        assert (-b).micro_usd == -400
        assert abs(Money(-7)).micro_usd == 7
        assert (a * 3).micro_usd == 4_500
        assert (3 * a).micro_usd == 4_500

    def test_int_only_multiplication(self) -> None:
        with pytest.raises(InvalidInputError):
            Money(100) * 1.5  # type: ignore[operator]

    def test_ordering(self) -> None:
        assert Money(1) < Money(2)
        assert max(Money(5), Money(3)) == Money(5)

    def test_scale_div_rounds_half_even(self) -> None:
        assert Money(5).scale_div(1, 2).micro_usd == 2
        assert Money(7).scale_div(1, 2).micro_usd == 4

    def test_format_places(self) -> None:
        m = Money.from_dollars("0.044938")
        assert m.format(4) == "0.0449"
        assert m.format(6) == "0.044938"
        assert m.format(0) == "0"
        assert str(m) == "$0.044938"

    def test_format_rejects_out_of_range_places(self) -> None:
        with pytest.raises(InvalidInputError):
            Money(1).format(7)
        with pytest.raises(InvalidInputError):
            Money(1).format(-1)

    @given(st.integers(-10**12, 10**12))
    def test_dollars_round_trip(self, micro: int) -> None:
        """from_dollars(dollars()) is the identity on micro-dollar amounts."""
        m = Money(micro)
        assert Money.from_dollars(m.dollars()) == m

    @given(st.lists(st.integers(-10**9, 10**9), min_size=1, max_size=20))
    def test_sum_is_order_independent(self, micros: list[int]) -> None:
        """Integer representation makes summation associative."""
        amounts = [Money(m) for m in micros]
        forward = sum(amounts, Money(0))
        backward = sum(reversed(amounts), Money(0))
        assert forward == backward == Money(sum(micros))


# ---------------------------------------------------------------------------
# Dialogue structures
# ---------------------------------------------------------------------------


class TestDialogueStructures:
    """Message, Session, Conversation, Question validation."""

    def test_message_roles(self) -> None:
        assert make_message("hi").role == "user"
        with pytest.raises(InvalidInputError):
            Message(role="system", content="x", timestamp=ts())

    def test_message_content_non_empty(self) -> None:
        with pytest.raises(InvalidInputError):
            Message(role="user", content="", timestamp=ts())

    def test_message_timestamp_type(self) -> None:
        with pytest.raises(InvalidInputError):
            Message(role="user", content="x", timestamp="2025-03-01")  # type: ignore[arg-type]

    def test_session_requires_messages(self) -> None:
        with pytest.raises(InvalidInputError):
            Session(id="s1", timestamp=ts(), messages=())

    def test_session_timestamps_non_decreasing(self) -> None:
        early = make_message("a", minute=5)
        late = make_message("b", minute=1)
        with pytest.raises(InvalidInputError):
            Session(id="s1", timestamp=ts(), messages=(early, late))

    def test_session_allows_equal_timestamps(self) -> None:
        m = make_message("a")
        session = Session(id="s1", timestamp=ts(), messages=(m, make_message("b")))
        assert len(session.messages) == 2

    def test_conversation_session_order(self) -> None:
        s1 = make_session("s1", "a", start_minute=10)
        s2 = make_session("s2", "b", start_minute=0)
        with pytest.raises(InvalidInputError):
            Conversation(user_id="u1", sessions=(s1, s2))

    def test_all_messages_flattens_in_order(self) -> None:
        conv = Conversation(
            user_id="u1",
            sessions=(make_session("s1", "a", "b", start_minute=0), make_session("s2", "c", start_minute=10)),
        )
        assert [m.content for m in conv.all_messages()] == ["a", "b", "c"]

    def test_question_requires_golden_answer(self) -> None:
        with pytest.raises(InvalidInputError):
            Question(id="q1", text="what?", golden_answer="")

    def test_message_timestamp_timezone_mix_is_fine_within_utc(self) -> None:
        base = make_message("a")
        later = Message(role="user", content="b", timestamp=base.timestamp + timedelta(seconds=1))
        Session(id="s", timestamp=base.timestamp, messages=(base, later))


# ---------------------------------------------------------------------------
# Token counting
# ---------------------------------------------------------------------------


class TestCountTokens:
    """Registered tokenizers and the approx default."""

    def test_approx_is_ceil_bytes_over_four(self) -> None:
        assert count_tokens("") == 0
        assert count_tokens("abcd") == 1
        assert count_tokens("abcde") == 2
        assert count_tokens("é" * 4) == 2  # two bytes each in utf-8

    def test_unknown_tokenizer(self) -> None:
        with pytest.raises(ConfigurationError):
            count_tokens("x", "imaginary")

    def test_register_custom(self) -> None:
        register_tokenizer("words", lambda text: len(text.split()))
        assert count_tokens("one two three", "words") == 3

    def test_register_rejects_empty_name(self) -> None:
        with pytest.raises(InvalidInputError):
            register_tokenizer("", len)

    def test_negative_count_rejected(self) -> None:
        register_tokenizer("broken", lambda text: -1)
        with pytest.raises(ConfigurationError):
            count_tokens("x", "broken")

    @given(st.text(max_size=300))
    def test_approx_bound(self, text: str) -> None:
        """The approximation is exactly ceil(utf-8 bytes / 4)."""
        expected = -(-len(text.encode("utf-8")) // 4)
        assert count_tokens(text) == expected


# ---------------------------------------------------------------------------
# Usage records and pricing
# ---------------------------------------------------------------------------


class TestUsageRecord:
    """Token usage bookkeeping."""

    def test_cached_subset_of_prompt(self) -> None:
        with pytest.raises(InvalidInputError):
            UsageRecord(prompt_tokens=10, cached_prompt_tokens=11)

    def test_negative_rejected(self) -> None:
        with pytest.raises(InvalidInputError):
            UsageRecord(prompt_tokens=-1)

    def test_addition(self) -> None:
        total = UsageRecord(10, 4, 2) + UsageRecord(5, 1, 3)
        assert total == UsageRecord(15, 5, 5)
        assert total.total_tokens == 20


class TestPricing:
    """RoleRates and PricingSchedule."""

    def test_with_default_cache_is_ten_percent(self) -> None:
        rates = RoleRates.with_default_cache("0.25", "2.00")
        assert rates.cached_input_per_mtok == Money.from_dollars("0.025")

    def test_negative_rate_rejected(self) -> None:
        with pytest.raises(InvalidInputError):
            RoleRates(Money(-1), Money(0), Money(0))

    def test_for_role_unset(self) -> None:
        schedule = PricingSchedule(reader=RoleRates.with_default_cache("0.25", "2.00"))
        assert schedule.for_role("reader").input_per_mtok == Money.from_dollars("0.25")
        with pytest.raises(ConfigurationError):
            schedule.for_role("judge")

    def test_for_role_unknown(self) -> None:
        with pytest.raises(InvalidInputError):
            DEFAULT_PRICING.for_role("oracle")

    def test_round_trip(self) -> None:
        assert PricingSchedule.from_dict(DEFAULT_PRICING.to_dict()) == DEFAULT_PRICING

    def test_from_dict_rejects_unknown_role(self) -> None:
        with pytest.raises(ConfigurationError):
            PricingSchedule.from_dict({"wizard": {"input_per_mtok": "1", "output_per_mtok": "1"}})

    def test_rates_from_dict_defaults_cache(self) -> None:
        rates = RoleRates.from_dict({"input_per_mtok": "0.50", "output_per_mtok": "1"})
        assert rates.cached_input_per_mtok == Money.from_dollars("0.05")

    def test_default_pricing_covers_all_roles(self) -> None:
        for role in ("extractor", "reader", "long_context", "judge", "embedder"):
            DEFAULT_PRICING.for_role(role)


class TestUsageCost:
    """Pricing a usage record."""

    def test_known_value(self) -> None:
        rates = RoleRates.with_default_cache("0.25", "2.00")
        usage = UsageRecord(prompt_tokens=101_601, cached_prompt_tokens=0, completion_tokens=0)
        assert usage_cost(usage, rates) == Money(25_400)  # 101601 * 0.25 / 1e6 dollars

    def test_cached_tokens_priced_lower(self) -> None:
        rates = RoleRates.with_default_cache("0.25", "2.00")
        hot = usage_cost(UsageRecord(prompt_tokens=1_000_000), rates)
        cold = usage_cost(UsageRecord(prompt_tokens=1_000_000, cached_prompt_tokens=1_000_000), rates)
        assert hot == Money.from_dollars("0.25")
        assert cold == Money.from_dollars("0.025")

    @given(
        st.integers(0, 10**7),
        st.integers(0, 10**7),
        st.integers(0, 10**7),
        st.integers(0, 10_000_000),
        st.integers(0, 1_000_000),
        st.integers(0, 50_000_000),
    )
    def test_decimal_oracle(
        self, prompt: int, cached: int, completion: int, in_rate: int, cache_rate: int, out_rate: int
    ) -> None:
        """usage_cost equals the exact Decimal computation rounded half-even."""
        cached = min(cached, prompt)
        usage = UsageRecord(prompt, cached, completion)
        rates = RoleRates(Money(in_rate), Money(cache_rate), Money(out_rate))
        exact = (
            Decimal((prompt - cached) * in_rate + cached * cache_rate + completion * out_rate)
            / 1_000_000
        ).quantize(Decimal(1), rounding=ROUND_HALF_EVEN)
        assert usage_cost(usage, rates) == Money(int(exact))

    @given(st.integers(0, 10**6), st.integers(0, 10**6))
    def test_more_uncached_prompt_never_cheaper(self, small: int, extra: int) -> None:
        """Adding uncached prompt tokens never lowers the price."""
        rates = RoleRates.with_default_cache("0.25", "2.00")
        a = usage_cost(UsageRecord(prompt_tokens=small), rates)
        b = usage_cost(UsageRecord(prompt_tokens=small + extra), rates)
        assert b >= a


# ---------------------------------------------------------------------------
# Dataset statistics
# ---------------------------------------------------------------------------


class TestDatasetStats:
    """Five-number token summaries."""

    def test_raw_ints(self) -> None:
        stats = dataset_stats([4, 1, 3, 2])
        assert (stats.n, stats.min, stats.max) == (4, 1, 4)
        assert stats.median == 2  # lower middle of even-sized data
        assert stats.mean == 2.5

    def test_median_odd(self) -> None:
        assert dataset_stats([5, 1, 9]).median == 5

    def test_mean_rounded_to_one_decimal(self) -> None:
        assert dataset_stats([1, 1, 2]).mean == 1.3

    def test_question_uses_text(self) -> None:
        q = Question(id="q", text="abcd" * 3, golden_answer="x")
        assert dataset_stats([q]).min == 3

    def test_conversation_sums_message_content(self) -> None:
        conv = Conversation(user_id="u", sessions=(make_session("s", "abcd", "efgh"),))
        assert dataset_stats([conv]).min == 2

    def test_empty_rejected(self) -> None:
        with pytest.raises(InvalidInputError):
            dataset_stats([])

    def test_bool_rejected(self) -> None:
        with pytest.raises(InvalidInputError):
            dataset_stats([True])

    def test_negative_int_rejected(self) -> None:
        with pytest.raises(InvalidInputError):
            dataset_stats([-3])

    @given(st.lists(st.integers(0, 10**6), min_size=1, max_size=50))
    def test_summary_matches_manual(self, counts: list[int]) -> None:
        """Summary fields agree with direct computation on the sorted data."""
        stats = dataset_stats(counts)
        ordered = sorted(counts)
        assert stats.n == len(ordered)
        assert stats.min == ordered[0]
        assert stats.max == ordered[-1]
        assert stats.median == ordered[(len(ordered) - 1) // 2]
        assert stats.mean == round(sum(ordered) / len(ordered), 1)
