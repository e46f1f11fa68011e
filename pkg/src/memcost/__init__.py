"""Long-term conversational memory with an inference-cost model.

The package has two halves that meet in the CLI: a memory engine (segment
conversations, extract facts with an LLM, embed them, retrieve via an HNSW
index) and a cost model (cumulative memory-system vs long-context cost under
prompt caching, break-even turn counts, sensitivity tables, heatmaps).
"""
from __future__ import annotations

from .core import (
    DEFAULT_PRICING,
    ROLES,
    Conversation,
    Message,
    Money,
    PricingSchedule,
    Question,
    RoleRates,
    Session,
    StatsSummary,
    UsageRecord,
    count_tokens,
    dataset_stats,
    register_tokenizer,
    usage_cost,
)
from .cost_model import (
    BreakEvenResult,
    CostCurve,
    CostParams,
    CostPoint,
    GridRange,
    HeatmapGrid,
    SensitivityRow,
    break_even,
    break_even_closed_form,
    cost_curve,
    default_cost_params,
    heatmap_grid,
    lc_cached_turn,
    lc_cost,
    lc_first_turn,
    mem_cost,
    sensitivity_table,
    write_cost,
)
from .config import IndexConfig, RunConfig, build_client, default_run_config, load_config
from .dataset import Dataset, dataset_to_dict, load_dataset
from .errors import (
    BackendError,
    ConfigurationError,
    DuplicateRecordError,
    ExtractionError,
    InvalidInputError,
    MemcostError,
    TransientBackendError,
)
from .eval_harness import (
    AnswerTrace,
    EvalResult,
    JudgeVerdict,
    QuestionOutcome,
    accuracy,
    answer_long_context,
    answer_with_memory,
    judge_consensus,
    judge_once,
    run_eval,
    serialize_conversation,
    write_results_jsonl,
    write_summary_json,
)
from .llm_gateway import (
    BackendConfig,
    ChatExchange,
    LedgerEntry,
    LlmClient,
    MockTransport,
    RetryPolicy,
    UsageLedger,
    mock_embedding,
)
from .memory_engine import (
    MemoryRecord,
    MemoryStore,
    Segment,
    WriteReceipt,
    conversation_fingerprint,
    extract_facts,
    format_message_line,
    ingest_conversation,
    parse_fact_reply,
    segment_conversation,
    serialize_segment,
)
from .prompts import PROMPTS_VERSION, load_prompt
from .vector_index import (
    DEFAULT_DIM,
    HnswIndex,
    HnswParams,
    SearchHit,
    cosine_similarity,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core
    "Money",
    "Message",
    "Session",
    "Conversation",
    "Question",
    "UsageRecord",
    "RoleRates",
    "PricingSchedule",
    "DEFAULT_PRICING",
    "ROLES",
    "StatsSummary",
    "count_tokens",
    "register_tokenizer",
    "usage_cost",
    "dataset_stats",
    # errors
    "MemcostError",
    "InvalidInputError",
    "ConfigurationError",
    "DuplicateRecordError",
    "BackendError",
    "TransientBackendError",
    "ExtractionError",
    # vector index
    "DEFAULT_DIM",
    "HnswParams",
    "HnswIndex",
    "SearchHit",
    "cosine_similarity",
    # cost model
    "CostParams",
    "CostPoint",
    "CostCurve",
    "BreakEvenResult",
    "SensitivityRow",
    "GridRange",
    "HeatmapGrid",
    "default_cost_params",
    "lc_first_turn",
    "lc_cached_turn",
    "lc_cost",
    "write_cost",
    "mem_cost",
    "cost_curve",
    "break_even",
    "break_even_closed_form",
    "sensitivity_table",
    "heatmap_grid",
    # gateway
    "BackendConfig",
    "RetryPolicy",
    "LlmClient",
    "MockTransport",
    "UsageLedger",
    "LedgerEntry",
    "ChatExchange",
    "mock_embedding",
    # memory engine
    "Segment",
    "MemoryRecord",
    "MemoryStore",
    "WriteReceipt",
    "segment_conversation",
    "serialize_segment",
    "format_message_line",
    "parse_fact_reply",
    "extract_facts",
    "conversation_fingerprint",
    "ingest_conversation",
    # dataset
    "Dataset",
    "load_dataset",
    "dataset_to_dict",
    # eval harness
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
    # config
    "RunConfig",
    "IndexConfig",
    "load_config",
    "default_run_config",
    "build_client",
    # prompts
    "PROMPTS_VERSION",
    "load_prompt",
]
