"""Run configuration: backends per role, pricing, index parameters.

Configs live in JSON. After the file is parsed, environment variables of the
form ``MEMCOST__section__key`` (double underscores as path separators) override
individual values, e.g. ``MEMCOST__index__rng_seed=7``. Values are parsed as
JSON when possible, otherwise taken as strings. Secrets never appear here;
backends name an environment variable that holds their key.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .core import DEFAULT_PRICING, ROLES, PricingSchedule
from .errors import ConfigurationError
from .llm_gateway import BackendConfig, LlmClient, UsageLedger
from .vector_index import DEFAULT_DIM, HnswParams

__all__ = ["IndexConfig", "RunConfig", "load_config", "default_run_config", "build_client"]

_ENV_PREFIX = "MEMCOST__"


@dataclass(frozen=True)
class IndexConfig:
    dim: int = DEFAULT_DIM
    m: int = 16
    ef_construction: int = 64
    ef_search: int = 64
    rng_seed: int = 0

    def hnsw_params(self) -> HnswParams:
        return HnswParams(
            m=self.m,
            ef_construction=self.ef_construction,
            ef_search=self.ef_search,
            rng_seed=self.rng_seed,
        )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "m": self.m,
            "ef_construction": self.ef_construction,
            "ef_search": self.ef_search,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IndexConfig":
        unknown = set(data) - {"dim", "m", "ef_construction", "ef_search", "rng_seed"}
        if unknown:
            raise ConfigurationError(f"unknown index field(s): {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    pricing: PricingSchedule = DEFAULT_PRICING
    index: IndexConfig = field(default_factory=IndexConfig)
    tokenizer: str = "approx"
    concurrency: int = 4

    def __post_init__(self) -> None:
        unknown = set(self.backends) - set(ROLES)
        if unknown:
            raise ConfigurationError(f"unknown backend role(s): {sorted(unknown)}")
        if self.concurrency < 1:
            raise ConfigurationError("concurrency must be at least 1")

    def backend_for(self, role: str) -> BackendConfig:
        if role not in self.backends:
            raise ConfigurationError(f"backends.{role} is not configured")
        return self.backends[role]

    def to_dict(self) -> dict:
        return {
            "backends": {role: cfg.to_dict() for role, cfg in sorted(self.backends.items())},
            "pricing": self.pricing.to_dict(),
            "index": self.index.to_dict(),
            "tokenizer": self.tokenizer,
            "concurrency": self.concurrency,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - {"backends", "pricing", "index", "tokenizer", "concurrency"}
        if unknown:
            raise ConfigurationError(f"unknown config field(s): {sorted(unknown)}")
        backends_data = data.get("backends", {})
        if not isinstance(backends_data, dict):
            raise ConfigurationError("backends must be an object")
        backends = {role: BackendConfig.from_dict(cfg) for role, cfg in backends_data.items()}
        pricing = PricingSchedule.from_dict(data["pricing"]) if "pricing" in data else DEFAULT_PRICING
        index = IndexConfig.from_dict(data.get("index", {}))
        return cls(
            backends=backends,
            pricing=pricing,
            index=index,
            tokenizer=data.get("tokenizer", "approx"),
            concurrency=data.get("concurrency", 4),
        )


def _apply_env_overrides(data: dict, environ: dict[str, str]) -> dict:
    for name, raw in sorted(environ.items()):
        if not name.startswith(_ENV_PREFIX):
            continue
        path = name[len(_ENV_PREFIX) :].split("__")
        if not all(path):
            raise ConfigurationError(f"malformed override variable {name}")
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node = data
        for key in path[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {name} descends into a non-object")
        node[path[-1]] = value
    return data


def load_config(path: str | Path, environ: dict[str, str] | None = None) -> RunConfig:
    """Parse a config file and apply environment overrides."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigurationError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    data = _apply_env_overrides(data, environ if environ is not None else dict(os.environ))
    return RunConfig.from_dict(data)


def default_run_config() -> RunConfig:
    """All-mock offline configuration with default pricing and index settings."""
    return RunConfig(
        backends={
            "extractor": BackendConfig(model_name="mock-extractor", base_url="mock://extract", reasoning_effort="low"),
            "reader": BackendConfig(model_name="mock-reader", base_url="mock://answer", reasoning_effort="medium"),
            "long_context": BackendConfig(model_name="mock-reader", base_url="mock://answer", reasoning_effort="low"),
            "judge": BackendConfig(model_name="mock-judge", base_url="mock://judge", reasoning_effort="high"),
            "embedder": BackendConfig(model_name="mock-embedder", base_url="mock://embed"),
        },
    )


def build_client(config: RunConfig, role: str, ledger: UsageLedger | None = None) -> LlmClient:
    """Construct the client for one role, wired to a shared ledger."""
    return LlmClient(
        config.backend_for(role),
        role=role,
        ledger=ledger,
        max_concurrency=config.concurrency,
    )
