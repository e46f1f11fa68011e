"""Bundled prompt resources.

Prompt text is data, not code: each template ships as a .txt resource so a
deployment can pin, diff, and review the exact wording. PROMPTS_VERSION bumps
whenever any bundled text changes.
"""
from __future__ import annotations

from importlib import resources

__all__ = ["PROMPTS_VERSION", "load_prompt"]

PROMPTS_VERSION = 1

_NAMES = (
    "fact_extraction",
    "judge_system",
    "judge_user",
    "memory_answer",
    "long_context_answer",
)


def load_prompt(name: str) -> str:
    """Return the bundled prompt text registered under ``name``."""
    if name not in _NAMES:
        raise KeyError(f"unknown prompt {name!r}; bundled: {_NAMES}")
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
