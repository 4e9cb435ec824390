"""Prompt templates for scheduling, timed interrupts, and forced termination.

Placeholders are replaced literally ({deadline}, {prompt}, {elapsed},
{remaining}); any other braces in user text pass through untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

SCHEDULING_TEMPLATE = (
    "Please generate an answer to the following question in {deadline} tokens: {prompt}. "
    "Messages of remaining time will be given as messages enclosed in <System></System> tags. "
    "Please provide you answer as **Answer:** or **Final Answer:** when complete."
)

INTERRUPT_TEMPLATE = (
    "I have used {elapsed} tokens, and I have {remaining} tokens left to answer. To continue:"
)

TERMINATOR_TEMPLATE = (
    "I'm out of time, I need to provide my final answer now, "
    "considering what I have computed so far. **Final Answer:**"
)

SYSTEM_TAG_OPEN = "<System>"
SYSTEM_TAG_CLOSE = "</System>"


@dataclass(frozen=True)
class PromptTemplates:
    scheduling: str = SCHEDULING_TEMPLATE
    interrupt: str = INTERRUPT_TEMPLATE
    terminator: str = TERMINATOR_TEMPLATE

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplates":
        """Load templates from a JSON file with scheduling/interrupt/terminator keys."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(data) - {"scheduling", "interrupt", "terminator"}
        if unknown:
            raise ValueError(f"unknown template keys: {sorted(unknown)}")
        return cls(
            scheduling=data.get("scheduling", SCHEDULING_TEMPLATE),
            interrupt=data.get("interrupt", INTERRUPT_TEMPLATE),
            terminator=data.get("terminator", TERMINATOR_TEMPLATE),
        )


DEFAULT_TEMPLATES = PromptTemplates()
