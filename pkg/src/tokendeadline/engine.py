"""Deadline-controlled generation episodes.

An episode moves through three phases. Scheduling builds the deadline-aware
prompt. Running decodes in segments capped at the interrupt interval
(min(250, deadline/2)); at every segment boundary the full model output is
checked for a final-answer marker, and if none is found yet a system-tagged
note of elapsed/remaining tokens is injected before decoding resumes.
Terminating fires once the deadline is reached without an answer: the
out-of-time message is appended and one tail completion, hard-capped at
forced_tail_cap tokens, is extracted with the same marker check.

Injection is realized as segmented decoding against a stateless chat
endpoint: each segment is a capped completion request and the interrupt
message joins the conversation context, never the spend.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

from .adapters import STOP_NATURAL, STOP_TRANSPORT, ModelHandle
from .errors import EpisodeError
from .records import (
    SEGMENT_INTERRUPT,
    SEGMENT_MODEL,
    SEGMENT_TERMINATOR,
    EpisodeResult,
    Question,
    TranscriptSegment,
)
from .templates import DEFAULT_TEMPLATES, SYSTEM_TAG_CLOSE, SYSTEM_TAG_OPEN, PromptTemplates

DEFAULT_MARKERS = ("**Final Answer:**", "**Answer:**")
DEFAULT_FORCED_TAIL_CAP = 64
DEFAULT_SAFETY_CAP = 16384

MODE_TERMINATOR = "terminator"
MODE_NAIVE = "naive"
MODE_BASE = "base"


def interrupt_interval(deadline: int) -> int:
    """Tokens between injected reminders: min(250, floor(deadline / 2))."""
    if deadline < 2:
        raise ValueError(f"deadline must be >= 2 for interrupts, got {deadline}")
    return min(250, deadline // 2)


def build_scheduling_prompt(
    prompt: str, deadline: int, templates: PromptTemplates = DEFAULT_TEMPLATES
) -> str:
    """Deadline-aware opening prompt; only the two placeholders are touched."""
    if deadline <= 0:
        raise ValueError("deadline must be positive")
    return templates.scheduling.replace("{deadline}", str(deadline)).replace("{prompt}", prompt)


def build_interrupt_message(
    elapsed: int, remaining: int, templates: PromptTemplates = DEFAULT_TEMPLATES
) -> str:
    """Elapsed/remaining reminder wrapped in the system-tag envelope."""
    if elapsed < 0 or remaining < 0:
        raise ValueError("elapsed and remaining must be >= 0")
    body = templates.interrupt.replace("{elapsed}", str(elapsed)).replace(
        "{remaining}", str(remaining)
    )
    return f"{SYSTEM_TAG_OPEN}{body}{SYSTEM_TAG_CLOSE}"


def _marker_regex(markers: Sequence[str]) -> re.Pattern:
    return re.compile("|".join(re.escape(m) for m in markers))


def detect_answer(text: str, markers: Sequence[str] = DEFAULT_MARKERS) -> str | None:
    """Answer span after the last marker occurrence, None when absent.

    Reasoning models restate tentative answers, so the final marker wins. The
    span is the remainder of the marker's line (falling through to the next
    non-empty line when the marker ends its line), which keeps the result
    stable when rambling follows the answer.
    """
    last = None
    for match in _marker_regex(markers).finditer(text):
        last = match
    if last is None:
        return None
    rest = text[last.end() :]
    for line in rest.split("\n"):
        line = line.strip()
        if line:
            return line
    return None


@dataclass(frozen=True)
class EpisodePolicy:
    """Per-episode control parameters; use the mode-named constructors."""

    mode: str
    deadline: int | None = None
    forced_tail_cap: int = DEFAULT_FORCED_TAIL_CAP
    markers: tuple[str, ...] = DEFAULT_MARKERS
    templates: PromptTemplates = DEFAULT_TEMPLATES
    safety_cap: int = DEFAULT_SAFETY_CAP

    def __post_init__(self):
        if self.mode not in (MODE_TERMINATOR, MODE_NAIVE, MODE_BASE):
            raise ValueError(f"unknown episode mode: {self.mode!r}")
        if self.forced_tail_cap <= 0:
            raise ValueError("forced_tail_cap must be positive")
        if self.safety_cap <= 0:
            raise ValueError("safety_cap must be positive")
        if self.mode == MODE_TERMINATOR:
            if self.deadline is None or self.deadline < 2:
                raise ValueError("terminator mode needs a deadline >= 2")
        elif self.mode == MODE_NAIVE:
            if self.deadline is None or self.deadline < 1:
                raise ValueError("naive mode needs a positive deadline")
        elif self.deadline is not None:
            raise ValueError("base mode ignores deadlines; leave it unset")

    @classmethod
    def terminator(cls, deadline: int, **kwargs) -> "EpisodePolicy":
        return cls(mode=MODE_TERMINATOR, deadline=deadline, **kwargs)

    @classmethod
    def naive(cls, deadline: int, **kwargs) -> "EpisodePolicy":
        return cls(mode=MODE_NAIVE, deadline=deadline, **kwargs)

    @classmethod
    def base(cls, **kwargs) -> "EpisodePolicy":
        return cls(mode=MODE_BASE, **kwargs)

    @property
    def interrupt_interval(self) -> int:
        if self.mode != MODE_TERMINATOR:
            raise ValueError("only terminator mode has an interrupt interval")
        return interrupt_interval(self.deadline)


PHASES = ("scheduled", "running", "terminating", "done")


@dataclass
class EpisodeState:
    """Mutable episode bookkeeping: phase, elapsed tokens, conversation so far.

    Phases only move forward and elapsed never decreases.
    """

    phase: str = "scheduled"
    elapsed: int = 0
    context: list = field(default_factory=list)

    def advance(self, phase: str) -> None:
        if PHASES.index(phase) < PHASES.index(self.phase):
            raise ValueError(f"episode cannot move back from {self.phase} to {phase}")
        self.phase = phase

    def spend(self, tokens: int) -> None:
        if tokens < 0:
            raise ValueError("elapsed tokens never decrease")
        self.elapsed += tokens


@dataclass(frozen=True)
class ForcedTail:
    """Outcome of the forced-termination completion."""

    answer: str | None
    unparsed: bool
    segment: TranscriptSegment


def force_terminate(
    model: ModelHandle,
    context: list,
    policy: EpisodePolicy,
    seed: int | None = None,
) -> ForcedTail:
    """Append the out-of-time message and extract from one capped completion.

    When the tail carries no marker the raw completion is returned as a
    best-effort answer flagged unparsed.
    """
    context.append({"role": "user", "content": policy.templates.terminator})
    gen = model.generate(context, cap=policy.forced_tail_cap, seed=seed)
    if gen.stop_reason == STOP_TRANSPORT:
        raise EpisodeError("transport failure during forced termination")
    context.append({"role": "assistant", "content": gen.text})
    answer = detect_answer(gen.text, policy.markers)
    unparsed = answer is None
    if unparsed:
        answer = gen.text if gen.text else None
    return ForcedTail(
        answer=answer,
        unparsed=unparsed,
        segment=TranscriptSegment(kind=SEGMENT_MODEL, text=gen.text, tokens=gen.tokens_used),
    )


def _episode_error(message: str, transcript: list[TranscriptSegment]) -> EpisodeError:
    return EpisodeError(message, transcript=tuple(transcript))


def run_episode(
    model: ModelHandle,
    question: "Question | str",
    policy: EpisodePolicy,
    seed: int | None = None,
) -> EpisodeResult:
    """Run one controlled generation episode and return its outcome.

    Detection is checked before injection and before forcing at every
    boundary, so an answer landing exactly on the deadline is honored.
    """
    prompt = question.prompt if isinstance(question, Question) else str(question)
    if policy.mode == MODE_BASE:
        return _run_base(model, prompt, policy, seed)
    if policy.mode == MODE_NAIVE:
        return _run_naive(model, prompt, policy, seed)
    return _run_terminator(model, prompt, policy, seed)


def _run_base(model, prompt, policy, seed) -> EpisodeResult:
    gen = model.generate([{"role": "user", "content": prompt}], cap=policy.safety_cap, seed=seed)
    if gen.stop_reason == STOP_TRANSPORT:
        raise _episode_error("transport failure in base episode", [])
    segment = TranscriptSegment(kind=SEGMENT_MODEL, text=gen.text, tokens=gen.tokens_used)
    return EpisodeResult(
        answer=detect_answer(gen.text, policy.markers),
        spend=gen.tokens_used,
        interrupts=0,
        forced=False,
        transcript=(segment,),
        deadline=None,
        truncated=gen.stop_reason != STOP_NATURAL,
    )


def _run_naive(model, prompt, policy, seed) -> EpisodeResult:
    context = [{"role": "user", "content": build_scheduling_prompt(prompt, policy.deadline, policy.templates)}]
    transcript: list[TranscriptSegment] = []
    gen = model.generate(context, cap=policy.deadline, seed=seed)
    if gen.stop_reason == STOP_TRANSPORT:
        raise _episode_error("transport failure in naive episode", transcript)
    context.append({"role": "assistant", "content": gen.text})
    transcript.append(TranscriptSegment(kind=SEGMENT_MODEL, text=gen.text, tokens=gen.tokens_used))
    spend = gen.tokens_used
    answer = detect_answer(gen.text, policy.markers)
    if answer is not None:
        return EpisodeResult(
            answer=answer, spend=spend, interrupts=0, forced=False,
            transcript=tuple(transcript), deadline=policy.deadline,
        )
    transcript.append(
        TranscriptSegment(
            kind=SEGMENT_TERMINATOR,
            text=policy.templates.terminator,
            tokens=model.count_tokens(policy.templates.terminator),
        )
    )
    try:
        tail = force_terminate(model, context, policy, seed)
    except EpisodeError as exc:
        raise _episode_error(str(exc), transcript) from exc
    transcript.append(tail.segment)
    return EpisodeResult(
        answer=tail.answer,
        spend=spend + tail.segment.tokens,
        interrupts=0,
        forced=True,
        transcript=tuple(transcript),
        deadline=policy.deadline,
        answer_unparsed=tail.unparsed,
    )


def _run_terminator(model, prompt, policy, seed) -> EpisodeResult:
    deadline = policy.deadline
    interval = policy.interrupt_interval
    state = EpisodeState()
    state.context.append(
        {"role": "user", "content": build_scheduling_prompt(prompt, deadline, policy.templates)}
    )
    state.advance("running")
    transcript: list[TranscriptSegment] = []
    model_text = ""
    interrupts = 0
    while True:
        cap = max(1, min(interval, deadline - state.elapsed))
        gen = model.generate(state.context, cap=cap, seed=seed)
        if gen.stop_reason == STOP_TRANSPORT:
            raise _episode_error(
                f"transport failure after {state.elapsed} tokens", transcript
            )
        state.context.append({"role": "assistant", "content": gen.text})
        transcript.append(TranscriptSegment(kind=SEGMENT_MODEL, text=gen.text, tokens=gen.tokens_used))
        model_text += gen.text
        state.spend(gen.tokens_used)
        answer = detect_answer(model_text, policy.markers)
        if answer is not None:
            state.advance("done")
            return EpisodeResult(
                answer=answer, spend=state.elapsed, interrupts=interrupts, forced=False,
                transcript=tuple(transcript), deadline=deadline,
            )
        if state.elapsed >= deadline or gen.stop_reason == STOP_NATURAL or gen.tokens_used == 0:
            state.advance("terminating")
            transcript.append(
                TranscriptSegment(
                    kind=SEGMENT_TERMINATOR,
                    text=policy.templates.terminator,
                    tokens=model.count_tokens(policy.templates.terminator),
                )
            )
            try:
                tail = force_terminate(model, state.context, policy, seed)
            except EpisodeError as exc:
                raise _episode_error(str(exc), transcript) from exc
            transcript.append(tail.segment)
            state.spend(tail.segment.tokens)
            state.advance("done")
            return EpisodeResult(
                answer=tail.answer,
                spend=state.elapsed,
                interrupts=interrupts,
                forced=True,
                transcript=tuple(transcript),
                deadline=deadline,
                answer_unparsed=tail.unparsed,
            )
        message = build_interrupt_message(state.elapsed, deadline - state.elapsed, policy.templates)
        state.context.append({"role": "user", "content": message})
        transcript.append(
            TranscriptSegment(
                kind=SEGMENT_INTERRUPT, text=message, tokens=model.count_tokens(message)
            )
        )
        interrupts += 1
