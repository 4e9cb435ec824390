"""Correctness scoring: normalized math matching and rubric judging.

Math answers are trimmed, case-folded, stripped of math-markup wrappers, and
whitespace-collapsed before a numeric-equivalence comparison (relative
tolerance 1e-9) or, failing a parse, a string comparison. Rubric answers are
checked one requirement at a time through a judge model; the score is the
fraction of yes verdicts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .adapters import STOP_TRANSPORT, ModelHandle
from .errors import GradingError, TransportError
from .records import Question

NUMERIC_REL_TOL = Fraction(1, 10**9)

JUDGE_TEMPLATE = (
    "You are checking whether a response satisfies one requirement.\n"
    "Requirement: {requirement}\n"
    "Response:\n{answer}\n"
    "Does the response satisfy the requirement? Reply with a single word, yes or no."
)

JUDGING_TAIL_CHARS = 2000


@dataclass(frozen=True)
class GradeResult:
    """Score in [0,1] plus per-requirement verdicts or a normalization trace."""

    score: float
    detail: dict

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")


_WRAPPERS = (
    re.compile(r"\\boxed\{(.*)\}$"),
    re.compile(r"\$\$(.*)\$\$$"),
    re.compile(r"\$(.*)\$$"),
    re.compile(r"\\\((.*)\\\)$"),
    re.compile(r"\\\[(.*)\\\]$"),
)


def normalize_math_answer(text: str) -> tuple[str, list[str]]:
    """Canonical form plus the trace of applied steps."""
    trace: list[str] = []
    value = text.strip()
    if value != text:
        trace.append("trim")
    folded = value.casefold()
    if folded != value:
        trace.append("casefold")
    value = folded
    changed = True
    while changed:
        changed = False
        for pattern in _WRAPPERS:
            m = pattern.match(value)
            if m and m.group(0) == value:
                value = m.group(1).strip()
                trace.append("unwrap")
                changed = True
    collapsed = re.sub(r"\s+", " ", value)
    if collapsed != value:
        trace.append("collapse-whitespace")
    return collapsed, trace


def parse_number(text: str) -> Fraction | None:
    """Exact rational for integers, decimals, and a/b fractions; None otherwise."""
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        pass
    try:
        return Fraction(float(text))
    except (ValueError, OverflowError):
        return None


def _numbers_match(a: Fraction, b: Fraction) -> bool:
    if a == b:
        return True
    scale = max(abs(a), abs(b))
    return scale > 0 and abs(a - b) <= NUMERIC_REL_TOL * scale


def grade_math(predicted: str | None, gold: str) -> GradeResult:
    """1.0 iff normalized forms match, numerically when both parse."""
    if not gold:
        raise GradingError("math grading requires a gold answer")
    norm_pred, trace_pred = normalize_math_answer(predicted or "")
    norm_gold, trace_gold = normalize_math_answer(gold)
    a = parse_number(norm_pred)
    b = parse_number(norm_gold)
    if a is not None and b is not None:
        mode = "numeric"
        matched = _numbers_match(a, b)
    else:
        mode = "string"
        matched = norm_pred == norm_gold
    return GradeResult(
        score=1.0 if matched else 0.0,
        detail={
            "mode": mode,
            "predicted": norm_pred,
            "gold": norm_gold,
            "predicted_trace": trace_pred,
            "gold_trace": trace_gold,
        },
    )


_YES_NO_RE = re.compile(r"[a-z]+")


def _parse_verdict(reply: str) -> str | None:
    m = _YES_NO_RE.search(reply.casefold())
    if m and m.group() in ("yes", "no"):
        return m.group()
    return None


def judge_requirements(
    answer: str,
    requirements: Sequence[str],
    judge: ModelHandle,
    template: str = JUDGE_TEMPLATE,
) -> GradeResult:
    """Score is the rate of yes verdicts, one judge query per requirement.

    A malformed reply is retried once and then counted as a flagged "no";
    ambiguity never inflates the score.
    """
    if not requirements:
        raise GradingError("rubric grading requires at least one requirement")
    verdicts = []
    yes = 0
    for requirement in requirements:
        prompt = template.replace("{requirement}", requirement).replace("{answer}", answer)
        verdict = None
        for _ in range(2):
            gen = judge.generate([{"role": "user", "content": prompt}], cap=8)
            if gen.stop_reason == STOP_TRANSPORT:
                raise TransportError("judge unreachable while grading")
            verdict = _parse_verdict(gen.text)
            if verdict is not None:
                break
        flagged = verdict is None
        if verdict is None:
            verdict = "no"
        if verdict == "yes":
            yes += 1
        verdicts.append({"requirement": requirement, "verdict": verdict, "flagged": flagged})
    return GradeResult(score=yes / len(requirements), detail={"verdicts": verdicts})


def judging_excerpt(answer_span: str | None, full_text: str) -> tuple[str, str]:
    """Text handed to the judge: the detected span, else the output's tail."""
    if answer_span:
        return answer_span, "answer-span"
    return full_text[-JUDGING_TAIL_CHARS:], "tail"


def grade_sample(
    question: Question,
    answer_span: str | None,
    full_text: str,
    judge: ModelHandle | None = None,
) -> GradeResult | None:
    """Dispatch on the question's grading mode; None means ungraded."""
    if question.grading == "none":
        return None
    if question.grading == "exact-math":
        return grade_math(answer_span, question.gold)
    if question.grading == "rubric":
        if judge is None:
            raise GradingError(f"question {question.id} needs a judge model for rubric grading")
        excerpt, source = judging_excerpt(answer_span, full_text)
        result = judge_requirements(excerpt, question.requirements, judge)
        detail = dict(result.detail)
        detail["excerpt_source"] = source
        return GradeResult(score=result.score, detail=detail)
    raise GradingError(f"grading mode {question.grading!r} has no grader wired in")
