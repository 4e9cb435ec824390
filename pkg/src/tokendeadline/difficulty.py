"""Inaccuracy-rate difficulty scores, balanced binning, and the budget table.

Difficulty of a question for one model is the fraction of its samples that
failed; the pooled score averages per-model rates so each model votes
equally even when sample counts differ. Budgets come from the minimum spend
of each question's successful samples, averaged within a difficulty bin.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    JudgeRefusalError,
    JudgeTimeoutError,
    SchemaVersionError,
    UnknownQuestionError,
)
from .records import Question, RunLog, SampleRecord

BUDGET_SCHEMA = "ttbudget/1"
BINNING_SCHEMA = "ttbins/1"

DEFAULT_BIN_COUNT = 10
DEFAULT_FALLBACK_MAX = 2000


@dataclass(frozen=True)
class Difficulty:
    """Empirical inaccuracy rate with the counts that produced it."""

    value: float
    n_samples: int
    n_models: int

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("difficulty value must lie in [0, 1]")
        if self.n_samples < 1 or self.n_models < 1:
            raise ValueError("difficulty requires at least one sample and one model")


def _wrongness_counts(records: Sequence[SampleRecord]) -> tuple[int, int]:
    if not records:
        raise ValueError("difficulty needs at least one sample")
    qids = {r.question_id for r in records}
    if len(qids) != 1:
        raise ValueError(f"samples span multiple questions: {sorted(qids)}")
    models = {r.model_id for r in records}
    if len(models) != 1:
        raise ValueError(f"samples span multiple models: {sorted(models)}")
    for r in records:
        if r.correct is None:
            raise ValueError(f"sample {r.key} has no correctness score")
    wrong = sum(1 for r in records if not r.is_correct)
    return wrong, len(records)


def question_difficulty(records: Iterable[SampleRecord]) -> Difficulty:
    """Single-model difficulty: (# incorrect samples) / n."""
    records = tuple(records)
    wrong, n = _wrongness_counts(records)
    return Difficulty(value=float(Fraction(wrong, n)), n_samples=n, n_models=1)


def multi_model_difficulty(per_model: Sequence[Iterable[SampleRecord]]) -> Difficulty:
    """Pooled difficulty: unweighted mean of each model's inaccuracy rate.

    With equal per-model sample counts this equals total wrong / (models * n);
    ragged counts keep every model's vote equal.
    """
    groups = [tuple(g) for g in per_model]
    if not groups:
        raise ValueError("multi-model difficulty needs at least one model")
    counts = [_wrongness_counts(g) for g in groups]
    qids = {g[0].question_id for g in groups}
    if len(qids) != 1:
        raise ValueError(f"model groups span multiple questions: {sorted(qids)}")
    models = [g[0].model_id for g in groups]
    if len(set(models)) != len(models):
        raise ValueError("each model may contribute only one sample group")
    value = sum(Fraction(w, n) for w, n in counts) / len(counts)
    ns = [n for _, n in counts]
    n_samples = ns[0] if len(set(ns)) == 1 else sum(ns)
    return Difficulty(value=float(value), n_samples=n_samples, n_models=len(counts))


def difficulty_decile(value: float) -> int:
    """Map a difficulty in [0,1] to a display decile 1..10 (ceil, clamped)."""
    return min(10, max(1, math.ceil(value * 10)))


def _difficulty_value(d) -> float:
    return d.value if isinstance(d, Difficulty) else float(d)


@dataclass(frozen=True)
class DifficultyBinning:
    """Balanced, order-preserving assignment of questions to difficulty bins."""

    bin_count: int
    assignment: Mapping[str, int]
    edges: tuple[float, ...]

    def bin_of(self, question_id: str) -> int:
        try:
            return self.assignment[question_id]
        except KeyError:
            raise UnknownQuestionError(f"question {question_id!r} not in binning") from None

    def question_ids(self) -> tuple[str, ...]:
        return tuple(self.assignment)


def bin_questions(
    difficulties: Mapping[str, "Difficulty | float"],
    bin_count: int = DEFAULT_BIN_COUNT,
) -> DifficultyBinning:
    """Equal-frequency split into bins whose sizes differ by at most one.

    Questions are ordered by (difficulty, id); ties break on ascending id, so
    the assignment is deterministic for any input ordering.
    """
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    items = sorted(((_difficulty_value(d), qid) for qid, d in difficulties.items()))
    n = len(items)
    if n < bin_count:
        raise ValueError(f"need at least {bin_count} questions to fill {bin_count} bins, got {n}")
    base, extra = divmod(n, bin_count)
    assignment: dict[str, int] = {}
    edges: list[float] = []
    pos = 0
    for b in range(1, bin_count + 1):
        size = base + (1 if b <= extra else 0)
        chunk = items[pos : pos + size]
        for _, qid in chunk:
            assignment[qid] = b
        if b < bin_count:
            edges.append(chunk[-1][0])
        pos += size
    return DifficultyBinning(bin_count=bin_count, assignment=assignment, edges=tuple(edges))


@dataclass(frozen=True)
class BudgetBin:
    index: int
    upper_edge: float
    budget: int
    support: int

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("bin budget must be positive")
        if self.support < 0:
            raise ValueError("bin support must be >= 0")


@dataclass(frozen=True)
class BudgetTable:
    """Difficulty-bin to token-deadline mapping plus a never-solved fallback."""

    bins: tuple[BudgetBin, ...]
    fallback_max: int

    def __post_init__(self):
        if self.fallback_max <= 0:
            raise ValueError("fallback_max must be positive")
        indices = [b.index for b in self.bins]
        if indices != list(range(1, len(self.bins) + 1)):
            raise ValueError("bin indices must run contiguously from 1")
        edges = [b.upper_edge for b in self.bins]
        if edges != sorted(edges):
            raise ValueError("bin edges must be nondecreasing")

    def budget_for_bin(self, index: int) -> int:
        if not 1 <= index <= len(self.bins):
            raise ValueError(f"bin index {index} outside 1..{len(self.bins)}")
        return self.bins[index - 1].budget


def min_correct_spend(records: Iterable[SampleRecord]) -> int | None:
    """Smallest spend among fully-correct samples, None when never solved."""
    spends = [r.spend for r in records if r.is_correct]
    return min(spends) if spends else None


def build_budget_table(
    calibration_log: RunLog,
    binning: DifficultyBinning,
    fallback_max: int = DEFAULT_FALLBACK_MAX,
) -> BudgetTable:
    """Per bin: mean over solved questions of their minimum successful spend.

    Bins whose questions were never solved get fallback_max and support 0.
    """
    if len(calibration_log) == 0:
        raise ValueError("calibration log is empty")
    by_question: dict[str, list[SampleRecord]] = {}
    for rec in calibration_log:
        by_question.setdefault(rec.question_id, []).append(rec)
    missing = [qid for qid in by_question if qid not in binning.assignment]
    if missing:
        raise UnknownQuestionError(f"binning does not cover questions: {sorted(missing)}")
    per_bin_minima: dict[int, list[int]] = {b: [] for b in range(1, binning.bin_count + 1)}
    for qid, recs in by_question.items():
        m = min_correct_spend(recs)
        if m is not None:
            per_bin_minima[binning.bin_of(qid)].append(m)
    bins = []
    edges = list(binning.edges) + [1.0]
    for b in range(1, binning.bin_count + 1):
        minima = per_bin_minima[b]
        if minima:
            budget = max(1, round(sum(minima) / len(minima)))
        else:
            budget = fallback_max
        bins.append(BudgetBin(index=b, upper_edge=edges[b - 1], budget=budget, support=len(minima)))
    return BudgetTable(bins=tuple(bins), fallback_max=fallback_max)


def save_budget_table(table: BudgetTable, path: str | Path) -> None:
    lines = [f"{BUDGET_SCHEMA}\tfallback_max={table.fallback_max}"]
    lines.append("bin\tupper_edge\tbudget\tsupport")
    for b in table.bins:
        lines.append(f"{b.index}\t{b.upper_edge:.6f}\t{b.budget}\t{b.support}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_budget_table(path: str | Path) -> BudgetTable:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(BUDGET_SCHEMA):
        raise SchemaVersionError(f"budget table file lacks schema {BUDGET_SCHEMA!r}")
    m = re.search(r"fallback_max=(\d+)", lines[0])
    if not m:
        raise SchemaVersionError("budget table header lacks fallback_max")
    bins = []
    for line in lines[2:]:
        if not line.strip():
            continue
        idx, edge, budget, support = line.split("\t")
        bins.append(
            BudgetBin(index=int(idx), upper_edge=float(edge), budget=int(budget), support=int(support))
        )
    return BudgetTable(bins=tuple(bins), fallback_max=int(m.group(1)))


def save_binning(
    binning: DifficultyBinning,
    difficulties: Mapping[str, "Difficulty | float"],
    path: str | Path,
) -> None:
    lines = [f"{BINNING_SCHEMA}\tbins={binning.bin_count}"]
    lines.append("question_id\tdifficulty\tbin")
    for qid, b in sorted(binning.assignment.items()):
        lines.append(f"{qid}\t{_difficulty_value(difficulties[qid]):.6f}\t{b}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_binning(path: str | Path) -> tuple[DifficultyBinning, dict[str, float]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(BINNING_SCHEMA):
        raise SchemaVersionError(f"binning file lacks schema {BINNING_SCHEMA!r}")
    m = re.search(r"bins=(\d+)", lines[0])
    if not m:
        raise SchemaVersionError("binning header lacks a bin count")
    bin_count = int(m.group(1))
    assignment: dict[str, int] = {}
    difficulties: dict[str, float] = {}
    for line in lines[2:]:
        if not line.strip():
            continue
        qid, diff, b = line.split("\t")
        assignment[qid] = int(b)
        difficulties[qid] = float(diff)
    per_bin = [
        [difficulties[q] for q, b in assignment.items() if b == i]
        for i in range(1, bin_count)
    ]
    edges = tuple(max(vals) for vals in per_bin if vals)
    return DifficultyBinning(bin_count=bin_count, assignment=assignment, edges=edges), difficulties


class DeadlineEstimator:
    """Maps a question to a positive token deadline."""

    kind = "abstract"

    def estimate(self, question: Question) -> int:
        raise NotImplementedError


class ConstantDeadline(DeadlineEstimator):
    kind = "constant"

    def __init__(self, tokens: int):
        if tokens <= 0:
            raise ValueError("constant deadline must be positive")
        self.tokens = tokens

    def estimate(self, question: Question) -> int:
        return self.tokens


class TableLookupDeadline(DeadlineEstimator):
    """Budget of the question's calibrated difficulty bin."""

    kind = "table-lookup"

    def __init__(self, table: BudgetTable, binning: DifficultyBinning):
        if len(table.bins) != binning.bin_count:
            raise ValueError("budget table and binning disagree on bin count")
        self.table = table
        self.binning = binning

    def estimate(self, question: Question) -> int:
        return self.table.budget_for_bin(self.binning.bin_of(question.id))


class RealMinDeadline(DeadlineEstimator):
    """Observed minimum successful spend from a reference log, else the fallback."""

    kind = "real-min-oracle"

    def __init__(self, reference_log: RunLog, fallback_max: int = DEFAULT_FALLBACK_MAX):
        if fallback_max <= 0:
            raise ValueError("fallback_max must be positive")
        self.fallback_max = fallback_max
        self._minima: dict[str, int] = {}
        by_question: dict[str, list[SampleRecord]] = {}
        for rec in reference_log:
            by_question.setdefault(rec.question_id, []).append(rec)
        for qid, recs in by_question.items():
            m = min_correct_spend(recs)
            if m is not None:
                self._minima[qid] = m

    def estimate(self, question: Question) -> int:
        return self._minima.get(question.id, self.fallback_max)


DIFFICULTY_JUDGE_TEMPLATE = (
    "Rate the difficulty of the following question for a language model on an "
    "integer scale from 1 (trivial) to {bins} (hardest).\n"
    "Question: {prompt}\n"
    "Reply with a single integer between 1 and {bins} and nothing else."
)

_INT_RE = re.compile(r"-?\d+")


class JudgeDeadline(DeadlineEstimator):
    """Asks an external judge model for a difficulty level, then uses the table.

    Malformed replies are retried once before giving up; transport failures
    surface separately from refusals.
    """

    kind = "external-judge"

    def __init__(self, judge, table: BudgetTable, template: str = DIFFICULTY_JUDGE_TEMPLATE):
        self.judge = judge
        self.table = table
        self.template = template

    def estimate(self, question: Question) -> int:
        bins = len(self.table.bins)
        prompt = self.template.replace("{bins}", str(bins)).replace("{prompt}", question.prompt)
        context = [{"role": "user", "content": prompt}]
        for _ in range(2):
            gen = self.judge.generate(context, cap=8)
            if gen.stop_reason == "transport-error":
                raise JudgeTimeoutError("difficulty judge unreachable")
            m = _INT_RE.search(gen.text)
            if m:
                level = int(m.group())
                if 1 <= level <= bins:
                    return self.table.budget_for_bin(level)
        raise JudgeRefusalError(f"judge never returned an integer in 1..{bins}")
