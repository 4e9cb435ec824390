"""Overthinking scores, accuracy, pass@k, and figure-data exporters.

The global score compares a model's mean spend per question against the
smallest spend any model in the pool achieved on that question; by default
only fully-correct samples define that minimum (an all-samples variant is
available behind ``correct_only=False``). The local envelope score is the
mean per-question spread (max - min) of one model's spends, all samples
included.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .difficulty import Difficulty, difficulty_decile
from .errors import GradingError, UnknownQuestionError
from .records import RunLog, SampleRecord


def _records(log: "RunLog | Iterable[SampleRecord]") -> tuple[SampleRecord, ...]:
    if isinstance(log, RunLog):
        return log.records
    return tuple(log)


def _by_question(records: Sequence[SampleRecord]) -> dict[str, list[SampleRecord]]:
    groups: dict[str, list[SampleRecord]] = {}
    for r in records:
        groups.setdefault(r.question_id, []).append(r)
    return groups


@dataclass(frozen=True)
class GlobalOverthinking:
    score: float
    question_count: int
    excluded_count: int


def global_overthinking(
    logs: "Sequence[RunLog | Iterable[SampleRecord]] | RunLog",
    target_model: str,
    correct_only: bool = True,
) -> GlobalOverthinking:
    """Mean excess of the target's per-question mean spend over the pool minimum.

    Questions never solved by any model are excluded from the mean (their
    count is reported) rather than assigned a made-up minimum.
    """
    if isinstance(logs, RunLog):
        logs = [logs]
    pool: list[SampleRecord] = []
    for log in logs:
        pool.extend(_records(log))
    target = [r for r in pool if r.model_id == target_model]
    if not target:
        raise ValueError(f"no samples for target model {target_model!r}")
    pool_by_q = _by_question(pool)
    diffs: list[float] = []
    excluded = 0
    for qid, target_recs in sorted(_by_question(target).items()):
        candidates = pool_by_q[qid]
        if correct_only:
            spends = [r.spend for r in candidates if r.is_correct]
        else:
            spends = [r.spend for r in candidates]
        if not spends:
            excluded += 1
            continue
        mean_spend = sum(r.spend for r in target_recs) / len(target_recs)
        diffs.append(mean_spend - min(spends))
    if not diffs:
        raise ValueError("no question has any correct sample; cannot score overthinking")
    return GlobalOverthinking(
        score=sum(diffs) / len(diffs),
        question_count=len(diffs),
        excluded_count=excluded,
    )


def local_envelope_overthinking(
    log: "RunLog | Iterable[SampleRecord]", model_id: str | None = None
) -> float:
    """Mean per-question (max - min) spend for one model, every sample included."""
    records = _records(log)
    if model_id is not None:
        records = tuple(r for r in records if r.model_id == model_id)
    if not records:
        raise ValueError("no samples to score")
    models = {r.model_id for r in records}
    if len(models) > 1:
        raise ValueError(f"log mixes models {sorted(models)}; pass model_id")
    spreads = [
        max(r.spend for r in recs) - min(r.spend for r in recs)
        for recs in _by_question(records).values()
    ]
    return sum(spreads) / len(spreads)


def accuracy(log: "RunLog | Iterable[SampleRecord]") -> float:
    """Mean correctness score over all records; partial rubric credit counts."""
    records = _records(log)
    if not records:
        raise ValueError("no samples to score")
    for r in records:
        if r.correct is None:
            raise GradingError(f"record {r.key} is ungraded")
    return sum(r.correct for r in records) / len(records)


def pass_at_k(log: "RunLog | Iterable[SampleRecord]", k: int) -> float:
    """Unbiased pass@k: mean over questions of 1 - C(n-c, k)/C(n, k).

    Correctness is binary here; rubric scores threshold at exactly 1.0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    records = _records(log)
    if not records:
        raise ValueError("no samples to score")
    groups: dict[tuple[str, str], list[SampleRecord]] = {}
    for r in records:
        if r.correct is None:
            raise GradingError(f"record {r.key} is ungraded")
        groups.setdefault((r.model_id, r.question_id), []).append(r)
    offenders = sorted(qid for (_, qid), recs in groups.items() if len(recs) < k)
    if offenders:
        raise ValueError(f"questions with fewer than k={k} samples: {offenders}")
    values = []
    for recs in groups.values():
        n = len(recs)
        c = sum(1 for r in recs if r.is_correct)
        values.append(1.0 - math.comb(n - c, k) / math.comb(n, k))
    return sum(values) / len(values)


def export_scatter(
    log: "RunLog | Iterable[SampleRecord]",
    difficulties: Mapping[str, "Difficulty | float"],
) -> list[tuple[str, int, int]]:
    """One (question_id, difficulty decile, spend) row per sample."""
    rows = []
    for r in _records(log):
        if r.question_id not in difficulties:
            raise UnknownQuestionError(f"no difficulty for question {r.question_id!r}")
        d = difficulties[r.question_id]
        value = d.value if isinstance(d, Difficulty) else float(d)
        rows.append((r.question_id, difficulty_decile(value), r.spend))
    return rows


def difficulty_histogram(
    difficulties: Mapping[str, "Difficulty | float"],
) -> list[tuple[int, int]]:
    """Question count per difficulty decile, deciles 1..10."""
    counts = {d: 0 for d in range(1, 11)}
    for d in difficulties.values():
        value = d.value if isinstance(d, Difficulty) else float(d)
        counts[difficulty_decile(value)] += 1
    return sorted(counts.items())


def relative_change_pct(base_value: float, new_value: float) -> int:
    """Whole-percent relative change from base to treatment."""
    if base_value == 0:
        raise ValueError("relative change undefined for a zero base value")
    return round((new_value - base_value) / base_value * 100)


@dataclass(frozen=True)
class MetricsRow:
    model_id: str
    strategy: str
    n_records: int
    n_questions: int
    accuracy: float
    pass_at: dict[int, float | None]
    mean_spend: float
    o_env: float
    o_g: float
    o_g_excluded: int


@dataclass(frozen=True)
class ChangeRow:
    model_id: str
    o_env_pct: int
    o_g_pct: int
    accuracy_pct: int
    mean_spend_pct: int


@dataclass(frozen=True)
class OverthinkingReport:
    dataset: str
    rows: tuple[MetricsRow, ...]
    changes: tuple[ChangeRow, ...]
    detail: tuple[tuple, ...] = ()


def build_report(
    logs: Sequence[RunLog],
    ks: Sequence[int] = (5, 10),
    og_correct_only: bool = True,
    difficulties: Mapping[str, "Difficulty | float"] | None = None,
) -> OverthinkingReport:
    """Per (model, strategy) metrics plus base-to-terminator relative changes.

    pass@k cells are left empty for k larger than a group's sample count; the
    standalone pass_at_k function stays strict about that precondition.
    """
    if not logs:
        raise ValueError("no logs to report on")
    datasets = {log.dataset for log in logs}
    if len(datasets) > 1:
        raise ValueError(f"logs span different datasets: {sorted(datasets)}")
    dataset = next(iter(datasets))
    all_records: list[SampleRecord] = [r for log in logs for r in log]
    by_strategy: dict[str, list[SampleRecord]] = {}
    groups: dict[tuple[str, str], list[SampleRecord]] = {}
    for r in all_records:
        by_strategy.setdefault(r.strategy, []).append(r)
        groups.setdefault((r.model_id, r.strategy), []).append(r)

    rows = []
    for (model_id, strategy), recs in sorted(groups.items()):
        og = global_overthinking(
            [by_strategy[strategy]], model_id, correct_only=og_correct_only
        )
        pass_scores: dict[int, float | None] = {}
        min_n = min(len(v) for v in _by_question(recs).values())
        for k in ks:
            pass_scores[k] = pass_at_k(recs, k) if k <= min_n else None
        rows.append(
            MetricsRow(
                model_id=model_id,
                strategy=strategy,
                n_records=len(recs),
                n_questions=len(_by_question(recs)),
                accuracy=accuracy(recs),
                pass_at=pass_scores,
                mean_spend=sum(r.spend for r in recs) / len(recs),
                o_env=local_envelope_overthinking(recs, model_id),
                o_g=og.score,
                o_g_excluded=og.excluded_count,
            )
        )

    by_key = {(r.model_id, r.strategy): r for r in rows}
    changes = []
    for model_id in sorted({r.model_id for r in rows}):
        base = by_key.get((model_id, "base"))
        treat = by_key.get((model_id, "terminator"))
        if base is None or treat is None:
            continue
        changes.append(
            ChangeRow(
                model_id=model_id,
                o_env_pct=relative_change_pct(base.o_env, treat.o_env),
                o_g_pct=relative_change_pct(base.o_g, treat.o_g),
                accuracy_pct=relative_change_pct(base.accuracy, treat.accuracy),
                mean_spend_pct=relative_change_pct(base.mean_spend, treat.mean_spend),
            )
        )

    known = difficulties or {}
    detail = []
    for (model_id, strategy), recs in sorted(groups.items()):
        for qid, qrecs in sorted(_by_question(recs).items()):
            d = known.get(qid)
            value = d.value if isinstance(d, Difficulty) else d
            detail.append(
                (
                    model_id,
                    strategy,
                    qid,
                    None if value is None else difficulty_decile(value),
                    sum(r.spend for r in qrecs) / len(qrecs),
                    sum(1 for r in qrecs if r.is_correct),
                    len(qrecs),
                )
            )
    return OverthinkingReport(
        dataset=dataset, rows=tuple(rows), changes=tuple(changes), detail=tuple(detail)
    )


def _fmt_pass(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def format_report_text(report: OverthinkingReport) -> str:
    ks = sorted({k for row in report.rows for k in row.pass_at})
    headers = (
        ["model", "strategy", "records", "questions", "accuracy"]
        + [f"pass@{k}" for k in ks]
        + ["mean_spend", "O_env", "O_g", "excluded"]
    )
    table = [headers]
    for row in report.rows:
        table.append(
            [
                row.model_id,
                row.strategy,
                str(row.n_records),
                str(row.n_questions),
                f"{row.accuracy:.4f}",
            ]
            + [_fmt_pass(row.pass_at.get(k)) for k in ks]
            + [
                f"{row.mean_spend:.1f}",
                f"{row.o_env:.1f}",
                f"{row.o_g:.1f}",
                str(row.o_g_excluded),
            ]
        )
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = [f"dataset: {report.dataset}"]
    for r in table:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    if report.changes:
        lines.append("")
        lines.append("relative change (base -> terminator):")
        for ch in report.changes:
            lines.append(
                f"{ch.model_id}  O_env {ch.o_env_pct:+d}%  O_g {ch.o_g_pct:+d}%  "
                f"accuracy {ch.accuracy_pct:+d}%  mean_spend {ch.mean_spend_pct:+d}%"
            )
    return "\n".join(lines)


def write_metrics_csv(report: OverthinkingReport, path: str | Path) -> None:
    ks = sorted({k for row in report.rows for k in row.pass_at})
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["dataset", "model_id", "strategy", "records", "questions", "accuracy"]
            + [f"pass@{k}" for k in ks]
            + ["mean_spend", "o_env", "o_g", "o_g_excluded"]
        )
        for row in report.rows:
            writer.writerow(
                [report.dataset, row.model_id, row.strategy, row.n_records, row.n_questions]
                + [f"{row.accuracy:.6f}"]
                + ["" if row.pass_at.get(k) is None else f"{row.pass_at[k]:.6f}" for k in ks]
                + [f"{row.mean_spend:.6f}", f"{row.o_env:.6f}", f"{row.o_g:.6f}", row.o_g_excluded]
            )


def write_scatter_csv(rows: Iterable[tuple[str, int, int]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_id", "decile", "spend"])
        writer.writerows(rows)


def write_histogram_csv(rows: Iterable[tuple[int, int]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["decile", "questions"])
        writer.writerows(rows)
