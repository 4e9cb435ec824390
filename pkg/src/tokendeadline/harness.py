"""End-to-end orchestration: calibration runs, strategy evaluation, reports.

Per-sample seeds derive from hash(master seed, question id, sample index), so
parallel scheduling cannot change what any episode sees; records are written
in task order regardless of completion order, keeping logs byte-reproducible
apart from the header timestamp.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, replace
from pathlib import Path

from . import metrics, toyset
from .adapters import ModelHandle, RemoteChatModel
from .difficulty import (
    BudgetTable,
    ConstantDeadline,
    DeadlineEstimator,
    DifficultyBinning,
    JudgeDeadline,
    RealMinDeadline,
    TableLookupDeadline,
    bin_questions,
    build_budget_table,
    load_binning,
    load_budget_table,
    multi_model_difficulty,
    save_binning,
    save_budget_table,
)
from .engine import DEFAULT_MARKERS, EpisodePolicy, run_episode
from .errors import EpisodeError, HarnessError, TokenDeadlineError, TransportError
from .grading import grade_sample
from .records import (
    Question,
    RunLog,
    RunLogWriter,
    SampleRecord,
    fixed_strategy_deadline,
    load_log,
    load_questions,
    valid_strategy,
)
from .templates import DEFAULT_TEMPLATES, PromptTemplates

logger = logging.getLogger(__name__)

TOY_DATASET = "toy"


@dataclass
class HarnessConfig:
    """Everything a calibrate/run invocation needs; flags map onto fields 1:1."""

    out_dir: Path
    dataset: str = TOY_DATASET
    models: tuple[str, ...] = ("mock-toy",)
    endpoint: str | None = None
    api_key_env: str = "CHAT_API_KEY"
    judge: str | None = None
    n: int = 10
    strategy: str = "base"
    bins: int = 10
    fallback_max: int = 2000
    seed: int = 1234
    parallelism: int = 1
    temperature: float = 0.7
    forced_tail_cap: int = 64
    safety_cap: int = 16384
    chars_per_token: float = 4.0
    budget_table: Path | None = None
    binning: Path | None = None
    reference_log: Path | None = None
    fix_deadline: int | None = None
    pass_ks: tuple[int, ...] = (5, 10)
    templates_path: Path | None = None
    markers: tuple[str, ...] = DEFAULT_MARKERS

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.models = tuple(self.models)
        self.markers = tuple(self.markers)
        if not self.markers:
            raise ValueError("at least one answer marker is required")
        if self.n < 1:
            raise ValueError("samples per question n must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if not valid_strategy(self.strategy):
            raise ValueError(f"unknown strategy: {self.strategy!r}")
        if not self.models:
            raise ValueError("at least one model is required")

    def templates(self) -> PromptTemplates:
        if self.templates_path is None:
            return DEFAULT_TEMPLATES
        return PromptTemplates.from_file(self.templates_path)


def config_digest(config: HarnessConfig) -> str:
    """Stable digest of the result-affecting fields (paths and layout excluded)."""
    payload = {
        "dataset": config.dataset,
        "models": list(config.models),
        "n": config.n,
        "strategy": config.strategy,
        "bins": config.bins,
        "fallback_max": config.fallback_max,
        "seed": config.seed,
        "temperature": config.temperature,
        "forced_tail_cap": config.forced_tail_cap,
        "safety_cap": config.safety_cap,
        "fix_deadline": config.fix_deadline,
        "markers": list(config.markers),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def sample_seed(master_seed: int, question_id: str, sample_index: int) -> int:
    digest = hashlib.sha256(f"{master_seed}:{question_id}:{sample_index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def load_dataset(config: HarnessConfig) -> tuple[list[Question], str]:
    if config.dataset == TOY_DATASET:
        return toyset.toy_questions(), toyset.TOY_DATASET_NAME
    questions = load_questions(config.dataset)
    if not questions:
        raise HarnessError(f"dataset {config.dataset} is empty")
    names = {q.dataset for q in questions if q.dataset}
    return questions, names.pop() if len(names) == 1 else Path(config.dataset).stem


def build_model(spec: str, config: HarnessConfig) -> ModelHandle:
    """Model spec strings: "mock-toy" or "remote:<model-name>" (needs --endpoint)."""
    if spec == "mock-toy" or spec.startswith("mock-toy:"):
        model_id = spec.split(":", 1)[1] if ":" in spec else "mock-toy"
        return toyset.toy_model(model_id=model_id)
    if spec.startswith("remote:"):
        if not config.endpoint:
            raise HarnessError(f"model {spec!r} needs --endpoint")
        name = spec.split(":", 1)[1]
        return RemoteChatModel(
            endpoint_url=config.endpoint,
            model_name=name,
            api_key=os.environ.get(config.api_key_env),
            temperature=config.temperature,
            chars_per_token=config.chars_per_token,
        )
    raise HarnessError(f"unknown model spec: {spec!r}")


@dataclass
class EpisodeFailure:
    question_id: str
    model_id: str
    sample_index: int
    error: str


def _collect(
    config: HarnessConfig,
    questions: list[Question],
    models: list[ModelHandle],
    dataset_name: str,
    path: Path,
    make_policy,
    strategy_name: str,
    judge: ModelHandle | None = None,
) -> tuple[RunLog, list[EpisodeFailure]]:
    """Fan episodes out, grade them, and persist records in task order."""
    replayable = all(getattr(m, "seed_replayable", False) for m in models)
    log = RunLog(
        dataset=dataset_name,
        config_digest=config_digest(config),
        replayable=replayable,
    )
    tasks = [
        (question, model, index)
        for question in questions
        for model in models
        for index in range(config.n)
    ]

    def run_one(task):
        question, model, index = task
        seed = sample_seed(config.seed, question.id, index)
        policy = make_policy(question)
        result = run_episode(model, question, policy, seed=seed)
        grade = grade_sample(question, result.answer, result.model_text, judge=judge)
        record = SampleRecord(
            question_id=question.id,
            model_id=model.model_id,
            strategy=strategy_name,
            sample_index=index,
            seed=seed,
            answer_text=result.answer or "",
            spend=result.spend,
            correct=None if grade is None else grade.score,
            interrupts=result.interrupts,
            forced=result.forced,
            deadline=result.deadline,
        )
        verdicts = None if grade is None else grade.detail.get("verdicts")
        return record, verdicts

    failures: list[EpisodeFailure] = []
    outcomes: dict[int, tuple[SampleRecord, list | None] | None] = {}
    next_to_write = 0
    verdicts_path = path.with_suffix(".verdicts.jsonl")
    verdicts_fh = None
    with RunLogWriter(path, log) as writer:

        def drain():
            nonlocal next_to_write, verdicts_fh
            while next_to_write in outcomes:
                outcome = outcomes.pop(next_to_write)
                if outcome is not None:
                    record, verdicts = outcome
                    writer.append(record)
                    if verdicts is not None:
                        if verdicts_fh is None:
                            verdicts_fh = verdicts_path.open("w", encoding="utf-8")
                        verdicts_fh.write(
                            json.dumps(
                                {
                                    "question_id": record.question_id,
                                    "model_id": record.model_id,
                                    "strategy": record.strategy,
                                    "sample_index": record.sample_index,
                                    "verdicts": verdicts,
                                },
                                ensure_ascii=False,
                            )
                            + "\n"
                        )
                        verdicts_fh.flush()
                next_to_write += 1

        if config.parallelism == 1:
            for task_index, task in enumerate(tasks):
                try:
                    outcomes[task_index] = run_one(task)
                except (EpisodeError, TransportError, TokenDeadlineError) as exc:
                    question, model, index = task
                    failures.append(EpisodeFailure(question.id, model.model_id, index, str(exc)))
                    outcomes[task_index] = None
                drain()
        else:
            with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
                pending = {
                    pool.submit(run_one, task): (task_index, task)
                    for task_index, task in enumerate(tasks)
                }
                while pending:
                    done, _ = wait(pending, return_when=FIRST_COMPLETED)
                    for future in done:
                        task_index, task = pending.pop(future)
                        try:
                            outcomes[task_index] = future.result()
                        except (EpisodeError, TransportError, TokenDeadlineError) as exc:
                            question, model, index = task
                            failures.append(
                                EpisodeFailure(question.id, model.model_id, index, str(exc))
                            )
                            outcomes[task_index] = None
                    drain()
        drain()
    if verdicts_fh is not None:
        verdicts_fh.close()

    for failure in failures:
        logger.warning(
            "episode failed: %s/%s sample %d: %s",
            failure.question_id,
            failure.model_id,
            failure.sample_index,
            failure.error,
        )
    if failures and len(failures) > 0.5 * len(tasks):
        raise HarnessError(
            f"{len(failures)} of {len(tasks)} episodes failed; refusing to report on the remainder"
        )
    return log, failures


@dataclass
class CalibrationResult:
    log: RunLog
    binning: DifficultyBinning
    table: BudgetTable
    difficulties: dict
    log_path: Path
    binning_path: Path
    table_path: Path


def cmd_calibrate(
    config: HarnessConfig,
    models: list[ModelHandle] | None = None,
) -> CalibrationResult:
    """Collect base-mode samples, bin question difficulties, emit the budget table."""
    questions, dataset_name = load_dataset(config)
    if len(questions) < config.bins:
        raise HarnessError(
            f"dataset has {len(questions)} questions but {config.bins} bins were requested"
        )
    config.out_dir.mkdir(parents=True, exist_ok=True)
    if models is None:
        models = [build_model(spec, config) for spec in config.models]
    base_config = replace(config, strategy="base")
    templates = config.templates()

    def make_policy(question):
        return EpisodePolicy.base(
            safety_cap=config.safety_cap, templates=templates, markers=config.markers
        )

    log_path = config.out_dir / "calibration.jsonl"
    log, _ = _collect(
        base_config, questions, models, dataset_name, log_path, make_policy, "base"
    )

    by_question: dict[str, dict[str, list[SampleRecord]]] = {}
    for record in log:
        by_question.setdefault(record.question_id, {}).setdefault(record.model_id, []).append(record)
    difficulties = {
        qid: multi_model_difficulty(list(per_model.values()))
        for qid, per_model in by_question.items()
    }
    binning = bin_questions(difficulties, config.bins)
    table = build_budget_table(log, binning, config.fallback_max)
    binning_path = config.out_dir / "binning.tsv"
    table_path = config.out_dir / "budget_table.tsv"
    save_binning(binning, difficulties, binning_path)
    save_budget_table(table, table_path)
    return CalibrationResult(
        log=log,
        binning=binning,
        table=table,
        difficulties=difficulties,
        log_path=log_path,
        binning_path=binning_path,
        table_path=table_path,
    )


def _load_table_and_binning(config: HarnessConfig) -> tuple[BudgetTable, DifficultyBinning]:
    if config.budget_table is None or config.binning is None:
        raise HarnessError(f"strategy {config.strategy!r} needs --budget-table and --binning")
    table = load_budget_table(config.budget_table)
    binning, _ = load_binning(config.binning)
    return table, binning


def resolve_estimator(
    config: HarnessConfig, judge: ModelHandle | None = None
) -> DeadlineEstimator | None:
    """Deadline source for the configured strategy; base needs none."""
    strategy = config.strategy
    if strategy == "base":
        return None
    fixed = fixed_strategy_deadline(strategy)
    if fixed is not None:
        return ConstantDeadline(fixed)
    if strategy == "terminator":
        return TableLookupDeadline(*_load_table_and_binning(config))
    if strategy == "real-min":
        if config.reference_log is None:
            raise HarnessError("real-min needs --reference-log")
        return RealMinDeadline(load_log(config.reference_log), config.fallback_max)
    if strategy == "pred-diff":
        if judge is None:
            if not config.judge:
                raise HarnessError("pred-diff needs --judge")
            judge = build_model(config.judge, config)
        table, _ = _load_table_and_binning(config)
        return JudgeDeadline(judge, table)
    if strategy == "naive":
        if config.fix_deadline is not None:
            return ConstantDeadline(config.fix_deadline)
        return TableLookupDeadline(*_load_table_and_binning(config))
    raise HarnessError(f"no deadline source for strategy {strategy!r}")


def cmd_run(
    config: HarnessConfig,
    models: list[ModelHandle] | None = None,
    judge: ModelHandle | None = None,
    estimator: DeadlineEstimator | None = None,
) -> tuple[RunLog, Path]:
    """Evaluate one strategy: n graded samples per question per model."""
    questions, dataset_name = load_dataset(config)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    if models is None:
        models = [build_model(spec, config) for spec in config.models]
    if estimator is None:
        estimator = resolve_estimator(config, judge)
    templates = config.templates()
    # one estimate per question, taken serially up front: judge-backed
    # estimators are not free, and parallel workers must all see one deadline
    deadlines: dict[str, int] = {}
    if config.strategy != "base":
        for question in questions:
            deadlines[question.id] = estimator.estimate(question)

    def make_policy(question):
        if config.strategy == "base":
            return EpisodePolicy.base(
                safety_cap=config.safety_cap, templates=templates, markers=config.markers
            )
        deadline = deadlines[question.id]
        if config.strategy == "naive":
            return EpisodePolicy.naive(
                deadline=max(1, deadline),
                forced_tail_cap=config.forced_tail_cap,
                templates=templates,
                markers=config.markers,
            )
        return EpisodePolicy.terminator(
            deadline=max(2, deadline),
            forced_tail_cap=config.forced_tail_cap,
            templates=templates,
            markers=config.markers,
        )

    path = config.out_dir / f"{dataset_name}_{config.strategy}.jsonl"
    log, _ = _collect(
        config, questions, models, dataset_name, path, make_policy, config.strategy, judge=judge
    )
    return log, path


@dataclass
class ReportResult:
    report: metrics.OverthinkingReport
    text: str
    paths: dict[str, Path]


def cmd_report(
    logs: list[RunLog],
    out_dir: Path | None = None,
    ks: tuple[int, ...] = (5, 10),
    og_correct_only: bool = True,
    difficulties: dict | None = None,
) -> ReportResult:
    """Metrics tables plus CSV exports; pure over its input logs."""
    report = metrics.build_report(
        logs, ks=ks, og_correct_only=og_correct_only, difficulties=difficulties
    )
    text = metrics.format_report_text(report)
    paths: dict[str, Path] = {}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths["report"] = out_dir / "report.txt"
        paths["report"].write_text(text + "\n", encoding="utf-8")
        paths["metrics"] = out_dir / "metrics.csv"
        metrics.write_metrics_csv(report, paths["metrics"])
        if difficulties is not None:
            all_records = [record for log in logs for record in log]
            paths["scatter"] = out_dir / "scatter.csv"
            metrics.write_scatter_csv(
                metrics.export_scatter(all_records, difficulties), paths["scatter"]
            )
            paths["histogram"] = out_dir / "histogram.csv"
            metrics.write_histogram_csv(
                metrics.difficulty_histogram(difficulties), paths["histogram"]
            )
    return ReportResult(report=report, text=text, paths=paths)


def cmd_export(log: RunLog, difficulties: dict, out_dir: Path) -> dict[str, Path]:
    """Figure-data CSVs for one log: per-sample scatter and difficulty histogram."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "scatter": out_dir / "scatter.csv",
        "histogram": out_dir / "histogram.csv",
    }
    metrics.write_scatter_csv(metrics.export_scatter(log, difficulties), paths["scatter"])
    metrics.write_histogram_csv(metrics.difficulty_histogram(difficulties), paths["histogram"])
    return paths
