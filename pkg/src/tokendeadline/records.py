"""Domain types and the append-only JSONL run-log format (schema "ttlog/1").

A run-log file is one header line followed by one record per line, UTF-8.
Datasets are plain JSONL, one question per line.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DuplicateRecordError, LogFormatError, SchemaVersionError

LOG_SCHEMA = "ttlog/1"

GRADING_MODES = ("exact-math", "rubric", "code", "none")

_NAMED_STRATEGIES = ("base", "naive", "terminator", "real-min", "pred-diff")
_FIX_STRATEGY_RE = re.compile(r"fix-([1-9]\d*)$")

SEGMENT_MODEL = "model"
SEGMENT_INTERRUPT = "interrupt"
SEGMENT_TERMINATOR = "terminator"
_SEGMENT_KINDS = (SEGMENT_MODEL, SEGMENT_INTERRUPT, SEGMENT_TERMINATOR)


def valid_strategy(name: str) -> bool:
    return name in _NAMED_STRATEGIES or _FIX_STRATEGY_RE.match(name) is not None


def fixed_strategy_deadline(name: str) -> int | None:
    """Token count N for a "fix-N" strategy name, None for every other strategy."""
    m = _FIX_STRATEGY_RE.match(name)
    return int(m.group(1)) if m else None


def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Question:
    """One evaluation item: prompt, optional gold answer, and grading mode."""

    id: str
    prompt: str
    gold: str | None = None
    grading: str = "none"
    dataset: str = ""
    requirements: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "requirements", tuple(self.requirements or ()))
        if not self.id:
            raise ValueError("question id must be non-empty")
        if self.grading not in GRADING_MODES:
            raise ValueError(f"unknown grading mode: {self.grading!r}")
        if self.grading == "exact-math" and not self.gold:
            raise ValueError(f"question {self.id}: exact-math grading requires a gold answer")
        if self.grading == "rubric" and not self.requirements:
            raise ValueError(f"question {self.id}: rubric grading requires requirements")


@dataclass(frozen=True)
class SampleRecord:
    """One graded generation: token spend, correctness, and episode telemetry."""

    question_id: str
    model_id: str
    strategy: str
    sample_index: int
    seed: int
    answer_text: str
    spend: int
    correct: float | None
    interrupts: int = 0
    forced: bool = False
    deadline: int | None = None

    def __post_init__(self):
        if not valid_strategy(self.strategy):
            raise ValueError(f"unknown strategy: {self.strategy!r}")
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")
        if self.spend < 0:
            raise ValueError("spend must be >= 0")
        if self.interrupts < 0:
            raise ValueError("interrupts must be >= 0")
        if self.correct is not None:
            object.__setattr__(self, "correct", float(self.correct))
            if not 0.0 <= self.correct <= 1.0:
                raise ValueError("correct must lie in [0, 1]")
        if self.deadline is not None and self.deadline <= 0:
            raise ValueError("deadline must be positive when present")
        if self.strategy == "base" and (self.interrupts or self.forced or self.deadline is not None):
            raise ValueError("base-strategy records carry no interrupts, forcing, or deadline")

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.question_id, self.model_id, self.strategy, self.sample_index)

    @property
    def is_correct(self) -> bool:
        """Full-credit check: partial rubric scores never count as correct."""
        return self.correct == 1.0


@dataclass(frozen=True)
class TranscriptSegment:
    """One episode segment: model output or an engine-injected message."""

    kind: str
    text: str
    tokens: int

    def __post_init__(self):
        if self.kind not in _SEGMENT_KINDS:
            raise ValueError(f"unknown segment kind: {self.kind!r}")
        if self.tokens < 0:
            raise ValueError("segment tokens must be >= 0")

    @property
    def injected(self) -> bool:
        return self.kind != SEGMENT_MODEL


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one controlled generation episode.

    spend counts model-generated tokens only; injected messages are excluded,
    which the constructor enforces against the transcript.
    """

    answer: str | None
    spend: int
    interrupts: int
    forced: bool
    transcript: tuple[TranscriptSegment, ...]
    deadline: int | None
    answer_unparsed: bool = False
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "transcript", tuple(self.transcript))
        model_tokens = sum(s.tokens for s in self.transcript if s.kind == SEGMENT_MODEL)
        if self.spend != model_tokens:
            raise ValueError(f"spend {self.spend} != model-generated tokens {model_tokens}")
        n_interrupts = sum(1 for s in self.transcript if s.kind == SEGMENT_INTERRUPT)
        if self.interrupts != n_interrupts:
            raise ValueError(f"interrupts {self.interrupts} != transcript count {n_interrupts}")

    @property
    def model_text(self) -> str:
        return "".join(s.text for s in self.transcript if s.kind == SEGMENT_MODEL)


class RunLog:
    """Append-only record collection with a uniqueness key per sample.

    Mutation is expected to go through a single writer; readers should take
    the ``records`` snapshot.
    """

    def __init__(
        self,
        dataset: str,
        created_at: str | None = None,
        config_digest: str = "",
        replayable: bool = True,
    ):
        self.dataset = dataset
        self.created_at = created_at or _now_iso()
        self.config_digest = config_digest
        self.replayable = replayable
        self._records: list[SampleRecord] = []
        self._keys: set[tuple] = set()

    def append(self, rec: SampleRecord) -> None:
        if rec.key in self._keys:
            raise DuplicateRecordError(rec.key)
        self._keys.add(rec.key)
        self._records.append(rec)

    @property
    def records(self) -> tuple[SampleRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self._records)

    def header_dict(self) -> dict:
        return {
            "schema": LOG_SCHEMA,
            "dataset": self.dataset,
            "created_at": self.created_at,
            "config_digest": self.config_digest,
            "replayable": self.replayable,
        }

    def model_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for r in self._records:
            seen.setdefault(r.model_id)
        return tuple(seen)

    def strategies(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for r in self._records:
            seen.setdefault(r.strategy)
        return tuple(seen)

    def filter(
        self,
        model_id: str | None = None,
        strategy: str | None = None,
        question_ids: Iterable[str] | None = None,
    ) -> "RunLog":
        """Snapshot view with the same header and a record subset."""
        wanted = set(question_ids) if question_ids is not None else None
        out = RunLog(self.dataset, self.created_at, self.config_digest, self.replayable)
        for r in self._records:
            if model_id is not None and r.model_id != model_id:
                continue
            if strategy is not None and r.strategy != strategy:
                continue
            if wanted is not None and r.question_id not in wanted:
                continue
            out.append(r)
        return out


def append_record(log: RunLog, rec: SampleRecord) -> RunLog:
    """Append one record, rejecting duplicate keys; returns the same log."""
    log.append(rec)
    return log


_RECORD_FIELDS = (
    "question_id",
    "model_id",
    "strategy",
    "sample_index",
    "seed",
    "answer_text",
    "spend",
    "correct",
    "interrupts",
    "forced",
    "deadline",
)


def _record_to_dict(rec: SampleRecord) -> dict:
    return {name: getattr(rec, name) for name in _RECORD_FIELDS}


def _record_from_dict(data: dict) -> SampleRecord:
    if not isinstance(data, dict):
        raise ValueError("record line must be a JSON object")
    missing = [f for f in _RECORD_FIELDS if f not in data]
    if missing:
        raise ValueError(f"missing record fields: {missing}")
    extra = [k for k in data if k not in _RECORD_FIELDS]
    if extra:
        raise ValueError(f"unknown record fields: {extra}")
    correct = data["correct"]
    if isinstance(correct, bool):
        correct = 1.0 if correct else 0.0
    return SampleRecord(
        question_id=data["question_id"],
        model_id=data["model_id"],
        strategy=data["strategy"],
        sample_index=int(data["sample_index"]),
        seed=int(data["seed"]),
        answer_text=data["answer_text"],
        spend=int(data["spend"]),
        correct=correct,
        interrupts=int(data["interrupts"]),
        forced=bool(data["forced"]),
        deadline=None if data["deadline"] is None else int(data["deadline"]),
    )


def record_line(rec: SampleRecord) -> str:
    return json.dumps(_record_to_dict(rec), ensure_ascii=False)


def save_log(log: RunLog, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(log.header_dict(), ensure_ascii=False) + "\n")
        for rec in log:
            fh.write(record_line(rec) + "\n")


def load_log(path: str | Path) -> RunLog:
    """Parse a run-log file; malformed lines raise with their line number."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise LogFormatError(1, "empty file, header line missing")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise LogFormatError(1, f"malformed header: {exc}") from exc
    if not isinstance(header, dict) or "schema" not in header:
        raise LogFormatError(1, "header line lacks a schema field")
    if header["schema"] != LOG_SCHEMA:
        raise SchemaVersionError(
            f"unsupported log schema {header['schema']!r}, expected {LOG_SCHEMA!r}"
        )
    log = RunLog(
        dataset=header.get("dataset", ""),
        created_at=header.get("created_at"),
        config_digest=header.get("config_digest", ""),
        replayable=bool(header.get("replayable", True)),
    )
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            rec = _record_from_dict(json.loads(line))
            log.append(rec)
        except json.JSONDecodeError as exc:
            raise LogFormatError(line_no, f"malformed record: {exc}") from exc
        except (ValueError, DuplicateRecordError) as exc:
            raise LogFormatError(line_no, str(exc)) from exc
    return log


def log_digest(log: RunLog) -> str:
    """Determinism hash over header and records; the timestamp is excluded."""
    header = log.header_dict()
    header.pop("created_at")
    h = hashlib.sha256()
    h.update(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8"))
    for rec in log:
        h.update(b"\n")
        h.update(record_line(rec).encode("utf-8"))
    return h.hexdigest()


class RunLogWriter:
    """Incremental single-writer persistence: one flushed line per record.

    A run killed mid-way leaves a loadable file with the records written so far.
    """

    def __init__(self, path: str | Path, log: RunLog):
        self.log = log
        self._fh = Path(path).open("w", encoding="utf-8")
        self._fh.write(json.dumps(log.header_dict(), ensure_ascii=False) + "\n")
        self._fh.flush()

    def append(self, rec: SampleRecord) -> None:
        self.log.append(rec)
        self._fh.write(record_line(rec) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "RunLogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


_QUESTION_FIELDS = ("id", "prompt", "gold", "grading", "dataset", "requirements")


def save_questions(questions: Iterable[Question], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for q in questions:
            data = {
                "id": q.id,
                "prompt": q.prompt,
                "gold": q.gold,
                "grading": q.grading,
                "dataset": q.dataset,
                "requirements": list(q.requirements),
            }
            fh.write(json.dumps(data, ensure_ascii=False) + "\n")


def load_questions(path: str | Path) -> list[Question]:
    """Read a JSONL dataset; ids must be unique within the file."""
    questions: list[Question] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                q = Question(
                    id=data["id"],
                    prompt=data["prompt"],
                    gold=data.get("gold"),
                    grading=data.get("grading", "none"),
                    dataset=data.get("dataset", ""),
                    requirements=tuple(data.get("requirements") or ()),
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise LogFormatError(line_no, f"bad question: {exc}") from exc
            if q.id in seen:
                raise LogFormatError(line_no, f"duplicate question id {q.id!r}")
            seen.add(q.id)
            questions.append(q)
    return questions
