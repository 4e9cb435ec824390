"""Budget-calibrated decoding control and overthinking metrics."""

__version__ = "0.1.0"

from .adapters import (
    FakeChatEndpoint,
    Generation,
    MockScript,
    ModelHandle,
    RemoteChatModel,
    ScriptedMockModel,
)
from .difficulty import (
    BudgetTable,
    ConstantDeadline,
    DeadlineEstimator,
    Difficulty,
    DifficultyBinning,
    JudgeDeadline,
    RealMinDeadline,
    TableLookupDeadline,
    bin_questions,
    build_budget_table,
    multi_model_difficulty,
    question_difficulty,
)
from .engine import (
    EpisodePolicy,
    EpisodeState,
    build_interrupt_message,
    build_scheduling_prompt,
    detect_answer,
    force_terminate,
    interrupt_interval,
    run_episode,
)
from .grading import GradeResult, grade_math, judge_requirements
from .harness import HarnessConfig, cmd_calibrate, cmd_export, cmd_report, cmd_run
from .metrics import (
    accuracy,
    build_report,
    export_scatter,
    global_overthinking,
    local_envelope_overthinking,
    pass_at_k,
)
from .records import (
    EpisodeResult,
    Question,
    RunLog,
    SampleRecord,
    TranscriptSegment,
    append_record,
    load_log,
    load_questions,
    log_digest,
    save_log,
    save_questions,
)
from .templates import DEFAULT_TEMPLATES, PromptTemplates
from .toyset import toy_model, toy_questions
