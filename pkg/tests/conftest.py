from __future__ import annotations

from tokendeadline.adapters import STOP_CAP, STOP_NATURAL, STOP_TRANSPORT, Generation, text_chunks
from tokendeadline.records import RunLog, SampleRecord


def make_record(
    question_id="q1",
    model_id="m1",
    strategy="base",
    sample_index=0,
    seed=0,
    answer_text="42",
    spend=100,
    correct=1.0,
    interrupts=0,
    forced=False,
    deadline=None,
):
    return SampleRecord(
        question_id=question_id,
        model_id=model_id,
        strategy=strategy,
        sample_index=sample_index,
        seed=seed,
        answer_text=answer_text,
        spend=spend,
        correct=correct,
        interrupts=interrupts,
        forced=forced,
        deadline=deadline,
    )


def build_log(records, dataset="testset"):
    log = RunLog(dataset=dataset, created_at="2026-01-01T00:00:00Z")
    for rec in records:
        log.append(rec)
    return log


class CannedModel:
    """Replies from a fixed queue; used as a judge or flaky-transport stand-in."""

    reports_token_usage = True
    seed_replayable = True
    max_context = 1_000_000
    concurrency = 8

    def __init__(self, replies, model_id="canned", fail_first=0):
        self.replies = list(replies)
        self.model_id = model_id
        self.fail_first = fail_first
        self.calls = 0

    def count_tokens(self, text):
        return len(text_chunks(text))

    def generate(self, context, cap, seed=None):
        self.calls += 1
        if self.fail_first > 0:
            self.fail_first -= 1
            return Generation(text="", tokens_used=0, stop_reason=STOP_TRANSPORT)
        if not self.replies:
            return Generation(text="", tokens_used=0, stop_reason=STOP_NATURAL)
        text = self.replies.pop(0)
        chunks = text_chunks(text)
        if len(chunks) > cap:
            return Generation(
                text="".join(chunks[:cap]), tokens_used=cap, stop_reason=STOP_CAP
            )
        return Generation(text=text, tokens_used=len(chunks), stop_reason=STOP_NATURAL)
