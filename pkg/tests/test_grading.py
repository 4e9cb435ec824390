from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from tokendeadline.errors import GradingError, TransportError
from tokendeadline.grading import (
    grade_math,
    grade_sample,
    judge_requirements,
    judging_excerpt,
    parse_number,
)
from tokendeadline.records import Question

from conftest import CannedModel


def test_grade_math_identity():
    assert grade_math("42", "42").score == 1.0


def test_grade_math_strips_boxed_wrapper():
    result = grade_math(r"\boxed{42}", "42")
    assert result.score == 1.0
    assert "unwrap" in result.detail["predicted_trace"]


def test_grade_math_fraction_equals_decimal():
    result = grade_math("0.5", "1/2")
    assert result.score == 1.0
    assert result.detail["mode"] == "numeric"


@pytest.mark.parametrize(
    "predicted,gold,score",
    [
        ("  42  ", "42", 1.0),
        ("$1/2$", "0.5", 1.0),
        ("$$ 7 $$", "7", 1.0),
        (r"\( 3 \)", "3", 1.0),
        (r"\[12\]", "12.0", 1.0),
        ("Forty  Two", "forty two", 1.0),
        ("41", "42", 0.0),
        ("1.00000001", "1", 0.0),  # 1e-8 away: outside 1e-9 relative tolerance
        ("1.0000000001", "1", 1.0),  # 1e-10 away: inside
        ("apple", "orange", 0.0),
    ],
)
def test_grade_math_normalization_table(predicted, gold, score):
    assert grade_math(predicted, gold).score == score


def test_grade_math_unparseable_falls_to_string_path():
    result = grade_math("x + 1", "x + 1")
    assert result.score == 1.0
    assert result.detail["mode"] == "string"


def test_grade_math_empty_prediction_scores_zero():
    assert grade_math(None, "42").score == 0.0
    assert grade_math("", "42").score == 0.0


def test_grade_math_requires_gold():
    with pytest.raises(GradingError):
        grade_math("42", "")


@given(st.sampled_from(["42", r"\boxed{42}", "0.5", "1/2", "  7 ", "$9$", "word"]),
       st.sampled_from(["42", "0.5", "7", "9", "word"]))
def test_grade_math_symmetric(a, b):
    assert grade_math(a, b).score == grade_math(b, a).score


def test_parse_number_paths():
    assert parse_number("3/4") == 0.75
    assert parse_number("0.25") == 0.25
    assert parse_number("1e3") == 1000
    assert parse_number("banana") is None


def test_judge_requirements_rate_of_yes():
    judge = CannedModel(["yes", "Yes.", "no"])
    result = judge_requirements("answer", ["r1", "r2", "r3"], judge)
    assert result.score == pytest.approx(2 / 3)
    verdicts = result.detail["verdicts"]
    assert [v["verdict"] for v in verdicts] == ["yes", "yes", "no"]


def test_judge_requirements_all_yes():
    judge = CannedModel(["yes", "yes"])
    assert judge_requirements("a", ["r1", "r2"], judge).score == 1.0


def test_judge_requirements_empty_requirements_errors():
    with pytest.raises(GradingError):
        judge_requirements("a", [], CannedModel(["yes"]))


def test_judge_requirements_malformed_reply_retried_then_counted_no():
    judge = CannedModel(["hard to say", "definitely maybe"])
    result = judge_requirements("a", ["r1"], judge)
    assert result.score == 0.0
    assert result.detail["verdicts"][0]["flagged"] is True
    assert judge.calls == 2


def test_judge_requirements_transport_failure_errors():
    with pytest.raises(TransportError):
        judge_requirements("a", ["r1"], CannedModel([], fail_first=5))


def test_judge_requirements_score_invariant_to_requirement_order():
    replies = {"is it red?": "yes", "is it big?": "no", "is it new?": "yes"}

    class LookupJudge(CannedModel):
        def generate(self, context, cap, seed=None):
            prompt = context[0]["content"]
            for requirement, reply in replies.items():
                if requirement in prompt:
                    self.replies = [reply]
                    break
            return super().generate(context, cap, seed)

    forward = judge_requirements("a", list(replies), LookupJudge([]))
    backward = judge_requirements("a", list(reversed(list(replies))), LookupJudge([]))
    assert forward.score == backward.score == pytest.approx(2 / 3)


def test_judging_excerpt_prefers_answer_span():
    text, source = judging_excerpt("the span", "x" * 5000)
    assert (text, source) == ("the span", "answer-span")
    text, source = judging_excerpt(None, "x" * 5000)
    assert source == "tail"
    assert len(text) == 2000


def test_grade_sample_dispatch():
    math_q = Question(id="q", prompt="2+2?", gold="4", grading="exact-math")
    assert grade_sample(math_q, "4", "irrelevant").score == 1.0
    assert grade_sample(math_q, None, "no marker anywhere").score == 0.0

    none_q = Question(id="q2", prompt="hi", grading="none")
    assert grade_sample(none_q, "anything", "anything") is None

    rubric_q = Question(id="q3", prompt="write", grading="rubric", requirements=("short?",))
    graded = grade_sample(rubric_q, "ok", "long " * 600, judge=CannedModel(["yes"]))
    assert graded.score == 1.0
    assert graded.detail["excerpt_source"] == "answer-span"
    tail_graded = grade_sample(rubric_q, None, "long " * 600, judge=CannedModel(["no"]))
    assert tail_graded.detail["excerpt_source"] == "tail"
    with pytest.raises(GradingError):
        grade_sample(rubric_q, "ok", "ok", judge=None)

    code_q = Question(id="q4", prompt="print hi", grading="code")
    with pytest.raises(GradingError):
        grade_sample(code_q, "print('hi')", "print('hi')")
