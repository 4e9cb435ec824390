from __future__ import annotations

import random
import re

import pytest
from hypothesis import given, strategies as st

from tokendeadline.adapters import MockScript, ScriptedMockModel
from tokendeadline.engine import (
    EpisodePolicy,
    build_interrupt_message,
    build_scheduling_prompt,
    detect_answer,
    force_terminate,
    interrupt_interval,
    run_episode,
)
from tokendeadline.errors import EpisodeError
from tokendeadline.records import SEGMENT_INTERRUPT, SEGMENT_MODEL
from tokendeadline.templates import DEFAULT_TEMPLATES

from conftest import CannedModel

PROMPT = "Compute 6 * 7 and state the result."


def overthinker_model(answer="42", position=150, ramble=4000, **kwargs):
    script = MockScript(
        persona="overthinker",
        answer_text=answer,
        answer_position=position,
        ramble_tokens=ramble,
        **kwargs,
    )
    return ScriptedMockModel({PROMPT: script}, model_id="mock")


def never_answers_model(ramble=None):
    script = MockScript(persona="never-answers", ramble_tokens=ramble)
    return ScriptedMockModel({PROMPT: script}, model_id="mock")


def compliant_model(answer="42", position=30, post_reminder="answers-promptly"):
    script = MockScript(
        persona="compliant",
        answer_text=answer,
        answer_position=position,
        post_reminder=post_reminder,
    )
    return ScriptedMockModel({PROMPT: script}, model_id="mock")


def test_interrupt_interval_values():
    assert interrupt_interval(1000) == 250
    assert interrupt_interval(300) == 150
    assert interrupt_interval(250) == 125
    assert interrupt_interval(2) == 1
    with pytest.raises(ValueError):
        interrupt_interval(1)


def test_scheduling_prompt_substitution():
    text = build_scheduling_prompt("2+2?", 500)
    assert "in 500 tokens" in text
    assert "2+2?" in text
    assert "**Answer:** or **Final Answer:**" in text
    assert "<System></System>" in text


def test_scheduling_prompt_no_pluralization():
    assert "in 1 tokens" in build_scheduling_prompt("q", 1)


def test_scheduling_prompt_preserves_braces():
    prompt = "Evaluate {x: {y}} with {deadline-ish} braces"
    # reference substitution that only touches the two placeholders
    expected = DEFAULT_TEMPLATES.scheduling.replace("{deadline}", "77").replace("{prompt}", prompt)
    assert build_scheduling_prompt(prompt, 77) == expected
    assert "{x: {y}}" in build_scheduling_prompt(prompt, 77)


def test_interrupt_message_substitution():
    msg = build_interrupt_message(250, 250)
    assert msg.startswith("<System>") and msg.endswith("</System>")
    assert "250 tokens" in msg
    degenerate = build_interrupt_message(0, 500)
    assert "0 tokens" in degenerate and "500 tokens" in degenerate
    with pytest.raises(ValueError):
        build_interrupt_message(-1, 5)


def test_detect_answer_single_marker():
    assert detect_answer("thus **Final Answer:** 42") == "42"


def test_detect_answer_absent():
    assert detect_answer("no markers here") is None


def test_detect_answer_takes_last_marker():
    assert detect_answer("**Answer:** 7 is tentative, **Final Answer:** 9") == "9"


def test_detect_answer_bounded_by_line():
    assert detect_answer("**Final Answer:** 42\nbut wait, let me reconsider") == "42"


def test_detect_answer_falls_to_next_line_when_marker_ends_line():
    assert detect_answer("**Answer:**\n\n  42  \nmore") == "42"


@given(st.text(alphabet=st.characters(blacklist_characters="*"), max_size=50))
def test_detect_answer_stable_under_marker_free_extension(extension):
    text = "preamble **Final Answer:** 42"
    base = detect_answer(text)
    extended = detect_answer(text + "\n" + extension)
    assert base == "42"
    assert extended == "42"


def test_detect_answer_idempotent():
    text = "**Answer:** left\nright"
    assert detect_answer(text) == detect_answer(text)


def test_episode_state_phases_only_move_forward():
    from tokendeadline.engine import EpisodeState

    state = EpisodeState()
    state.advance("running")
    state.spend(10)
    state.spend(0)
    assert state.elapsed == 10
    state.advance("terminating")
    with pytest.raises(ValueError):
        state.advance("running")
    with pytest.raises(ValueError):
        state.spend(-1)
    state.advance("done")


def test_policy_invariants():
    with pytest.raises(ValueError):
        EpisodePolicy.terminator(deadline=1)
    with pytest.raises(ValueError):
        EpisodePolicy.naive(deadline=0)
    with pytest.raises(ValueError):
        EpisodePolicy(mode="base", deadline=10)
    assert EpisodePolicy.terminator(deadline=1000).interrupt_interval == 250
    with pytest.raises(ValueError):
        _ = EpisodePolicy.base().interrupt_interval


def test_run_episode_overthinker_detected_at_first_boundary():
    model = overthinker_model(answer="42", position=150, ramble=4000)
    result = run_episode(model, PROMPT, EpisodePolicy.terminator(deadline=500), seed=1)
    assert result.answer == "42"
    assert result.spend <= 250
    assert result.interrupts == 0
    assert result.forced is False


def test_run_episode_never_answers_forced_at_deadline():
    model = never_answers_model()
    policy = EpisodePolicy.terminator(deadline=400, forced_tail_cap=64)
    result = run_episode(model, PROMPT, policy, seed=1)
    assert result.forced is True
    assert result.spend <= 400 + 64
    positions = _interrupt_positions(result)
    assert positions == [200]  # interval = min(250, 400/2)


def test_run_episode_detection_at_deadline_beats_forcing():
    model = overthinker_model(answer="42", position=900, ramble=4000)
    result = run_episode(model, PROMPT, EpisodePolicy.terminator(deadline=1000), seed=1)
    assert result.answer == "42"
    assert result.forced is False
    assert _interrupt_positions(result) == [250, 500, 750]


def _interrupt_positions(result):
    positions = []
    elapsed = 0
    for segment in result.transcript:
        if segment.kind == SEGMENT_MODEL:
            elapsed += segment.tokens
        elif segment.kind == SEGMENT_INTERRUPT:
            positions.append(elapsed)
    return positions


def test_interrupt_arithmetic_elapsed_plus_remaining_is_deadline():
    model = never_answers_model()
    deadline = 900
    result = run_episode(model, PROMPT, EpisodePolicy.terminator(deadline=deadline), seed=1)
    numbers = re.compile(r"I have used (\d+) tokens, and I have (\d+) tokens left")
    checked = 0
    for segment in result.transcript:
        if segment.kind == SEGMENT_INTERRUPT:
            m = numbers.search(segment.text)
            assert m is not None
            assert int(m.group(1)) + int(m.group(2)) == deadline
            checked += 1
    assert checked == len(_interrupt_positions(result)) > 0


def test_naive_mode_never_interrupts():
    model = never_answers_model()
    result = run_episode(model, PROMPT, EpisodePolicy.naive(deadline=400), seed=1)
    assert result.interrupts == 0
    assert result.forced is True
    assert result.spend <= 400 + 64


def test_naive_mode_detects_answer_in_single_segment():
    model = compliant_model(position=30)
    result = run_episode(model, PROMPT, EpisodePolicy.naive(deadline=400), seed=1)
    assert result.forced is False
    assert result.answer == "42"
    assert result.interrupts == 0


def test_base_mode_never_injects_and_marks_truncation():
    model = overthinker_model(position=150, ramble=4000)
    result = run_episode(model, PROMPT, EpisodePolicy.base(), seed=1)
    assert all(not s.injected for s in result.transcript)
    assert result.deadline is None
    assert result.truncated is False  # natural stop before the safety cap
    assert result.answer == "42"

    capped = run_episode(model, PROMPT, EpisodePolicy.base(safety_cap=100), seed=1)
    assert capped.truncated is True
    assert capped.spend == 100


def test_forced_tail_extracts_marker():
    model = compliant_model(position=700, post_reminder="ignores")
    # deadline too small to reach the scripted answer; tail answers via marker
    result = run_episode(model, PROMPT, EpisodePolicy.terminator(deadline=300), seed=1)
    assert result.forced is True
    assert result.answer == "42"
    assert result.answer_unparsed is False


def test_forced_tail_without_marker_is_unparsed_best_effort():
    model = never_answers_model()
    result = run_episode(model, PROMPT, EpisodePolicy.terminator(deadline=200), seed=1)
    assert result.forced is True
    assert result.answer_unparsed is True
    assert result.answer  # verbatim tail text
    assert "**" not in result.answer


def test_forced_tail_cap_holds_across_random_episodes():
    rng = random.Random(7)
    for _ in range(100):
        cap = rng.randint(1, 80)
        deadline = rng.randint(2, 600)
        model = never_answers_model()
        policy = EpisodePolicy.terminator(deadline=deadline, forced_tail_cap=cap)
        result = run_episode(model, PROMPT, policy, seed=rng.randint(0, 10_000))
        tail = result.transcript[-1]
        assert tail.kind == SEGMENT_MODEL
        assert tail.tokens <= cap
        assert result.spend <= deadline + cap


def test_episode_deterministic_for_same_script_seed_policy():
    policy = EpisodePolicy.terminator(deadline=700)
    first = run_episode(overthinker_model(), PROMPT, policy, seed=99)
    second = run_episode(overthinker_model(), PROMPT, policy, seed=99)
    assert first == second
    different = run_episode(overthinker_model(), PROMPT, policy, seed=100)
    assert different.spend == first.spend  # same boundaries either way


def test_transport_failure_carries_partial_transcript():
    flaky = CannedModel([], fail_first=10)
    with pytest.raises(EpisodeError) as excinfo:
        run_episode(flaky, PROMPT, EpisodePolicy.terminator(deadline=400), seed=1)
    assert excinfo.value.transcript == ()

    # failure after one good segment keeps that segment in the transcript
    class FailsSecond(CannedModel):
        def generate(self, context, cap, seed=None):
            if self.calls >= 1:
                self.fail_first = 1
            return super().generate(context, cap, seed)

    flaky2 = FailsSecond(["thinking " * 200, "more "])
    with pytest.raises(EpisodeError) as excinfo2:
        run_episode(flaky2, PROMPT, EpisodePolicy.terminator(deadline=600), seed=1)
    assert len(excinfo2.value.transcript) >= 1


def test_force_terminate_direct():
    model = CannedModel(["**Final Answer:** B"])
    context = [{"role": "user", "content": "q"}]
    tail = force_terminate(model, context, EpisodePolicy.terminator(deadline=100), seed=0)
    assert tail.answer == "B"
    assert tail.unparsed is False
    assert context[-1]["role"] == "assistant"
