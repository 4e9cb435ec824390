from __future__ import annotations

import threading
import time

import pytest

from tokendeadline.adapters import (
    STOP_CAP,
    STOP_NATURAL,
    STOP_TRANSPORT,
    FakeChatEndpoint,
    Generation,
    MockScript,
    RemoteChatModel,
    ScriptedMockModel,
    text_chunks,
)
from tokendeadline.errors import TokenDeadlineError

PROMPT = "Compute 6 * 7 and state the result."


def model_for(script):
    return ScriptedMockModel({PROMPT: script}, model_id="mock")


def user(content):
    return {"role": "user", "content": content}


def assistant(content):
    return {"role": "assistant", "content": content}


def test_echo_persona_honors_cap_exactly():
    model = model_for(MockScript(persona="echo"))
    gen = model.generate([user(PROMPT)], cap=5, seed=0)
    assert gen.tokens_used == 5
    assert gen.stop_reason == STOP_CAP
    assert model.count_tokens(gen.text) == 5


def test_mock_determinism():
    script = MockScript(persona="overthinker", answer_text="9", answer_position=40)
    a = model_for(script).generate([user(PROMPT)], cap=100, seed=123)
    b = model_for(script).generate([user(PROMPT)], cap=100, seed=123)
    assert a == b
    c = model_for(script).generate([user(PROMPT)], cap=100, seed=124)
    assert c.tokens_used == a.tokens_used  # same shape, different filler
    assert c.text != a.text or script.answer_position == 0


def test_mock_wrong_answer_rate_is_seeded():
    script = MockScript(
        persona="compliant", answer_text="10", answer_position=2, wrong_answer_rate=0.5
    )
    model = model_for(script)
    answers = set()
    for seed in range(40):
        gen = model.generate([user(PROMPT)], cap=50, seed=seed)
        answers.add(gen.text.split("Answer:** ")[1].strip())
    assert answers == {"10", "11"}


def test_segmentation_transparency():
    script = MockScript(persona="overthinker", answer_text="9", answer_position=60)
    model = model_for(script)
    whole = model.generate([user(PROMPT)], cap=15, seed=5).text

    context = [user(PROMPT)]
    pieces = []
    for cap in (3, 5, 7):
        gen = model.generate(context, cap=cap, seed=5)
        pieces.append(gen.text)
        context.append(assistant(gen.text))
    assert "".join(pieces) == whole


def test_compliant_answers_promptly_after_reminder():
    script = MockScript(
        persona="compliant",
        answer_text="42",
        answer_position=500,
        post_reminder="answers-promptly",
    )
    model = model_for(script)
    context = [user(PROMPT), assistant("some partial thinking "), user("<System>hurry</System>")]
    gen = model.generate(context, cap=64, seed=0)
    assert "**Final Answer:** 42" in gen.text
    assert gen.tokens_used <= 20
    assert gen.stop_reason == STOP_NATURAL


def test_terminator_prompt_elicits_tail_answer():
    script = MockScript(persona="overthinker", answer_text="8", answer_position=999)
    model = model_for(script)
    context = [
        user(PROMPT),
        assistant("ramble "),
        user("I'm out of time, I need to provide my final answer now. **Final Answer:**"),
    ]
    gen = model.generate(context, cap=64, seed=0)
    assert "8" in gen.text


def test_count_tokens_matches_script_length():
    script = MockScript(persona="compliant", answer_text="1", answer_position=9)
    model = model_for(script)
    gen = model.generate([user(PROMPT)], cap=1000, seed=0)
    assert gen.stop_reason == STOP_NATURAL
    assert gen.tokens_used == 12  # 9 filler + 3 answer chunks
    assert model.count_tokens(gen.text) == 12
    assert model.count_tokens("") == 0


def test_unmatched_prompt_errors_without_default():
    model = model_for(MockScript(persona="echo"))
    with pytest.raises(ValueError):
        model.generate([user("unknown question")], cap=5)


def test_remote_count_tokens_fallback_ratio():
    model = RemoteChatModel("http://localhost:1/v1", "m", chars_per_token=4.0)
    assert model.count_tokens("x" * 10) == 3
    model.close()


def test_remote_adapter_passes_through_usage_counts():
    script = MockScript(persona="overthinker", answer_text="5", answer_position=20)
    mock = model_for(script)
    with FakeChatEndpoint(mock) as server:
        with RemoteChatModel(server.base_url, "mock", timeout=10.0) as remote:
            gen = remote.generate([user(PROMPT)], cap=30, seed=3)
    direct = mock.generate([user(PROMPT)], cap=30, seed=3)
    assert gen.text == direct.text
    assert gen.tokens_used == direct.tokens_used
    assert gen.usage_reported is True
    assert gen.stop_reason == direct.stop_reason


def test_remote_adapter_retries_transient_failures():
    class FlakyDelegate:
        model_id = "flaky"
        reports_token_usage = True
        seed_replayable = True

        def __init__(self):
            self.failures = 1

        def count_tokens(self, text):
            return len(text_chunks(text))

        def generate(self, context, cap, seed=None):
            if self.failures > 0:
                self.failures -= 1
                return Generation("", 0, STOP_TRANSPORT)
            return Generation("ok then ", 2, STOP_NATURAL)

    with FakeChatEndpoint(FlakyDelegate()) as server:
        with RemoteChatModel(server.base_url, "m", backoff=0.01, timeout=10.0) as remote:
            gen = remote.generate([user("hi")], cap=10)
    assert gen.stop_reason == STOP_NATURAL
    assert gen.text == "ok then "


def test_remote_adapter_gives_up_after_retries():
    class AlwaysDown:
        model_id = "down"
        reports_token_usage = True
        seed_replayable = True

        def count_tokens(self, text):
            return 0

        def generate(self, context, cap, seed=None):
            return Generation("", 0, STOP_TRANSPORT)

    with FakeChatEndpoint(AlwaysDown()) as server:
        with RemoteChatModel(server.base_url, "m", retries=2, backoff=0.01, timeout=10.0) as remote:
            gen = remote.generate([user("hi")], cap=10)
    assert gen.stop_reason == STOP_TRANSPORT
    assert gen.text == ""


def test_remote_adapter_does_not_retry_application_errors():
    script = MockScript(persona="echo")
    mock = ScriptedMockModel({PROMPT: script})
    with FakeChatEndpoint(mock) as server:
        bad_url = server.base_url.replace("/v1", "/nope")
        with RemoteChatModel(bad_url, "m", timeout=10.0) as remote:
            with pytest.raises(TokenDeadlineError):
                remote.generate([user(PROMPT)], cap=5)


def test_remote_adapter_respects_concurrency_limit():
    class SlowCounter:
        model_id = "slow"
        reports_token_usage = True
        seed_replayable = True

        def __init__(self):
            self.lock = threading.Lock()
            self.in_flight = 0
            self.max_in_flight = 0

        def count_tokens(self, text):
            return len(text_chunks(text))

        def generate(self, context, cap, seed=None):
            with self.lock:
                self.in_flight += 1
                self.max_in_flight = max(self.max_in_flight, self.in_flight)
            time.sleep(0.03)
            with self.lock:
                self.in_flight -= 1
            return Generation("ok ", 1, STOP_NATURAL)

    counter = SlowCounter()
    with FakeChatEndpoint(counter) as server:
        with RemoteChatModel(server.base_url, "m", concurrency=2, timeout=10.0) as remote:
            threads = [
                threading.Thread(target=remote.generate, args=([user("hi")], 5))
                for _ in range(8)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
    assert counter.max_in_flight <= 2


def test_fake_endpoint_supports_non_streaming_requests():
    script = MockScript(persona="overthinker", answer_text="3", answer_position=5)
    mock = model_for(script)
    import httpx

    with FakeChatEndpoint(mock) as server:
        resp = httpx.post(
            server.base_url + "/chat/completions",
            json={"model": "mock", "messages": [user(PROMPT)], "max_tokens": 12},
            timeout=10.0,
        )
    body = resp.json()
    assert resp.status_code == 200
    assert body["usage"]["completion_tokens"] == 12
    assert body["choices"][0]["message"]["content"]
