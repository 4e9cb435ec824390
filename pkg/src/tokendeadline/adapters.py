"""Model handles: deterministic scripted mocks and a chat-completion client.

Every handle exposes ``generate(context, cap, seed=None)`` returning at most
``cap`` new tokens plus a stop reason, and ``count_tokens(text)``. The mock
counts tokens as whitespace-delimited chunks so its accounting is exact; the
remote client trusts endpoint-reported usage and falls back to a
chars-per-token estimate. A built-in fake endpoint serves mock scripts over
the standard server-sent-event wire protocol for integration tests.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
import sys
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Protocol, Sequence, runtime_checkable

import httpx

from .errors import TokenDeadlineError

logger = logging.getLogger(__name__)

Message = dict  # {"role": ..., "content": ...}

STOP_NATURAL = "natural"
STOP_CAP = "cap"
STOP_TRANSPORT = "transport-error"

_CHUNK_RE = re.compile(r"\S+\s*")


def text_chunks(text: str) -> list[str]:
    """Split text into word chunks, each carrying its trailing whitespace."""
    return _CHUNK_RE.findall(text)


@dataclass(frozen=True)
class Generation:
    text: str
    tokens_used: int
    stop_reason: str
    usage_reported: bool = True


@runtime_checkable
class ModelHandle(Protocol):
    model_id: str
    reports_token_usage: bool
    max_context: int
    concurrency: int
    seed_replayable: bool

    def generate(self, context: Sequence[Message], cap: int, seed: int | None = None) -> Generation:
        ...

    def count_tokens(self, text: str) -> int:
        ...


PERSONAS = ("overthinker", "compliant", "never-answers", "echo")

_FILLER_WORDS = (
    "hmm", "wait,", "let", "me", "re-check", "this", "step", "again,", "so",
    "the", "working", "continues", "perhaps", "consider", "another", "angle",
    "still", "verifying", "carefully", "now",
)


@dataclass(frozen=True)
class MockScript:
    """Deterministic persona script; identical script + seed means identical tokens.

    The overthinker plants its answer marker once at answer_position and keeps
    rambling afterwards; compliant stops right after answering; never-answers
    only rambles; echo loops the prompt back. wrong_answer_rate makes a
    seeded fraction of episodes answer incorrectly, and ramble_jitter varies
    the ramble length per episode so calibration sees a spread of spends.
    """

    persona: str
    answer_text: str = ""
    answer_position: int = 0
    seed: int = 0
    post_reminder: str = "ignores"
    wrong_answer_rate: float = 0.0
    ramble_tokens: int | None = None
    ramble_jitter: int = 0

    def __post_init__(self):
        if self.persona not in PERSONAS:
            raise ValueError(f"unknown persona: {self.persona!r}")
        if self.post_reminder not in ("answers-promptly", "ignores"):
            raise ValueError(f"unknown post-reminder behavior: {self.post_reminder!r}")
        if self.persona in ("overthinker", "compliant") and not self.answer_text:
            raise ValueError(f"{self.persona} persona needs an answer_text")
        if self.persona == "never-answers" and self.post_reminder == "answers-promptly":
            raise ValueError("never-answers cannot answer promptly")
        if not 0.0 <= self.wrong_answer_rate <= 1.0:
            raise ValueError("wrong_answer_rate must lie in [0, 1]")
        if self.answer_position < 0:
            raise ValueError("answer_position must be >= 0")


def _wrong_variant(answer: str) -> str:
    try:
        return str(int(answer) + 1)
    except ValueError:
        pass
    try:
        return str(float(answer) + 1.0)
    except ValueError:
        return answer + "?"


def _answer_chunks(answer: str) -> list[str]:
    return ["**Final ", "Answer:** ", f"{answer}\n"]


class _Stream:
    """Lazily materialized chunk stream; finite streams report exhaustion."""

    def __init__(self, chunk_iter, finite: bool):
        self._iter = iter(chunk_iter)
        self._finite = finite
        self._chunks: list[str] = []
        self._done = False

    def prefix(self, upto: int) -> tuple[list[str], bool]:
        while not self._done and len(self._chunks) < upto:
            try:
                self._chunks.append(next(self._iter))
            except StopIteration:
                self._done = True
        exhausted = self._finite and self._done and len(self._chunks) <= upto
        return self._chunks[:upto], exhausted


def _filler(rng: random.Random):
    while True:
        yield rng.choice(_FILLER_WORDS) + " "


class ScriptedMockModel:
    """Scripted personas behind the ModelHandle contract, keyed by prompt text.

    The script for a request is the one whose key appears in the first user
    message; position within a stream is recovered from the assistant tokens
    already present in the context, so segmented calls concatenate to the
    same text as a single uncapped call.
    """

    reports_token_usage = True
    seed_replayable = True

    def __init__(
        self,
        scripts: Mapping[str, MockScript],
        model_id: str = "mock",
        max_context: int = 1_000_000,
        concurrency: int = 8,
        default_script: MockScript | None = None,
    ):
        self.scripts = dict(scripts)
        self.model_id = model_id
        self.max_context = max_context
        self.concurrency = concurrency
        self.default_script = default_script
        self._cache: dict[tuple, _Stream] = {}
        self._lock = threading.Lock()

    def count_tokens(self, text: str) -> int:
        return len(text_chunks(text))

    def _match(self, context: Sequence[Message]) -> tuple[str, MockScript]:
        first_user = next((m["content"] for m in context if m.get("role") == "user"), "")
        best_key = None
        for key in self.scripts:
            if key in first_user and (best_key is None or len(key) > len(best_key)):
                best_key = key
        if best_key is not None:
            return best_key, self.scripts[best_key]
        if self.default_script is not None:
            return "", self.default_script
        raise ValueError("no mock script matches the prompt")

    def _episode_answer(self, script: MockScript, seed: int | None) -> str:
        if script.wrong_answer_rate:
            rng = random.Random(f"{script.seed}:{seed}:wrong")
            if rng.random() < script.wrong_answer_rate:
                return _wrong_variant(script.answer_text)
        return script.answer_text

    def _stream(self, kind: str, key: str, script: MockScript, seed: int | None) -> _Stream:
        cache_key = (kind, key, script, seed)
        with self._lock:
            stream = self._cache.get(cache_key)
            if stream is None:
                stream = self._build_stream(kind, key, script, seed)
                self._cache[cache_key] = stream
            return stream

    def _build_stream(self, kind: str, key: str, script: MockScript, seed: int | None) -> _Stream:
        answer = self._episode_answer(script, seed)
        if kind == "tail":
            if script.persona == "never-answers":
                return _Stream(_filler(random.Random(f"{script.seed}:{seed}:tail")), finite=False)
            return _Stream(_answer_chunks(answer), finite=True)
        if kind == "reminder":
            return _Stream(
                ["Okay, ", "finishing ", "now. "] + _answer_chunks(answer), finite=True
            )
        return _Stream(*self._base_iter(key, script, seed, answer))

    def _base_iter(self, key: str, script: MockScript, seed: int | None, answer: str):
        if script.persona == "echo":
            prompt_chunks = text_chunks(key) or ["... "]

            def cycle():
                while True:
                    yield from prompt_chunks

            return cycle(), False

        filler = _filler(random.Random(f"{script.seed}:{seed}:filler"))
        ramble = script.ramble_tokens
        if ramble is not None and script.ramble_jitter:
            ramble += random.Random(f"{script.seed}:{seed}:len").randint(0, script.ramble_jitter)

        if script.persona == "never-answers":
            if ramble is None:
                return filler, False

            def capped():
                for _ in range(ramble):
                    yield next(filler)

            return capped(), True

        def with_answer():
            for _ in range(script.answer_position):
                yield next(filler)
            yield from _answer_chunks(answer)
            if script.persona == "overthinker":
                if ramble is None:
                    yield from filler
                else:
                    for _ in range(ramble):
                        yield next(filler)

        return with_answer(), script.persona == "compliant" or ramble is not None

    @staticmethod
    def _is_interrupt(message: Message) -> bool:
        return message.get("role") == "user" and message.get("content", "").lstrip().startswith("<System>")

    @staticmethod
    def _is_terminator(message: Message) -> bool:
        content = message.get("content", "")
        return message.get("role") == "user" and (
            "out of time" in content or content.rstrip().endswith("**Final Answer:**")
        )

    def _assistant_tokens_after(self, context: Sequence[Message], index: int) -> int:
        return sum(
            self.count_tokens(m.get("content", ""))
            for i, m in enumerate(context)
            if i > index and m.get("role") == "assistant"
        )

    def generate(self, context: Sequence[Message], cap: int, seed: int | None = None) -> Generation:
        if cap < 1:
            raise ValueError("cap must be >= 1")
        key, script = self._match(context)
        assistant_text = "".join(
            m.get("content", "") for m in context if m.get("role") == "assistant"
        )
        term_idx = next(
            (i for i in range(len(context) - 1, -1, -1) if self._is_terminator(context[i])), None
        )
        reminder_idx = next((i for i, m in enumerate(context) if self._is_interrupt(m)), None)
        if term_idx is not None:
            stream = self._stream("tail", key, script, seed)
            pos = self._assistant_tokens_after(context, term_idx)
        elif (
            script.post_reminder == "answers-promptly"
            and reminder_idx is not None
            and "**Final Answer:**" not in assistant_text
            and "**Answer:**" not in assistant_text
        ):
            stream = self._stream("reminder", key, script, seed)
            pos = self._assistant_tokens_after(context, reminder_idx)
        else:
            stream = self._stream("base", key, script, seed)
            pos = self.count_tokens(assistant_text)
        chunks, exhausted = stream.prefix(pos + cap)
        out = chunks[pos : pos + cap]
        stop = STOP_NATURAL if exhausted else STOP_CAP
        return Generation(text="".join(out), tokens_used=len(out), stop_reason=stop)


class RemoteChatModel:
    """Streaming client for the de-facto chat-completion HTTP API.

    Transport failures are retried with exponential backoff; application
    errors (4xx) are not. Endpoints that ignore sampling seeds should be
    constructed with seed_replayable=False so run-log headers flag it.
    """

    reports_token_usage = True

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        api_key: str | None = None,
        temperature: float = 0.7,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.25,
        concurrency: int = 4,
        chars_per_token: float = 4.0,
        max_context: int = 128_000,
        model_id: str | None = None,
        seed_replayable: bool = True,
    ):
        self.url = endpoint_url.rstrip("/") + "/chat/completions"
        self.model_name = model_name
        self.model_id = model_id or model_name
        self.temperature = temperature
        self.retries = retries
        self.backoff = backoff
        self.concurrency = concurrency
        self.chars_per_token = chars_per_token
        self.max_context = max_context
        self.seed_replayable = seed_replayable
        self._sem = threading.BoundedSemaphore(concurrency)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "RemoteChatModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def count_tokens(self, text: str) -> int:
        return math.ceil(len(text) / self.chars_per_token)

    def _parse_sse(self, response: httpx.Response) -> tuple[str, str | None, dict | None]:
        parts: list[str] = []
        finish = None
        usage = None
        for line in response.iter_lines():
            if not line.startswith("data:"):
                continue
            data = line[len("data:") :].strip()
            if data == "[DONE]":
                break
            event = json.loads(data)
            for choice in event.get("choices") or []:
                content = (choice.get("delta") or {}).get("content")
                if content:
                    parts.append(content)
                if choice.get("finish_reason"):
                    finish = choice["finish_reason"]
            if event.get("usage"):
                usage = event["usage"]
        return "".join(parts), finish, usage

    def generate(self, context: Sequence[Message], cap: int, seed: int | None = None) -> Generation:
        if cap < 1:
            raise ValueError("cap must be >= 1")
        payload = {
            "model": self.model_name,
            "messages": list(context),
            "max_tokens": cap,
            "temperature": self.temperature,
            "stream": True,
            "stream_options": {"include_usage": True},
        }
        if seed is not None:
            payload["seed"] = seed
        for attempt in range(self.retries + 1):
            try:
                with self._sem:
                    with self._client.stream("POST", self.url, json=payload) as response:
                        if 400 <= response.status_code < 500:
                            body = response.read().decode("utf-8", "replace")
                            raise TokenDeadlineError(
                                f"endpoint rejected request ({response.status_code}): {body[:200]}"
                            )
                        if response.status_code >= 500:
                            raise httpx.HTTPStatusError(
                                f"server error {response.status_code}",
                                request=response.request,
                                response=response,
                            )
                        text, finish, usage = self._parse_sse(response)
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                logger.warning("transport failure from %s (attempt %d): %s", self.url, attempt + 1, exc)
                if attempt < self.retries:
                    time.sleep(self.backoff * (2**attempt))
                continue
            if usage and "completion_tokens" in usage:
                tokens = int(usage["completion_tokens"])
                usage_reported = True
            else:
                tokens = self.count_tokens(text)
                usage_reported = False
                logger.debug("no usage reported by %s; estimated %d tokens", self.url, tokens)
            stop = STOP_CAP if finish == "length" else STOP_NATURAL
            return Generation(text=text, tokens_used=tokens, stop_reason=stop, usage_reported=usage_reported)
        return Generation(text="", tokens_used=0, stop_reason=STOP_TRANSPORT, usage_reported=False)


class _FakeChatHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def do_POST(self):
        if self.path != "/v1/chat/completions":
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            self.send_error(400, "invalid JSON body")
            return
        delegate = self.server.delegate
        try:
            gen = delegate.generate(
                body.get("messages") or [],
                cap=int(body.get("max_tokens") or 16384),
                seed=body.get("seed"),
            )
        except Exception as exc:  # surface delegate bugs as server errors
            self.send_error(500, str(exc))
            return
        if gen.stop_reason == STOP_TRANSPORT:
            self.send_error(503, "upstream unavailable")
            return
        finish = "length" if gen.stop_reason == STOP_CAP else "stop"
        usage = {
            "prompt_tokens": 0,
            "completion_tokens": gen.tokens_used,
            "total_tokens": gen.tokens_used,
        }
        if body.get("stream"):
            self._stream_response(gen.text, finish, usage, body.get("model", "fake"))
        else:
            payload = json.dumps(
                {
                    "model": body.get("model", "fake"),
                    "choices": [
                        {"index": 0, "message": {"role": "assistant", "content": gen.text}, "finish_reason": finish}
                    ],
                    "usage": usage,
                }
            ).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

    def _stream_response(self, text: str, finish: str, usage: dict, model: str):
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Transfer-Encoding", "chunked")
        self.end_headers()

        def event(obj: dict):
            data = json.dumps(obj).encode("utf-8")
            frame = b"data: " + data + b"\n\n"
            self.wfile.write(f"{len(frame):x}\r\n".encode() + frame + b"\r\n")

        chunks = text_chunks(text)
        piece_size = 8
        for i in range(0, len(chunks), piece_size):
            event(
                {
                    "model": model,
                    "choices": [
                        {"index": 0, "delta": {"content": "".join(chunks[i : i + piece_size])}, "finish_reason": None}
                    ],
                }
            )
        event({"model": model, "choices": [{"index": 0, "delta": {}, "finish_reason": finish}]})
        event({"model": model, "choices": [], "usage": usage})
        done = b"data: [DONE]\n\n"
        self.wfile.write(f"{len(done):x}\r\n".encode() + done + b"\r\n")
        self.wfile.write(b"0\r\n\r\n")


class _QuietThreadingHTTPServer(ThreadingHTTPServer):
    def handle_error(self, request, client_address):
        # clients dropping keep-alive connections is routine, not an error
        exc = sys.exc_info()[1]
        if isinstance(exc, (ConnectionResetError, BrokenPipeError)):
            return
        super().handle_error(request, client_address)


class FakeChatEndpoint:
    """Threaded fake chat-completion server backed by any ModelHandle.

    Lets integration tests drive the full network path: engine -> remote
    client -> SSE wire -> scripted mock.
    """

    def __init__(self, delegate, host: str = "127.0.0.1", port: int = 0):
        self._server = _QuietThreadingHTTPServer((host, port), _FakeChatHandler)
        self._server.delegate = delegate
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def start(self) -> "FakeChatEndpoint":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "FakeChatEndpoint":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
