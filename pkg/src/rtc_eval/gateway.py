"""Uniform generation interface: a minimal HTTP endpoint client plus
deterministic local mock models.

The wire protocol is a single POST with {model, prompt, temperature,
max_tokens, n} returning {completions: [text, ...]}. Mock kinds compute
locally from request metadata and never touch the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass
from typing import Callable, Mapping

logger = logging.getLogger(__name__)

MODEL_KINDS = ("remote", "mock_oracle", "mock_echo", "mock_scripted")
API_KEY_ENV = "RTC_API_KEY"
ORACLE_FORWARD_DESCRIPTION = "Performs the step required by the surrounding code."


class GenerationError(RuntimeError):
    """Transport or protocol failure that survived the retry budget."""


@dataclass
class ModelSpec:
    model_id: str
    kind: str = "remote"
    endpoint_url: str | None = None
    max_concurrent_requests: int = 4
    requests_per_minute: int | None = None
    retry_limit: int = 3
    timeout_seconds: float = 60.0
    script: Mapping[str, Mapping] | None = None  # mock_scripted only

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint_url:
            raise ValueError("remote models require endpoint_url")
        if self.max_concurrent_requests < 1 or self.retry_limit < 0:
            raise ValueError("limits must be positive")
        if self.requests_per_minute is not None and self.requests_per_minute < 1:
            raise ValueError("requests_per_minute must be positive")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float
    max_output_chars: int
    n: int = 1
    # Local-only task context (direction, reference outputs, rng seed);
    # never serialized onto the wire.
    metadata: Mapping | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_chars < 1:
            raise ValueError("max_output_chars must be >= 1")
        if self.n < 1:
            raise ValueError("n must be >= 1")


class RateLimiter:
    """Sliding-window limiter: in any 60 s window at most per_minute grants.

    The clock and sleep functions are injectable so tests can drive a
    virtual minute.
    """

    WINDOW_SECONDS = 60.0

    def __init__(
        self,
        per_minute: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.per_minute = per_minute
        self._clock = clock
        self._sleep = sleep
        self._window: deque[float] = deque()
        self._lock = threading.Lock()
        self.grants: list[float] = []

    def acquire(self) -> float:
        while True:
            with self._lock:
                now = self._clock()
                while self._window and self._window[0] <= now - self.WINDOW_SECONDS:
                    self._window.popleft()
                if len(self._window) < self.per_minute:
                    self._window.append(now)
                    self.grants.append(now)
                    return now
                wait = self._window[0] + self.WINDOW_SECONDS - now
            self._sleep(max(wait, 0.0))


def _stable_rng(*parts) -> random.Random:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class ModelGateway:
    """Shared, thread-safe generation front; owns retries and limits."""

    def __init__(
        self,
        spec: ModelSpec,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.spec = spec
        self._sleep = sleep
        self.rate_limiter = (
            RateLimiter(spec.requests_per_minute, clock, sleep)
            if spec.requests_per_minute
            else None
        )
        self._slots = threading.BoundedSemaphore(spec.max_concurrent_requests)
        self._greedy_lock = threading.Lock()
        self._greedy_seen: dict[str, str] = {}
        self.greedy_mismatches = 0

    def generate(self, request: GenerationRequest) -> list[str]:
        """Exactly request.n completion texts, or GenerationError."""
        if self.spec.kind == "remote":
            return self._generate_remote(request)
        return self._generate_mock(request)

    # -- mocks ---------------------------------------------------------

    def _generate_mock(self, request: GenerationRequest) -> list[str]:
        meta = dict(request.metadata or {})
        direction = meta.get("direction", "forward")
        if self.spec.kind == "mock_oracle":
            if direction == "backward":
                text = meta.get("reference_output")
                if text is None:
                    raise GenerationError("oracle mock needs reference_output metadata")
            else:
                text = ORACLE_FORWARD_DESCRIPTION
            return [text] * request.n
        if self.spec.kind == "mock_echo":
            if direction == "backward" and "echo_output" in meta:
                return [meta["echo_output"]] * request.n
            return [request.prompt] * request.n
        # mock_scripted
        script = self.spec.script or {}
        task_id = meta.get("task_id", "")
        entry = script.get(task_id) or script.get("*")
        if entry is None:
            raise GenerationError(f"no script entry for task {task_id!r}")
        pool = entry.get(f"{direction}_pool")
        if pool:
            rng = _stable_rng(meta.get("rng_seed"), task_id, direction)
            return [pool[rng.randrange(len(pool))] for _ in range(request.n)]
        scripted = entry.get(direction)
        if not scripted:
            raise GenerationError(f"script entry for {task_id!r} lacks {direction!r} outputs")
        out = list(scripted[: request.n])
        while len(out) < request.n:
            out.append(scripted[-1])
        return out

    # -- remote --------------------------------------------------------

    def _generate_remote(self, request: GenerationRequest) -> list[str]:
        body = json.dumps(
            {
                "model": self.spec.model_id,
                "prompt": request.prompt,
                "temperature": request.temperature,
                "max_tokens": math.ceil(request.max_output_chars / 2),
                "n": request.n,
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(self.spec.retry_limit + 1):
            if attempt:
                self._sleep(0.5 * 2 ** (attempt - 1))
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                completions = self._post(body, headers)
            except (urllib.error.URLError, OSError, ValueError, KeyError) as exc:
                last_error = exc
                logger.warning(
                    "generation attempt %d/%d failed: %s",
                    attempt + 1,
                    self.spec.retry_limit + 1,
                    exc,
                )
                continue
            if len(completions) != request.n:
                last_error = GenerationError(
                    f"endpoint returned {len(completions)} completions, wanted {request.n}"
                )
                continue
            if request.temperature == 0.0:
                self._check_greedy_determinism(request.prompt, completions[0])
            return completions
        raise GenerationError(
            f"generation failed after {self.spec.retry_limit + 1} attempts: {last_error}"
        )

    def _post(self, body: bytes, headers: dict[str, str]) -> list[str]:
        with self._slots:
            req = urllib.request.Request(
                self.spec.endpoint_url, data=body, headers=headers, method="POST"
            )
            with urllib.request.urlopen(req, timeout=self.spec.timeout_seconds) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        completions = payload["completions"]
        if not isinstance(completions, list) or not all(isinstance(c, str) for c in completions):
            raise ValueError("malformed completions payload")
        return completions

    def _check_greedy_determinism(self, prompt: str, completion: str) -> None:
        key = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        with self._greedy_lock:
            seen = self._greedy_seen.get(key)
            if seen is None:
                self._greedy_seen[key] = completion
            elif seen != completion:
                self.greedy_mismatches += 1
                logger.warning(
                    "endpoint returned different texts for identical greedy request"
                )


def generate(spec: ModelSpec, request: GenerationRequest) -> list[str]:
    """One-shot convenience over a fresh gateway; long-lived callers should
    hold a ModelGateway so rate limits and retries share state."""
    return ModelGateway(spec).generate(request)


GeneratorFn = Callable[[str, float, int, int, Mapping | None], list[str]]


def make_generator(gateway: ModelGateway) -> GeneratorFn:
    """Adapt a gateway to the (prompt, temperature, max_chars, n, metadata)
    callable the round-trip engine consumes."""

    def generator(
        prompt: str,
        temperature: float,
        max_output_chars: int,
        n: int,
        metadata: Mapping | None = None,
    ) -> list[str]:
        request = GenerationRequest(
            prompt=prompt,
            temperature=temperature,
            max_output_chars=max_output_chars,
            n=n,
            metadata=metadata,
        )
        return gateway.generate(request)

    return generator
