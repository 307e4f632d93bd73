"""Bundled stub endpoint speaking the gateway wire protocol.

Used by the conformance tests and handy as a dry-run target. The stub
treats one token as two characters, so completions are clamped to
2 * max_tokens characters, mirroring how a real endpoint would honor the
token budget.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubServer:
    """Threaded local endpoint with scriptable behavior.

    fail_times: number of leading requests answered with HTTP 500.
    completion_fn: body -> list[str]; defaults to deterministic
    prompt-derived payloads.
    """

    def __init__(self, completion_fn=None, fail_times: int = 0):
        self.completion_fn = completion_fn or self._default_completions
        self.fail_times = fail_times
        self.requests: list[dict] = []  # wire capture: parsed request bodies
        self.max_concurrent = 0
        self._active = 0
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._make_handler())
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @staticmethod
    def _default_completions(body: dict) -> list[str]:
        prompt = body.get("prompt", "")
        return [f"stub-{i}:{prompt}" for i in range(body.get("n", 1))]

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1/generate"

    def start(self) -> "StubServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _make_handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 - http.server API
                with stub._lock:
                    stub._active += 1
                    stub.max_concurrent = max(stub.max_concurrent, stub._active)
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    body = json.loads(self.rfile.read(length))
                    with stub._lock:
                        stub.requests.append(
                            {"time": time.monotonic(), "body": body,
                             "auth": self.headers.get("Authorization")}
                        )
                        should_fail = stub.fail_times > 0
                        if should_fail:
                            stub.fail_times -= 1
                    if should_fail:
                        self._respond(500, {"error": "scripted failure"})
                        return
                    completions = stub.completion_fn(body)
                    limit = 2 * int(body.get("max_tokens", 1))
                    completions = [c[:limit] for c in completions]
                    self._respond(200, {"completions": completions})
                finally:
                    with stub._lock:
                        stub._active -= 1

            def _respond(self, status: int, payload: dict) -> None:
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):  # silence default stderr chatter
                pass

        return Handler
