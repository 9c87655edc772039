from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from ambidebate.backends import ScriptedBackend, ScriptRule
from ambidebate.dataset import generate_dataset
from ambidebate.engine import DebateConfig

# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


ROSTER = ("Llama3-8B-instruct", "Gemma2-9B-it", "Mistral-7B-instruct")

CLEAR = "REASONING: The command is precise.\nVERDICT: CLEAR"
QUESTION = "REASONING: The quantity is vague.\nVERDICT: QUESTION: How many red blocks should I move?"
AGREE = "STANCE: AGREE\nREASONING: Fine as proposed.\nALT_QUESTION: NONE"
DISAGREE = "STANCE: DISAGREE\nREASONING: The quantity is vague.\nALT_QUESTION: Exactly how many blocks?"


@pytest.fixture(scope="session")
def dataset60():
    return generate_dataset(7, {"numerical": 20, "attribute": 20, "spatial": 20})


@pytest.fixture
def config():
    return DebateConfig(roster=ROSTER)


def scripted_roster(leader_text=QUESTION, follower_text=AGREE, baseline_text=QUESTION):
    """Every model proposes ``leader_text`` and always answers ``follower_text`` as a follower."""
    rules = [
        ScriptRule((leader_text,), role="leader", cycle=True),
        ScriptRule((follower_text,), role="follower", cycle=True),
        ScriptRule((baseline_text,), role="baseline", cycle=True),
    ]
    return {m: ScriptedBackend(m, rules) for m in ROSTER}


class RecordingServer:
    """Minimal OpenAI-compatible server that records every request body."""

    def __init__(self):
        self.requests: list[dict] = []
        self.raw_bodies: list[bytes] = []
        self.headers: list[dict] = []
        self.replies: list[str] = []
        self.default_reply = QUESTION
        self.status = 200
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, status, payload):
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path.endswith("/models"):
                    self._send(200, {"data": [{"id": "mock"}]})
                else:
                    self._send(404, {"error": "not found"})

            def do_POST(self):
                raw = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                outer.raw_bodies.append(raw)
                outer.headers.append(dict(self.headers))
                outer.requests.append(json.loads(raw))
                if outer.status != 200:
                    self._send(outer.status, {"error": "boom"})
                    return
                text = outer.replies.pop(0) if outer.replies else outer.default_reply
                self._send(
                    200,
                    {
                        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
                        "usage": {"prompt_tokens": 10, "completion_tokens": 5, "total_tokens": 15},
                    },
                )

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        return f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"


@pytest.fixture
def mock_server():
    server = RecordingServer()
    server.thread.start()
    yield server
    server.httpd.shutdown()
    server.httpd.server_close()


@pytest.fixture
def closed_port() -> int:
    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port
