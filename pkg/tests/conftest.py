"""Shared fixtures: repo paths, tiny KBs, and a loopback chat-completion stub."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest
import yaml

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def main_config_path() -> Path:
    return FIXTURES / "config.yaml"


@pytest.fixture(scope="session")
def kb_main():
    from asfbench.kb import load_kb

    return load_kb(FIXTURES / "kb.yaml")


MINI_KB = {
    "categories": ["metal", "mount"],
    "parts": [
        {
            "id": "gear",
            "name": "gear",
            "category": "metal",
            "attributes": {},
            "docs": [
                {"role": "PartsAdvisor", "text": "gear is steel"},
                {"role": "AssemblyGuide", "text": "gear goes on the shaft"},
            ],
        },
        {
            "id": "motor",
            "name": "motor",
            "category": "mount",
            "attributes": {},
            "docs": [{"role": "PartsAdvisor", "text": "motor torque spec"}],
        },
    ],
    "steps": [
        {"id": 1, "all_of": {"gear": 1}, "any_of": {}, "forbid": []},
        {"id": 2, "all_of": {"motor": 1}, "any_of": {}, "forbid": []},
    ],
    "workflow": {1: [2], 2: []},
    "phrases": [
        {"text": "gear is steel", "category": "metal"},
        {"text": "motor torque", "category": "mount"},
    ],
    "risk_phrases": [],
    "rubrics": {
        "r1": {"required": [["gear"]], "forbidden": []},
    },
}


@pytest.fixture()
def mini_kb(tmp_path):
    from asfbench.kb import load_kb

    path = tmp_path / "mini_kb.yaml"
    path.write_text(yaml.safe_dump(MINI_KB, sort_keys=False))
    return load_kb(path)


def write_mini_kb(tmp_path: Path, mutate=None) -> Path:
    doc = json.loads(json.dumps(MINI_KB))
    if mutate:
        mutate(doc)
    path = tmp_path / "kb.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        self.server.requests.append(body)  # type: ignore[attr-defined]
        reply = self.server.reply_fn(body)  # type: ignore[attr-defined]
        payload = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):  # keep test output clean
        pass


class ChatStub:
    """Loopback chat-completion server recording every request body."""

    def __init__(self, text="stub answer text", completion_tokens=17):
        self.text = text
        self.completion_tokens = completion_tokens
        self.server = HTTPServer(("127.0.0.1", 0), _StubHandler)
        self.server.requests = []
        self.server.reply_fn = self._reply
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def _reply(self, body):
        return {
            "id": "chatcmpl-stub",
            "object": "chat.completion",
            "choices": [
                {"index": 0, "message": {"role": "assistant", "content": self.text},
                 "finish_reason": "stop"}
            ],
            "usage": {
                "prompt_tokens": 5,
                "completion_tokens": self.completion_tokens,
                "total_tokens": 5 + self.completion_tokens,
            },
        }

    @property
    def requests(self):
        return self.server.requests

    @property
    def endpoint(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture()
def chat_stub():
    with ChatStub() as stub:
        yield stub
