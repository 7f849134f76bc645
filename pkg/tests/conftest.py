"""Shared fixtures: synthetic bundles, scripted gateways, and a stub server."""

from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from graphvqa.gateway import (
    PRECOMPUTED_CAPTION,
    PRECOMPUTED_EMBED,
    SCRIPTED,
    ModelGateway,
    ProviderConfig,
    ScriptEntry,
)
from graphvqa.parsing import default_lexicon
from graphvqa.store import VideoBundle

NOUNS = ["boy", "girl", "dog", "toy", "ball", "book", "sword", "cup", "table", "person"]
VERBS = ["holds", "takes", "opens", "closes", "carries", "watches", "chases", "throws"]


@pytest.fixture(scope="session")
def lex():
    return default_lexicon()


def synthetic_caption(rng: random.Random) -> str:
    subject, obj = rng.sample(NOUNS, 2)
    verb = rng.choice(VERBS)
    return f"the {subject} {verb} the {obj}"


def make_bundle(video_id="vid", total_frames=60, caption_every=1, dim=None, seed=7) -> VideoBundle:
    """Bundle with generated captions on every `caption_every`-th frame and
    optional random embeddings of dimension `dim`."""
    rng = random.Random(seed)
    captions = {
        frame: synthetic_caption(rng)
        for frame in range(0, total_frames, caption_every)
    }
    embeddings = {}
    if dim:
        embeddings = {
            frame: [rng.uniform(-1.0, 1.0) for _ in range(dim)]
            for frame in range(total_frames)
        }
    return VideoBundle(
        video_id=video_id,
        total_frames=total_frames,
        captions=captions,
        embeddings=embeddings,
        embedding_dim=dim,
    ).validate()


def confident_entry(letter="A", missing="none"):
    return ScriptEntry(reply=f"answer: {letter}, confidence: 3, missing: {missing}")


def unsure_entry(letter="A", confidence=1):
    return ScriptEntry(
        reply=f"answer: {letter}, confidence: {confidence}, missing: need more frames"
    )


def scripted_gateway(entries, embed_dim=16, seed=0, with_captions=True,
                     with_embeddings=True) -> ModelGateway:
    """Gateway with scripted chat, precomputed captions, scripted embeddings."""
    return ModelGateway(
        chat=ProviderConfig(kind=SCRIPTED),
        caption=ProviderConfig(kind=PRECOMPUTED_CAPTION) if with_captions else None,
        embed=(
            ProviderConfig(kind=SCRIPTED, embed_dim=embed_dim, seed=seed)
            if with_embeddings
            else None
        ),
        chat_script=list(entries),
    )


class StubState:
    """Mutable behavior shared between a stub server and the test body."""

    def __init__(self):
        self.responses: list[tuple[int, str]] = []  # queue of (status, body)
        self.echo = False  # reply content derived from the request body
        self.requests: list[str] = []
        self.lock = threading.Lock()

    @property
    def request_count(self) -> int:
        return len(self.requests)


class _StubHandler(BaseHTTPRequestHandler):
    state: StubState = None

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length).decode("utf-8")
        with self.state.lock:
            self.state.requests.append(body)
            if self.state.echo:
                import hashlib

                tag = hashlib.sha256(body.encode()).hexdigest()[:12]
                status, reply = 200, json.dumps(
                    {"choices": [{"message": {"content": f"echo:{tag}"}}]}
                )
            elif self.state.responses:
                status, reply = self.state.responses.pop(0)
            else:
                status, reply = 200, json.dumps(
                    {"choices": [{"message": {"content": "ok"}}]}
                )
        payload = reply.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):  # silence test output
        pass


@pytest.fixture
def stub_server():
    state = StubState()
    handler = type("Handler", (_StubHandler,), {"state": state})
    server = HTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(
        target=lambda: server.serve_forever(poll_interval=0.02), daemon=True
    )
    thread.start()
    endpoint = f"http://127.0.0.1:{server.server_address[1]}"
    yield endpoint, state
    server.shutdown()
    server.server_close()


def remote_chat_config(endpoint, **overrides) -> ProviderConfig:
    defaults = dict(
        kind="RemoteChat",
        endpoint=endpoint,
        model_name="stub-model",
        max_retries=3,
        retry_backoff=0.001,
        timeout=5.0,
    )
    defaults.update(overrides)
    return ProviderConfig(**defaults)
