"""Uniform access to chat, captioning, and embedding backends.

Provider kinds:

- RemoteChat / RemoteEmbed: OpenAI-compatible endpoints. Chat POSTs to
  {endpoint}/v1/chat/completions with model, messages, temperature and reads
  the first choice's message content; embeddings POST to
  {endpoint}/v1/embeddings. The API key is read from the configured
  environment variable and sent as a bearer token. Transient failures
  (connection errors, timeouts, HTTP 429/5xx) retry with exponential backoff
  up to max_retries; every decode failure surfaces as a GatewayError.
- PrecomputedCaption / PrecomputedEmbed: served from a video bundle's tables.
- Scripted: deterministic stand-ins for tests. Scripted chat replays the
  first matching script entry; scripted embeddings are seeded hashes of the
  input expanded to the configured dimension and unit-normalized.

Remote responses are cached by a hash of (provider id, request body); the
cache can persist to disk so eval reruns cost nothing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import requests

from .errors import (
    GatewayConfigError,
    GatewayError,
    MissingCaptionError,
    MissingEmbeddingError,
    DimensionError,
)
from .store import VideoBundle

logger = logging.getLogger(__name__)

REMOTE_CHAT = "RemoteChat"
REMOTE_EMBED = "RemoteEmbed"
PRECOMPUTED_CAPTION = "PrecomputedCaption"
PRECOMPUTED_EMBED = "PrecomputedEmbed"
SCRIPTED = "Scripted"

_KINDS = {REMOTE_CHAT, REMOTE_EMBED, PRECOMPUTED_CAPTION, PRECOMPUTED_EMBED, SCRIPTED}
_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})

Message = tuple[str, str]


@dataclass
class ProviderConfig:
    """Configuration for one backend lane (chat, caption, or embed)."""

    kind: str
    endpoint: str = ""
    model_name: str = ""
    api_key_env: str = ""
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    script_path: str = ""
    embed_dim: int = 64
    seed: int = 0
    retry_backoff: float = 0.25
    max_inflight: int = 4

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise GatewayConfigError(f"unknown provider kind {self.kind!r}")
        if self.kind in (REMOTE_CHAT, REMOTE_EMBED) and not (self.endpoint and self.model_name):
            raise GatewayConfigError(f"{self.kind} requires endpoint and model_name")

    @property
    def provider_id(self) -> str:
        return f"{self.kind}:{self.endpoint}:{self.model_name}:{self.seed}"

    def api_key(self) -> Optional[str]:
        if not self.api_key_env:
            return None
        key = os.environ.get(self.api_key_env)
        if not key:
            raise GatewayConfigError(
                f"API key environment variable {self.api_key_env!r} is not set"
            )
        return key


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted chat reply; matched in order, first hit wins."""

    reply: str
    round: Optional[int] = None
    contains: Optional[str] = None
    contains_all: tuple[str, ...] = ()

    @property
    def is_catch_all(self) -> bool:
        return self.round is None and self.contains is None and not self.contains_all

    def matches(self, call_index: int, prompt: str) -> bool:
        if self.round is not None and call_index != self.round:
            return False
        if self.contains is not None and self.contains not in prompt:
            return False
        if self.contains_all and not all(s in prompt for s in self.contains_all):
            return False
        return True


def load_script(path: Union[str, Path]) -> list[ScriptEntry]:
    """Read a script file: one JSON object per line, `#` comments allowed.

    Keys: reply (required), round (int), contains (str), contains_all (list).
    """
    entries = []
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GatewayConfigError(f"{path}:{line_no}: invalid script entry: {exc}") from exc
        if not isinstance(obj, dict) or "reply" not in obj:
            raise GatewayConfigError(f"{path}:{line_no}: script entry needs a 'reply' field")
        entries.append(
            ScriptEntry(
                reply=str(obj["reply"]),
                round=obj.get("round"),
                contains=obj.get("contains"),
                contains_all=tuple(obj.get("contains_all", ())),
            )
        )
    return entries


class ScriptedChat:
    """Replays script entries; keeps a per-instance 1-based call counter."""

    def __init__(self, entries: Sequence[ScriptEntry]):
        if not entries:
            raise GatewayConfigError("scripted chat needs at least one entry")
        if not entries[-1].is_catch_all:
            raise GatewayConfigError("the final script entry must be a catch-all")
        self.entries = list(entries)
        self.calls = 0

    def reply(self, prompt: str) -> str:
        self.calls += 1
        for entry in self.entries:
            if entry.matches(self.calls, prompt):
                return entry.reply
        # unreachable: the last entry matches everything
        return self.entries[-1].reply


def pseudo_embedding(text: str, dim: int, seed: int = 0) -> list[float]:
    """Deterministic unit-norm vector derived from a hash of the input."""
    if dim < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {dim}")
    values: list[float] = []
    block = 0
    while len(values) < dim:
        digest = hashlib.sha256(f"{seed}:{block}:{text}".encode("utf-8")).digest()
        for i in range(0, len(digest) - 3, 4):
            values.append(int.from_bytes(digest[i:i + 4], "big") / 2**31 - 1.0)
        block += 1
    values = values[:dim]
    norm = math.sqrt(sum(v * v for v in values))
    if norm == 0.0:
        values[0] = 1.0
        norm = 1.0
    return [v / norm for v in values]


class ResponseCache:
    """Thread-safe response cache, optionally persisted as a JSON file."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._data: dict[str, object] = {}
        if self.path and self.path.exists():
            self._data = json.loads(self.path.read_text(encoding="utf-8"))

    @staticmethod
    def key(provider_id: str, request_body: str) -> str:
        return hashlib.sha256(f"{provider_id}\x00{request_body}".encode("utf-8")).hexdigest()

    def get(self, key: str):
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, value) -> None:
        with self._lock:
            self._data[key] = value
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_text(
                    json.dumps(self._data, sort_keys=True, ensure_ascii=False),
                    encoding="utf-8",
                )


class ModelGateway:
    """One object bundling the chat, caption, and embed lanes.

    Safe for concurrent use across sessions; remote calls are limited by a
    per-provider in-flight semaphore and cache access is synchronized.
    """

    def __init__(
        self,
        chat: Optional[ProviderConfig] = None,
        caption: Optional[ProviderConfig] = None,
        embed: Optional[ProviderConfig] = None,
        cache: Optional[ResponseCache] = None,
        chat_script: Optional[Sequence[ScriptEntry]] = None,
    ):
        self.chat_cfg = chat
        self.caption_cfg = caption
        self.embed_cfg = embed
        self.cache = cache
        self._scripted_chat: Optional[ScriptedChat] = None
        if chat is not None and chat.kind == SCRIPTED:
            entries = list(chat_script) if chat_script else load_script(chat.script_path)
            self._scripted_chat = ScriptedChat(entries)
        self._semaphores: dict[str, threading.Semaphore] = {}

    # -- chat -----------------------------------------------------------------

    @property
    def has_chat(self) -> bool:
        return self.chat_cfg is not None

    def chat(self, messages: Sequence[Message]) -> str:
        """Return the assistant's reply text for a message list."""
        if not messages:
            raise ValueError("messages must be nonempty")
        cfg = self._require(self.chat_cfg, "chat")
        if cfg.kind == SCRIPTED:
            prompt = "\n".join(text for _, text in messages)
            return self._scripted_chat.reply(prompt)
        if cfg.kind != REMOTE_CHAT:
            raise GatewayConfigError(f"provider kind {cfg.kind} cannot serve chat")
        body = json.dumps(
            {
                "model": cfg.model_name,
                "messages": [{"role": role, "content": text} for role, text in messages],
                "temperature": cfg.temperature,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        payload = self._post_with_retries(cfg, f"{cfg.endpoint.rstrip('/')}/v1/chat/completions", body)
        try:
            reply = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat payload: missing {exc!r}") from exc
        if not isinstance(reply, str):
            raise GatewayError(f"malformed chat payload: content is {type(reply).__name__}")
        return reply

    # -- captions ---------------------------------------------------------------

    @property
    def has_captioner(self) -> bool:
        return self.caption_cfg is not None

    def can_caption(self, frame_index: int, bundle: VideoBundle) -> bool:
        if self.caption_cfg is None:
            return False
        if self.caption_cfg.kind == PRECOMPUTED_CAPTION:
            return frame_index in bundle.captions
        return True

    def caption(self, frame_index: int, bundle: VideoBundle) -> str:
        """Caption one frame from the bundle table or the remote captioner."""
        cfg = self._require(self.caption_cfg, "caption")
        if cfg.kind == PRECOMPUTED_CAPTION:
            if frame_index not in bundle.captions:
                raise MissingCaptionError(
                    f"no caption for frame {frame_index} of video {bundle.video_id!r}"
                )
            return bundle.captions[frame_index]
        if cfg.kind != REMOTE_CHAT:
            raise GatewayConfigError(f"provider kind {cfg.kind} cannot serve captions")
        body = json.dumps(
            {
                "model": cfg.model_name,
                "messages": [
                    {
                        "role": "user",
                        "content": f"Caption frame {frame_index} of video {bundle.video_id}.",
                    }
                ],
                "temperature": cfg.temperature,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        payload = self._post_with_retries(cfg, f"{cfg.endpoint.rstrip('/')}/v1/chat/completions", body)
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed caption payload: missing {exc!r}") from exc
        return str(text)

    # -- embeddings ---------------------------------------------------------------

    @property
    def has_embedder(self) -> bool:
        return self.embed_cfg is not None

    def embed(self, text_or_frame: Union[str, int], bundle: Optional[VideoBundle] = None) -> list[float]:
        """Embed a query string or a frame index. Same input, same vector."""
        cfg = self._require(self.embed_cfg, "embed")
        if cfg.kind == PRECOMPUTED_EMBED:
            if not isinstance(text_or_frame, int):
                raise MissingEmbeddingError(
                    "precomputed embeddings cover frames only, not query text"
                )
            if bundle is None or text_or_frame not in bundle.embeddings:
                raise MissingEmbeddingError(f"no embedding for frame {text_or_frame}")
            return list(bundle.embeddings[text_or_frame])
        if cfg.kind == SCRIPTED:
            token = f"frame:{text_or_frame}" if isinstance(text_or_frame, int) else f"text:{text_or_frame}"
            if bundle is not None and isinstance(text_or_frame, int) and text_or_frame in bundle.embeddings:
                return list(bundle.embeddings[text_or_frame])
            dim = cfg.embed_dim
            if bundle is not None and bundle.embedding_dim:
                dim = bundle.embedding_dim
            return pseudo_embedding(token, dim, cfg.seed)
        if cfg.kind != REMOTE_EMBED:
            raise GatewayConfigError(f"provider kind {cfg.kind} cannot serve embeddings")
        body = json.dumps(
            {"model": cfg.model_name, "input": str(text_or_frame)},
            sort_keys=True,
            ensure_ascii=False,
        )
        payload = self._post_with_retries(cfg, f"{cfg.endpoint.rstrip('/')}/v1/embeddings", body)
        try:
            vector = payload["data"][0]["embedding"]
            vector = [float(x) for x in vector]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GatewayError(f"malformed embeddings payload: {exc!r}") from exc
        if bundle is not None and bundle.embedding_dim and len(vector) != bundle.embedding_dim:
            raise DimensionError(
                f"remote embedding dim {len(vector)} does not match bundle dim {bundle.embedding_dim}"
            )
        return vector

    # -- wire plumbing ---------------------------------------------------------

    def _require(self, cfg: Optional[ProviderConfig], lane: str) -> ProviderConfig:
        if cfg is None:
            raise GatewayConfigError(f"no {lane} provider configured")
        return cfg

    def _semaphore(self, cfg: ProviderConfig) -> threading.Semaphore:
        sem = self._semaphores.get(cfg.provider_id)
        if sem is None:
            sem = self._semaphores.setdefault(
                cfg.provider_id, threading.Semaphore(max(1, cfg.max_inflight))
            )
        return sem

    def _post_with_retries(self, cfg: ProviderConfig, url: str, body: str) -> dict:
        cache_key = None
        if self.cache is not None:
            cache_key = ResponseCache.key(cfg.provider_id, body)
            cached = self.cache.get(cache_key)
            if cached is not None:
                return cached

        headers = {"Content-Type": "application/json"}
        key = cfg.api_key()  # raises before any network traffic if misconfigured
        if key:
            headers["Authorization"] = f"Bearer {key}"

        attempts = 0
        last_error = "unknown error"
        last_status = None
        with self._semaphore(cfg):
            while attempts <= cfg.max_retries:
                attempts += 1
                try:
                    response = requests.post(
                        url, data=body.encode("utf-8"), headers=headers, timeout=cfg.timeout
                    )
                except requests.RequestException as exc:
                    last_error = f"transport error: {exc}"
                    logger.warning("gateway attempt %d failed: %s", attempts, last_error)
                else:
                    last_status = response.status_code
                    if response.status_code == 200:
                        try:
                            payload = response.json()
                        except ValueError as exc:
                            raise GatewayError(
                                f"malformed response body (not JSON): {exc}",
                                status=200,
                                attempts=attempts,
                            ) from exc
                        if self.cache is not None:
                            self.cache.put(cache_key, payload)
                        return payload
                    if response.status_code not in _RETRYABLE_STATUS:
                        raise GatewayError(
                            f"request rejected with HTTP {response.status_code}",
                            status=response.status_code,
                            attempts=attempts,
                        )
                    last_error = f"HTTP {response.status_code}"
                    logger.warning("gateway attempt %d failed: %s", attempts, last_error)
                if attempts <= cfg.max_retries:
                    time.sleep(cfg.retry_backoff * (2 ** (attempts - 1)))
        raise GatewayError(
            f"gave up after {attempts} attempts: {last_error}",
            status=last_status,
            attempts=attempts,
        )
