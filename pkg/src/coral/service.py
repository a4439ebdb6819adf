"""HTTP chat service: session-based conversation over a loaded checkpoint.

Sessions live in memory with TTL eviction; each holds its own lock so
concurrent posts to one session serialize (history stays strictly
alternating) while different sessions proceed in parallel against the
shared read-only weights. Every error body has the shape {"error": code}.
"""

from __future__ import annotations

import threading
import time
import secrets
from dataclasses import dataclass, field, replace

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import model as M
from .generation import ChatSession, ContextOverflowError, DecodeConfig, chat_respond
from .model import DecoderWeights
from .tokenizer import Vocabulary, load_vocabulary, vocabulary_hash
from .training import load_checkpoint

DISCLAIMER = "This is a research prototype, not a substitute for professional mental-health support."

MAX_NEW_TOKENS_CAP = 256


@dataclass
class ServiceConfig:
    checkpoint_path: str = ""
    vocab_path: str = ""
    port: int = 8080
    context_window: int = 2
    decode_defaults: DecodeConfig = field(default_factory=DecodeConfig)
    max_sessions: int = 64
    session_ttl_seconds: float = 1800.0
    cors_origins: list[str] = field(default_factory=lambda: ["*"])
    capture_contexts: bool = False  # test instrumentation

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port must be in [1, 65535], got {self.port}")
        if self.max_sessions < 1:
            raise ValueError(f"max_sessions must be >= 1, got {self.max_sessions}")


class CapacityError(RuntimeError):
    pass


@dataclass
class _Entry:
    session: ChatSession
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_active: float = field(default_factory=time.time)


class SessionStore:
    """In-memory session registry with TTL eviction, capped in size."""

    def __init__(self, max_sessions: int, ttl_seconds: float, context_window: int):
        self.max_sessions = max_sessions
        self.ttl = ttl_seconds
        self.context_window = context_window
        self._entries: dict[str, _Entry] = {}
        self._lock = threading.Lock()

    def _evict_expired(self, now: float) -> None:
        dead = [sid for sid, e in self._entries.items() if now - e.last_active > self.ttl]
        for sid in dead:
            del self._entries[sid]

    def create(self) -> str:
        with self._lock:
            now = time.time()
            self._evict_expired(now)
            if len(self._entries) >= self.max_sessions:
                raise CapacityError("session capacity exhausted")
            sid = secrets.token_hex(16)  # 128-bit opaque id
            self._entries[sid] = _Entry(
                session=ChatSession(session_id=sid, context_window=self.context_window)
            )
            return sid

    def get(self, sid: str) -> _Entry | None:
        with self._lock:
            entry = self._entries.get(sid)
            if entry is not None:
                entry.last_active = time.time()
            return entry

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


@dataclass
class ModelRuntime:
    weights: DecoderWeights
    vocab: Vocabulary


def load_runtime(config: ServiceConfig) -> ModelRuntime:
    vocab = load_vocabulary(config.vocab_path)
    ckpt = load_checkpoint(config.checkpoint_path, vocab_hash=vocabulary_hash(vocab))
    return ModelRuntime(weights=ckpt.to_weights(), vocab=vocab)


class DecodeOverrides(BaseModel):
    strategy: str | None = None
    top_k: int | None = None
    temperature: float | None = None
    max_new_tokens: int | None = None
    seed: int | None = None


class MessageIn(BaseModel):
    text: str = ""
    decode: DecodeOverrides | None = None


def _merge_decode(defaults: DecodeConfig, ov: DecodeOverrides | None) -> DecodeConfig:
    if ov is None:
        return defaults
    fields = {k: v for k, v in ov.model_dump().items() if v is not None}
    if "max_new_tokens" in fields:
        fields["max_new_tokens"] = min(fields["max_new_tokens"], MAX_NEW_TOKENS_CAP)
    return replace(defaults, **fields)


def _error(status: int, code: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": code})


def create_app(config: ServiceConfig, runtime: ModelRuntime | None = None) -> FastAPI:
    """Build the service. With runtime=None and configured paths, the model
    is loaded eagerly; /healthz reports 503 until a model is present."""
    if runtime is None and config.checkpoint_path and config.vocab_path:
        runtime = load_runtime(config)

    app = FastAPI(title="coral chat service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=config.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = SessionStore(config.max_sessions, config.session_ttl_seconds, config.context_window)
    app.state.runtime = runtime
    app.state.store = store
    app.state.context_log = {}  # sid -> captured contexts, test instrumentation

    @app.post("/v1/sessions", status_code=201)
    def create_session():
        if app.state.runtime is None:
            return _error(503, "model_not_loaded")
        try:
            sid = store.create()
        except CapacityError:
            return _error(503, "capacity")
        return {"session_id": sid}

    @app.post("/v1/sessions/{sid}/messages")
    def post_message(sid: str, body: MessageIn):
        rt: ModelRuntime = app.state.runtime
        if rt is None:
            return _error(503, "model_not_loaded")
        entry = store.get(sid)
        if entry is None:
            return _error(404, "no_such_session")
        if not body.text.strip():
            return _error(400, "empty_text")
        try:
            decode_cfg = _merge_decode(config.decode_defaults, body.decode)
        except ValueError:
            return _error(400, "invalid_decode_overrides")
        capture = None
        if config.capture_contexts:
            capture = app.state.context_log.setdefault(sid, [])
        with entry.lock:
            try:
                _, reply = chat_respond(
                    entry.session, body.text, rt.weights, rt.vocab, decode_cfg,
                    context_capture=capture,
                )
            except ContextOverflowError:
                return _error(500, "context_overflow")
            except Exception:
                return _error(500, "generation_failed")
            turn_index = len(entry.session.turns)  # 1-based index of the bot turn
        return {"reply": reply, "turn_index": turn_index, "disclaimer": DISCLAIMER}

    @app.get("/v1/sessions/{sid}/history")
    def get_history(sid: str):
        entry = store.get(sid)
        if entry is None:
            return _error(404, "no_such_session")
        with entry.lock:
            turns = [{"speaker": s, "text": t} for s, t in entry.session.turns]
        return {"turns": turns}

    @app.get("/healthz")
    def health():
        rt: ModelRuntime = app.state.runtime
        if rt is None:
            return _error(503, "model_not_loaded")
        cfg = rt.weights.config
        return {
            "status": "ok",
            "model": {"n_layers": cfg.n_layers, "params": M.count_params(cfg)},
        }

    return app


def run_service(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host="0.0.0.0", port=config.port)
