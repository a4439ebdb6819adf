"""Autoregressive decoding and multi-turn chat session state.

Context construction at inference mirrors the training arrangement exactly:
the last W turns, each terminated by end-of-text, so the conditioning
distribution matches what the model saw during fine-tuning. Greedy decoding
is fully deterministic; top-k sampling is deterministic for a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .data import arrange_turn_texts
from .model import DecoderWeights
from .tokenizer import Vocabulary, decode

EMPTY_REPLY = "..."

USER = "user"
BOT = "bot"


class ContextOverflowError(ValueError):
    """The context alone fills the model's sequence budget."""


@dataclass
class DecodeConfig:
    strategy: str = "top_k"  # "greedy" or "top_k"
    top_k: int = 40
    temperature: float = 0.9
    max_new_tokens: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "top_k"):
            raise ValueError(f"unknown decode strategy {self.strategy!r}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")


def _sample_top_k(logits: np.ndarray, config: DecodeConfig, rng: np.random.Generator) -> int:
    z = logits / config.temperature
    k = min(config.top_k, z.size)
    # deterministic candidate set: sort by descending logit, then id
    order = np.lexsort((np.arange(z.size), -z))[:k]
    zk = z[order]
    zk = zk - zk.max()
    p = np.exp(zk)
    p /= p.sum()
    return int(order[rng.choice(k, p=p)])


def generate(
    weights: DecoderWeights,
    context_ids,
    config: DecodeConfig,
    eot_id: int,
) -> list[int]:
    """Decode a response conditioned on context_ids.

    Emits tokens until end-of-text or max_new_tokens, whichever comes first
    (hitting the model's max_seq_len also stops). The returned ids exclude
    the context and never contain the end-of-text id.
    """
    ids = [int(t) for t in context_ids]
    if len(ids) < 1:
        raise ValueError("generate: context must contain at least one token")
    max_len = weights.config.max_seq_len
    if len(ids) + 1 > max_len:
        raise ContextOverflowError(
            f"generate: context of {len(ids)} tokens leaves no room to generate "
            f"within max_seq_len={max_len}"
        )
    rng = np.random.default_rng(config.seed)
    out: list[int] = []
    for _ in range(config.max_new_tokens):
        if len(ids) >= max_len:
            break
        logits = M.forward(weights, ids, train_mode=False).data[-1]
        if config.strategy == "greedy":
            nxt = int(np.argmax(logits))  # ties resolve to the lowest id
        else:
            nxt = _sample_top_k(logits, config, rng)
        if nxt == eot_id:
            break
        out.append(nxt)
        ids.append(nxt)
    return out


@dataclass
class ChatSession:
    """Per-user conversation history; turns strictly alternate starting
    with the user."""

    session_id: str
    context_window: int
    turns: list[tuple[str, str]] = field(default_factory=list)
    created_at: float = field(default_factory=time.time)

    def __post_init__(self):
        if not self.session_id:
            raise ValueError("session_id must be non-empty")
        if self.context_window < 1:
            raise ValueError(f"context_window must be >= 1, got {self.context_window}")


def build_context_ids(
    session: ChatSession,
    vocab: Vocabulary,
    max_seq_len: int,
) -> list[int]:
    """Token context for the next reply: the last min(W, available) turns,
    arranged exactly like training data. Drops the oldest included turn once
    if the result cannot fit, then gives up."""
    texts = [text for _, text in session.turns[-session.context_window :]]
    for attempt in range(2):
        ids = arrange_turn_texts(texts, vocab)
        if len(ids) + 1 <= max_seq_len:
            return ids
        if len(texts) > 1:
            texts = texts[1:]
        else:
            break
    raise ContextOverflowError(
        f"chat context does not fit in max_seq_len={max_seq_len} even after truncation"
    )


def chat_respond(
    session: ChatSession,
    user_text: str,
    weights: DecoderWeights,
    vocab: Vocabulary,
    config: DecodeConfig,
    context_capture: list | None = None,
) -> tuple[ChatSession, str]:
    """Append the user turn, generate from the windowed context, append the
    bot turn. Passing a list as context_capture records the exact token
    context handed to the decoder (used by the window-law tests)."""
    if not user_text:
        raise ValueError("chat_respond: user_text must be non-empty")
    if session.turns and session.turns[-1][0] != BOT:
        raise ValueError("chat_respond: session turns must alternate user/bot")
    session.turns.append((USER, user_text))
    try:
        context = build_context_ids(session, vocab, weights.config.max_seq_len)
    except ContextOverflowError:
        session.turns.pop()  # keep the session well-formed for the caller
        raise
    if context_capture is not None:
        context_capture.append(list(context))
    out = generate(weights, context, config, vocab.eot_id)
    bot_text = decode(vocab, out) if out else ""
    if not bot_text:
        bot_text = EMPTY_REPLY
    session.turns.append((BOT, bot_text))
    return session, bot_text
