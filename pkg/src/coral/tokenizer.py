"""Trainable byte-level BPE tokenizer with end-of-text and pad specials.

The base alphabet is all 256 bytes, so any UTF-8 input round-trips without
an out-of-vocabulary path. Training greedily merges the highest-frequency
adjacent pair (ties broken by lexicographically smallest byte-strings) and
stops early once no pair occurs at least twice; in that case the returned
vocabulary is smaller than requested and flagged.

There is no pre-tokenization: whitespace is ordinary bytes and merges may
cross it. This is the simplest deterministic scheme and is recorded so that
results stay reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

END_OF_TEXT = "end_of_text"
PAD = "pad"

_N_BYTES = 256
_N_SPECIALS = 2

# sentinel byte-strings for the specials' id_to_token entries; merges that
# would collide with these are skipped during training
_SPECIAL_BYTES = {END_OF_TEXT: b"<|endoftext|>", PAD: b"<|pad|>"}

VOCAB_FORMAT_VERSION = 1


class VocabularyIdError(ValueError):
    """A token id is not present in the vocabulary."""


@dataclass
class Vocabulary:
    id_to_token: list[bytes]
    merges: list[tuple[int, int]]
    specials: dict[str, int]
    reached_target: bool = True
    token_to_id: dict[bytes, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def eot_id(self) -> int:
        return self.specials[END_OF_TEXT]

    @property
    def pad_id(self) -> int:
        return self.specials[PAD]

    def is_special(self, token_id: int) -> bool:
        return token_id in (self.eot_id, self.pad_id)


def train_bpe(corpus: list[str], target_vocab_size: int) -> Vocabulary:
    """Train a byte-level BPE vocabulary on a corpus of strings.

    Deterministic given corpus order. If the corpus is too small to support
    the requested number of merges, a smaller vocabulary is returned with
    ``reached_target`` set to False.
    """
    if not corpus:
        raise ValueError("train_bpe: corpus must be non-empty")
    if target_vocab_size <= _N_BYTES + _N_SPECIALS:
        raise ValueError(
            f"train_bpe: target_vocab_size must exceed {_N_BYTES + _N_SPECIALS}, "
            f"got {target_vocab_size}"
        )
    num_merges = target_vocab_size - _N_BYTES - _N_SPECIALS
    forbidden = set(_SPECIAL_BYTES.values())

    tokens: list[bytes] = [bytes([i]) for i in range(_N_BYTES)]
    # collapse duplicate strings; pair counts are weighted by multiplicity
    seqs = Counter(tuple(s.encode("utf-8")) for s in corpus if s)
    merges: list[tuple[int, int]] = []

    for _ in range(num_merges):
        pair_counts: Counter[tuple[int, int]] = Counter()
        for seq, freq in seqs.items():
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] += freq
        best = None
        for pair, cnt in pair_counts.items():
            if cnt < 2:  # merging a singleton pair gains nothing
                continue
            if tokens[pair[0]] + tokens[pair[1]] in forbidden:
                continue
            key = (-cnt, tokens[pair[0]], tokens[pair[1]])
            if best is None or key < best[0]:
                best = (key, pair)
        if best is None:
            break
        pair = best[1]
        new_id = len(tokens)
        tokens.append(tokens[pair[0]] + tokens[pair[1]])
        merges.append(pair)
        seqs = Counter({_merge_seq(seq, pair, new_id): freq for seq, freq in seqs.items()})

    specials = {END_OF_TEXT: len(tokens), PAD: len(tokens) + 1}
    tokens = tokens + [_SPECIAL_BYTES[END_OF_TEXT], _SPECIAL_BYTES[PAD]]
    return Vocabulary(
        id_to_token=tokens,
        merges=merges,
        specials=specials,
        reached_target=len(merges) == num_merges,
    )


def _merge_seq(seq: tuple[int, ...], pair: tuple[int, int], new_id: int) -> tuple[int, ...]:
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return tuple(out)


def encode(vocab: Vocabulary, text: str) -> list[int]:
    """Encode text to token ids by replaying merges in training order.

    Plain text never produces special ids; those are inserted explicitly by
    the dialogue arrangement.
    """
    ids = list(text.encode("utf-8"))
    if not ids:
        return []
    ranks = {pair: i for i, pair in enumerate(vocab.merges)}
    while len(ids) >= 2:
        best_rank, best_pos = None, -1
        for i in range(len(ids) - 1):
            r = ranks.get((ids[i], ids[i + 1]))
            if r is not None and (best_rank is None or r < best_rank):
                best_rank, best_pos = r, i
        if best_rank is None:
            break
        pair = (ids[best_pos], ids[best_pos + 1])
        new_id = _N_BYTES + best_rank
        ids = list(_merge_seq(tuple(ids), pair, new_id))
    return ids


def decode(vocab: Vocabulary, ids, special_render: str | None = None) -> str:
    """Decode token ids back to text. Special tokens render as
    ``special_render`` (default: elided entirely)."""
    parts: list[bytes] = []
    rendered = special_render.encode("utf-8") if special_render is not None else b""
    for i in ids:
        i = int(i)
        if i < 0 or i >= len(vocab.id_to_token):
            raise VocabularyIdError(f"decode: id {i} outside vocabulary of size {len(vocab)}")
        if vocab.is_special(i):
            if special_render is not None:
                parts.append(rendered)
            continue
        parts.append(vocab.id_to_token[i])
    return b"".join(parts).decode("utf-8", errors="replace")


# ---------------------------------------------------------------------------
# serialization: JSON with base64 byte-strings, bit-exact round-trip


def vocabulary_to_json(vocab: Vocabulary) -> str:
    payload = {
        "version": VOCAB_FORMAT_VERSION,
        "tokens": [base64.b64encode(t).decode("ascii") for t in vocab.id_to_token],
        "merges": [list(p) for p in vocab.merges],
        "specials": vocab.specials,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def vocabulary_from_json(text: str) -> Vocabulary:
    payload = json.loads(text)
    version = payload.get("version")
    if version != VOCAB_FORMAT_VERSION:
        raise ValueError(f"unsupported vocabulary format version: {version!r}")
    return Vocabulary(
        id_to_token=[base64.b64decode(t) for t in payload["tokens"]],
        merges=[tuple(p) for p in payload["merges"]],
        specials={k: int(v) for k, v in payload["specials"].items()},
    )


def save_vocabulary(vocab: Vocabulary, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(vocabulary_to_json(vocab))


def load_vocabulary(path: str) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as f:
        return vocabulary_from_json(f.read())


def vocabulary_hash(vocab: Vocabulary) -> str:
    """Stable content hash used to tie checkpoints to the vocabulary."""
    return hashlib.sha256(vocabulary_to_json(vocab).encode("utf-8")).hexdigest()
