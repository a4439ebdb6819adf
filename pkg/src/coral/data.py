"""Conversation ingestion and multi-turn training-example arrangement.

CSV rows (one utterance each) are grouped into dialogues, then segmented
into sliding context windows: with window size W, every turn from W+1 on
becomes a response conditioned on exactly the W turns before it. Each
window is tokenized into one flat sequence -- every turn terminated by the
end-of-text id -- with the loss mask covering only the response portion.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field

from .tokenizer import Vocabulary, encode

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("conv_id", "utterance_idx", "context", "prompt", "speaker_idx", "utterance")


class FormatError(ValueError):
    """The CSV is missing a required column or has no header."""


class ExampleDiscardedError(ValueError):
    """Truncation left no response tokens to predict."""


@dataclass
class Turn:
    speaker_index: int
    text: str


@dataclass
class Dialogue:
    conv_id: str
    emotion_label: str
    prompt: str
    turns: list[Turn]


@dataclass
class TrainingExample:
    """One (context -> response) pair as a flat token sequence.

    input_ids has length B and ends with the end-of-text id; source_len is
    the length a of the context portion; loss_mask is true exactly on the
    response positions a+1..B (1-indexed), so it selects B-a tokens.
    """

    input_ids: list[int]
    source_len: int
    loss_mask: list[bool] = field(default_factory=list)
    conv_id: str = ""
    window_start: int = 0
    truncated: bool = False

    def __post_init__(self):
        if not self.loss_mask:
            self.loss_mask = [i >= self.source_len for i in range(len(self.input_ids))]


@dataclass
class IngestResult:
    dialogues: list[Dialogue]
    skipped_rows: int = 0
    dropped_dialogues: int = 0


def unescape(text: str) -> str:
    """The source data escapes literal commas as ``_comma_``."""
    return text.replace("_comma_", ",")


def ingest_csv(path: str, blocklist: set[str] | None = None) -> IngestResult:
    """Read an utterance-per-row CSV into dialogues.

    Rows are grouped by conv_id and ordered by utterance_idx; malformed rows
    are skipped and counted. Dialogues containing any blocklist term (case-
    insensitive substring, checked against turn texts and the prompt) are
    dropped and counted.
    """
    groups: dict[str, list[tuple[int, Turn]]] = {}
    meta: dict[str, tuple[str, str]] = {}
    order: list[str] = []
    skipped = 0

    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise FormatError(f"{path}: empty file, expected a header row")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise FormatError(f"{path}: missing required columns {missing}")
        for row in reader:
            try:
                conv_id = row["conv_id"]
                idx = int(row["utterance_idx"])
                speaker = int(row["speaker_idx"])
                text = unescape(row["utterance"]).strip()
                if not conv_id or not text:
                    raise ValueError("empty conv_id or utterance")
            except (TypeError, ValueError, KeyError):
                skipped += 1
                continue
            if conv_id not in groups:
                groups[conv_id] = []
                order.append(conv_id)
                meta[conv_id] = (row.get("context") or "", unescape(row.get("prompt") or ""))
            groups[conv_id].append((idx, Turn(speaker_index=speaker, text=text)))

    if skipped:
        logger.warning("ingest_csv: skipped %d malformed rows in %s", skipped, path)

    terms = [t.lower() for t in blocklist] if blocklist else []
    dialogues: list[Dialogue] = []
    dropped = 0
    for conv_id in order:
        turns = [t for _, t in sorted(groups[conv_id], key=lambda p: p[0])]
        emotion, prompt = meta[conv_id]
        if terms:
            haystack = " ".join([prompt] + [t.text for t in turns]).lower()
            if any(term in haystack for term in terms):
                dropped += 1
                continue
        dialogues.append(Dialogue(conv_id=conv_id, emotion_label=emotion, prompt=prompt, turns=turns))
    return IngestResult(dialogues=dialogues, skipped_rows=skipped, dropped_dialogues=dropped)


def arrange_turn_texts(texts: list[str], vocab: Vocabulary) -> list[int]:
    """Concatenate turns into one id sequence, each turn (including the
    last) terminated by the end-of-text id."""
    ids: list[int] = []
    for text in texts:
        ids.extend(encode(vocab, text))
        ids.append(vocab.eot_id)
    return ids


def arrange_multi_turn(dialogue: Dialogue, vocab: Vocabulary) -> list[int]:
    if not dialogue.turns:
        raise ValueError("arrange_multi_turn: dialogue has no turns")
    return arrange_turn_texts([t.text for t in dialogue.turns], vocab)


@dataclass
class ContextWindow:
    conv_id: str
    window_start: int  # 1-based index of the first context turn
    context_turns: list[Turn]
    response_turn: Turn


def segment_context_windows(dialogues: list[Dialogue], window: int) -> list[ContextWindow]:
    """Stride-1 sliding windows of exactly ``window`` context turns.

    A dialogue with H turns yields max(0, H - window) examples. Output is
    ordered by conv_id, then window start.
    """
    if window < 1:
        raise ValueError(f"segment_context_windows: window must be >= 1, got {window}")
    out: list[ContextWindow] = []
    for d in sorted(dialogues, key=lambda d: d.conv_id):
        H = len(d.turns)
        for i in range(window, H):  # response turn index, 0-based
            out.append(
                ContextWindow(
                    conv_id=d.conv_id,
                    window_start=i - window + 1,
                    context_turns=d.turns[i - window : i],
                    response_turn=d.turns[i],
                )
            )
    return out


def to_training_example(
    context_turns: list[Turn],
    response_turn: Turn,
    vocab: Vocabulary,
    max_seq_len: int,
    conv_id: str = "",
    window_start: int = 0,
) -> TrainingExample:
    """Tokenize a window into a TrainingExample that fits max_seq_len.

    If the sequence is too long, the oldest context turns are dropped first
    (always keeping at least one); if it still does not fit, the response
    tail is cut and the example flagged as truncated. An example whose
    response would vanish entirely is discarded with an error.
    """
    if not context_turns:
        raise ValueError("to_training_example: at least one context turn required")
    context = list(context_turns)
    response_ids = encode(vocab, response_turn.text) + [vocab.eot_id]

    while True:
        context_ids = arrange_turn_texts([t.text for t in context], vocab)
        if len(context_ids) + len(response_ids) <= max_seq_len or len(context) == 1:
            break
        context = context[1:]

    truncated = False
    total = len(context_ids) + len(response_ids)
    if total > max_seq_len:
        keep = max_seq_len - len(context_ids) - 1  # reserve the trailing eot
        if keep < 1:
            raise ExampleDiscardedError(
                f"to_training_example: context of {len(context_ids)} tokens leaves no room "
                f"for a response within max_seq_len={max_seq_len}"
            )
        response_ids = response_ids[:keep] + [vocab.eot_id]
        truncated = True

    return TrainingExample(
        input_ids=context_ids + response_ids,
        source_len=len(context_ids),
        conv_id=conv_id,
        window_start=window_start,
        truncated=truncated,
    )


def prepare_examples(
    dialogues: list[Dialogue],
    vocab: Vocabulary,
    window: int,
    max_seq_len: int,
) -> list[TrainingExample]:
    """Segment and tokenize a corpus; windows whose response cannot fit at
    all are dropped (counted in the log)."""
    examples: list[TrainingExample] = []
    discarded = 0
    for cw in segment_context_windows(dialogues, window):
        try:
            examples.append(
                to_training_example(
                    cw.context_turns,
                    cw.response_turn,
                    vocab,
                    max_seq_len,
                    conv_id=cw.conv_id,
                    window_start=cw.window_start,
                )
            )
        except ExampleDiscardedError:
            discarded += 1
    if discarded:
        logger.warning("prepare_examples: discarded %d oversize windows", discarded)
    return examples


def write_examples_jsonl(examples: list[TrainingExample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(
                json.dumps(
                    {
                        "conv_id": ex.conv_id,
                        "window_start": ex.window_start,
                        "input_ids": ex.input_ids,
                        "source_len": ex.source_len,
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )


def read_examples_jsonl(path: str) -> list[TrainingExample]:
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            examples.append(
                TrainingExample(
                    input_ids=list(obj["input_ids"]),
                    source_len=int(obj["source_len"]),
                    conv_id=obj.get("conv_id", ""),
                    window_start=int(obj.get("window_start", 0)),
                )
            )
    return examples


def split_dialogues(
    dialogues: list[Dialogue], ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
) -> dict[str, list[Dialogue]]:
    """Deterministic train/valid/test split by conv_id content hash."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split_dialogues: ratios must sum to 1, got {ratios}")
    cut1 = ratios[0]
    cut2 = ratios[0] + ratios[1]
    out: dict[str, list[Dialogue]] = {"train": [], "valid": [], "test": []}
    for d in dialogues:
        h = int.from_bytes(hashlib.sha256(d.conv_id.encode("utf-8")).digest()[:8], "big")
        u = h / 2**64
        if u < cut1:
            out["train"].append(d)
        elif u < cut2:
            out["valid"].append(d)
        else:
            out["test"].append(d)
    return out
