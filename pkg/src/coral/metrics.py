"""Evaluation metrics: target-token perplexity and Average BLEU.

Perplexity is exp of the mean teacher-forced NLL pooled over every target
token in the corpus (response positions only, matching the training mask).

Average BLEU is the mean of corpus-level BLEU-1..4 on a 0-100 scale, where
each BLEU-n pools clipped n-gram counts and lengths over all pairs before
dividing. Smoothing: orders n >= 2 get add-one smoothing only when the raw
clipped count is zero. Both candidate and reference are tokenizer-token
sequences, not words; this is recorded as a comparability caveat.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import model as M
from .data import TrainingExample
from .model import DecoderWeights

BLEU_MAX_ORDER = 4


class DegenerateCorpusError(ValueError):
    """Evaluation set contains no target tokens."""


@dataclass
class EvalReport:
    perplexity: float
    bleu_by_n: list[float]  # BLEU-1..4, 0-100 scale
    average_bleu: float
    token_count: int
    example_count: int

    def __post_init__(self):
        assert self.perplexity >= 1.0
        assert len(self.bleu_by_n) == BLEU_MAX_ORDER
        assert all(0.0 <= b <= 100.0 for b in self.bleu_by_n)


def target_log_probs(weights: DecoderWeights, ex: TrainingExample) -> np.ndarray:
    """Teacher-forced log-probabilities of each masked target token."""
    ids = np.asarray(ex.input_ids, dtype=np.int64)
    logits = M.forward(weights, ids[:-1], train_mode=False).data
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    targets = ids[1:]
    mask = np.asarray(ex.loss_mask[1:], dtype=bool)
    rows = np.arange(len(targets))
    return logp[rows, targets][mask]


def perplexity(weights: DecoderWeights, examples: list[TrainingExample]) -> float:
    """exp(mean NLL per target token), pooled across the whole corpus."""
    if not examples:
        raise DegenerateCorpusError("perplexity: no examples")
    total_nll = 0.0
    total_tokens = 0
    for ex in examples:
        lp = target_log_probs(weights, ex)
        total_nll -= float(lp.sum())
        total_tokens += lp.size
    if total_tokens == 0:
        raise DegenerateCorpusError("perplexity: corpus has no target tokens")
    return math.exp(total_nll / total_tokens)


# ---------------------------------------------------------------------------
# BLEU


def ngram_counts(tokens, n: int) -> Counter:
    tokens = list(tokens)
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_counts(candidate, reference, n: int) -> tuple[int, int]:
    cand = ngram_counts(candidate, n)
    ref = ngram_counts(reference, n)
    clipped = sum(min(c, ref[g]) for g, c in cand.items())
    total = max(0, len(list(candidate)) - n + 1)
    return clipped, total


def _smoothed_precision(clipped: int, total: int, n: int) -> float:
    if total == 0:
        return 0.0
    if n >= 2 and clipped == 0:
        return (clipped + 1) / (total + 1)
    return clipped / total


def _brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return math.exp(min(0.0, 1.0 - ref_len / cand_len))


def bleu_n(candidate, reference, n: int) -> float:
    """Single-pair BLEU-n on [0, 1]: clipped modified n-gram precision times
    the brevity penalty. Empty candidates score 0 by convention."""
    if not 1 <= n <= BLEU_MAX_ORDER:
        raise ValueError(f"bleu_n: order must be in 1..{BLEU_MAX_ORDER}, got {n}")
    candidate = list(candidate)
    reference = list(reference)
    if not candidate:
        return 0.0
    clipped, total = _clipped_counts(candidate, reference, n)
    return _smoothed_precision(clipped, total, n) * _brevity_penalty(len(candidate), len(reference))


def corpus_bleu_by_n(pairs: list[tuple[list[int], list[int]]]) -> list[float]:
    """Corpus-level BLEU-1..4 on [0, 1] with pooled counts and lengths."""
    if not pairs:
        raise ValueError("corpus_bleu_by_n: pairs must be non-empty")
    cand_len = sum(len(c) for c, _ in pairs)
    ref_len = sum(len(r) for _, r in pairs)
    bp = _brevity_penalty(cand_len, ref_len)
    out = []
    for n in range(1, BLEU_MAX_ORDER + 1):
        clipped = 0
        total = 0
        for cand, ref in pairs:
            c, t = _clipped_counts(cand, ref, n)
            clipped += c
            total += t
        if total == 0:
            # no candidate is long enough to have order-n grams; neutral
            out.append(bp)
            continue
        out.append(_smoothed_precision(clipped, total, n) * bp)
    return out


def average_bleu(pairs: list[tuple[list[int], list[int]]]) -> float:
    """Mean of corpus-level BLEU-1..4 on a 0-100 scale."""
    return float(np.mean(corpus_bleu_by_n(pairs))) * 100.0


# ---------------------------------------------------------------------------
# combined report


def evaluate(
    weights: DecoderWeights,
    examples: list[TrainingExample],
    decode_config,
    vocab,
    generate_fn=None,
) -> EvalReport:
    """Perplexity from teacher-forced targets plus BLEU of generated
    responses against ground truth, tokenized identically.

    generate_fn(weights, context_ids, decode_config, eot_id) -> ids may be
    injected (e.g. an echo model in tests); the default is the real decoder.
    """
    if generate_fn is None:
        from .generation import generate as generate_fn  # late import, avoids cycle

    ppl = perplexity(weights, examples)
    pairs = []
    token_count = 0
    for ex in examples:
        context = ex.input_ids[: ex.source_len]
        reference = ex.input_ids[ex.source_len : -1]  # response without trailing eot
        candidate = generate_fn(weights, context, decode_config, vocab.eot_id)
        pairs.append((list(candidate), list(reference)))
        token_count += len(ex.input_ids) - ex.source_len
    by_n = [100.0 * b for b in corpus_bleu_by_n(pairs)]
    return EvalReport(
        perplexity=ppl,
        bleu_by_n=by_n,
        average_bleu=float(np.mean(by_n)),
        token_count=token_count,
        example_count=len(examples),
    )


def report_json(report: EvalReport) -> str:
    payload = {
        "perplexity": report.perplexity,
        "bleu_1": report.bleu_by_n[0],
        "bleu_2": report.bleu_by_n[1],
        "bleu_3": report.bleu_by_n[2],
        "bleu_4": report.bleu_by_n[3],
        "average_bleu": report.average_bleu,
        "token_count": report.token_count,
        "example_count": report.example_count,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_table(report: EvalReport) -> str:
    rows = [
        ("perplexity", f"{report.perplexity:.4f}"),
        ("BLEU-1", f"{report.bleu_by_n[0]:.2f}"),
        ("BLEU-2", f"{report.bleu_by_n[1]:.2f}"),
        ("BLEU-3", f"{report.bleu_by_n[2]:.2f}"),
        ("BLEU-4", f"{report.bleu_by_n[3]:.2f}"),
        ("average BLEU", f"{report.average_bleu:.2f}"),
        ("target tokens", str(report.token_count)),
        ("examples", str(report.example_count)),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"
