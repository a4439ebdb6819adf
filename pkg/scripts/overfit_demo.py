#!/usr/bin/env python3
"""Memorization sanity run: the toy decoder should drive training perplexity
to ~1 on 32 deterministic examples within 300 steps.

Usage: python3 scripts/overfit_demo.py [--steps N]
"""

import argparse
import time

from coral import data as D
from coral import metrics as MET
from coral import model as M
from coral import tokenizer as tok
from coral import training as TR
from coral.synthetic import make_memorizable_dialogues


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    dialogues = make_memorizable_dialogues(16, turns_per_dialogue=4, seed=args.seed)
    vocab = tok.train_bpe([t.text for d in dialogues for t in d.turns], 2000)
    examples = D.prepare_examples(dialogues, vocab, 2, 256)[:32]

    weights = M.init(M.toy_config(vocab_size=len(vocab)), seed=args.seed)
    config = TR.TrainConfig(
        learning_rate=args.lr, epochs=10_000, batch_size=4, seed=args.seed,
        max_steps=args.steps,
    )
    started = time.time()
    result = TR.train(weights, examples, config)
    elapsed = time.time() - started

    ppl = MET.perplexity(weights, examples)
    h = result.loss_history
    print(f"steps: {len(h)}  loss {h[0]:.3f} -> {h[-1]:.3f}  "
          f"train perplexity: {ppl:.4f}  ({elapsed:.1f}s)")
    print("PASS" if ppl < 1.5 else "FAIL", "(target: perplexity < 1.5)")


if __name__ == "__main__":
    main()
