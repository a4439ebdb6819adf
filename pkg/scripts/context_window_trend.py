#!/usr/bin/env python3
"""Context-window analysis on a dialogue CSV (synthetic by default).

For each window size W, reports how many training examples the corpus
yields (larger windows always yield fewer), then fine-tunes a toy decoder
per window size and reports held-out perplexity next to the untrained
baseline.

Usage:
  python3 scripts/context_window_trend.py                 # synthetic corpus
  python3 scripts/context_window_trend.py --csv data.csv  # your own CSV
"""

import argparse

from coral import data as D
from coral import metrics as MET
from coral import model as M
from coral import tokenizer as tok
from coral import training as TR
from coral.synthetic import make_synthetic_dialogues


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--csv", help="dialogue CSV; omit to use a synthetic corpus")
    parser.add_argument("--dialogues", type=int, default=500, help="synthetic corpus size")
    parser.add_argument("--windows", type=int, nargs="+", default=[2, 4, 6])
    parser.add_argument("--steps", type=int, default=250)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.csv:
        dialogues = D.ingest_csv(args.csv).dialogues
    else:
        dialogues = make_synthetic_dialogues(args.dialogues, seed=1)
    print(f"corpus: {len(dialogues)} dialogues")

    counts = {w: len(D.segment_context_windows(dialogues, w)) for w in args.windows}
    for w, c in counts.items():
        print(f"  CW-{w}: {c} examples")

    split = D.split_dialogues(dialogues)
    vocab = tok.train_bpe([t.text for d in split["train"] for t in d.turns], 2000)
    print(f"vocabulary: {len(vocab)} tokens")

    for w in args.windows:
        train_ex = D.prepare_examples(split["train"], vocab, w, 256)
        test_ex = D.prepare_examples(split["test"], vocab, w, 256)
        if not train_ex or not test_ex:
            print(f"  CW-{w}: not enough examples to train/evaluate, skipping")
            continue
        weights = M.init(M.toy_config(vocab_size=len(vocab)), seed=args.seed)
        baseline = MET.perplexity(weights, test_ex)
        TR.train(
            weights, train_ex,
            TR.TrainConfig(learning_rate=1e-3, epochs=50, batch_size=4,
                           seed=args.seed, max_steps=args.steps),
        )
        trained = MET.perplexity(weights, test_ex)
        print(f"  CW-{w}: held-out perplexity {baseline:.1f} -> {trained:.2f} "
              f"({len(train_ex)} train / {len(test_ex)} test examples)")


if __name__ == "__main__":
    main()
