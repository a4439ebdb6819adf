#!/usr/bin/env python3
"""Write a synthetic dialogue CSV for desk-scale experiments.

Usage: python3 scripts/make_demo_corpus.py [--dialogues N] [--out PATH]
"""

import argparse

from coral.synthetic import make_synthetic_dialogues, write_dialogues_csv


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dialogues", type=int, default=500)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out", default="demo_dialogues.csv")
    args = parser.parse_args()

    dialogues = make_synthetic_dialogues(args.dialogues, seed=args.seed)
    write_dialogues_csv(dialogues, args.out)
    turns = sum(len(d.turns) for d in dialogues)
    print(f"wrote {len(dialogues)} dialogues ({turns} utterances) to {args.out}")


if __name__ == "__main__":
    main()
