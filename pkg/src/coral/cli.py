"""Command-line entry point for the full pipeline.

Subcommands: tokenizer-train, data-prepare, train, eval, generate, chat,
serve. Exit codes: 0 success, 1 usage error, 2 data error (e.g. missing
file), 3 runtime error. Any flag can also be supplied through a CORAL_*
environment variable (flag beats env beats default); all randomness flows
from the --seed flag of the command being run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as D
from . import metrics as MET
from . import model as M
from . import tokenizer as tok
from . import training as TR
from .generation import ChatSession, DecodeConfig, chat_respond, generate
from .tokenizer import decode, encode

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; this CLI reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class DataError(Exception):
    pass


def _env_default(name: str, default=None):
    return os.environ.get(f"CORAL_{name.upper().replace('-', '_')}", default)


def _require_file(path: str, what: str) -> str:
    if not path:
        raise DataError(f"missing required {what} path")
    if not os.path.exists(path):
        raise DataError(f"{what} file not found: {path}")
    return path


def _add_seed(p: _Parser):
    p.add_argument("--seed", type=int, default=None, help="seed for all randomness")


def _seed_of(args, fallback: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    env = _env_default("seed")
    return int(env) if env is not None else fallback


def build_parser() -> _Parser:
    parser = _Parser(prog="coral", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenizer-train", help="train a byte-level BPE vocabulary")
    p.add_argument("--csv", default=_env_default("csv"), help="dialogue CSV to read utterances from")
    p.add_argument("--text", default=_env_default("text"), help="plain text corpus, one document per line")
    p.add_argument("--vocab-size", type=int, default=int(_env_default("vocab_size", 2000)))
    p.add_argument("--out", default=_env_default("out"), required=_env_default("out") is None)

    p = sub.add_parser("data-prepare", help="segment a dialogue CSV into training examples")
    p.add_argument("--csv", default=_env_default("csv"), required=_env_default("csv") is None)
    p.add_argument("--vocab", default=_env_default("vocab"), required=_env_default("vocab") is None)
    p.add_argument("--window", type=int, default=int(_env_default("window", 2)))
    p.add_argument("--max-seq-len", type=int, default=int(_env_default("max_seq_len", 256)))
    p.add_argument("--out", default=_env_default("out"), required=_env_default("out") is None)
    p.add_argument("--blocklist", default=_env_default("blocklist"),
                   help="comma-separated terms; dialogues containing any are dropped")

    p = sub.add_parser("train", help="fine-tune a decoder on prepared examples")
    p.add_argument("--examples", default=_env_default("examples"), required=_env_default("examples") is None)
    p.add_argument("--vocab", default=_env_default("vocab"), required=_env_default("vocab") is None)
    p.add_argument("--config", default=_env_default("config"), help="JSON file with model/train overrides")
    p.add_argument("--preset", default=_env_default("preset", "toy"), choices=sorted(M.PRESETS))
    p.add_argument("--out", default=_env_default("out"), required=_env_default("out") is None)
    _add_seed(p)

    p = sub.add_parser("eval", help="compute perplexity and Average BLEU")
    p.add_argument("--ckpt", default=_env_default("ckpt"), required=_env_default("ckpt") is None)
    p.add_argument("--vocab", default=_env_default("vocab"), required=_env_default("vocab") is None)
    p.add_argument("--examples", default=_env_default("examples"), required=_env_default("examples") is None)
    p.add_argument("--report", default=_env_default("report"), required=_env_default("report") is None)
    p.add_argument("--max-new-tokens", type=int, default=32)
    _add_seed(p)

    p = sub.add_parser("generate", help="one-shot generation from a prompt")
    p.add_argument("--ckpt", default=_env_default("ckpt"), required=_env_default("ckpt") is None)
    p.add_argument("--vocab", default=_env_default("vocab"), required=_env_default("vocab") is None)
    p.add_argument("--prompt", required=True)
    p.add_argument("--strategy", default="top_k", choices=["greedy", "top_k"])
    p.add_argument("--top-k", type=int, default=40)
    p.add_argument("--temperature", type=float, default=0.9)
    p.add_argument("--max-new-tokens", type=int, default=64)
    _add_seed(p)

    p = sub.add_parser("chat", help="interactive terminal chat")
    p.add_argument("--ckpt", default=_env_default("ckpt"), required=_env_default("ckpt") is None)
    p.add_argument("--vocab", default=_env_default("vocab"), required=_env_default("vocab") is None)
    p.add_argument("--window", type=int, default=int(_env_default("window", 2)))
    p.add_argument("--strategy", default="greedy", choices=["greedy", "top_k"])
    p.add_argument("--top-k", type=int, default=40)
    p.add_argument("--temperature", type=float, default=0.9)
    p.add_argument("--max-new-tokens", type=int, default=64)
    p.add_argument("--debug-context", action="store_true",
                   help="print the decoded context before each reply")
    _add_seed(p)

    p = sub.add_parser("serve", help="run the HTTP chat service")
    p.add_argument("--ckpt", default=_env_default("ckpt"), required=_env_default("ckpt") is None)
    p.add_argument("--vocab", default=_env_default("vocab"), required=_env_default("vocab") is None)
    p.add_argument("--port", type=int, default=int(_env_default("port", 8080)))
    p.add_argument("--window", type=int, default=int(_env_default("window", 2)))
    p.add_argument("--max-sessions", type=int, default=64)

    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _load_model(ckpt_path: str, vocab_path: str):
    _require_file(ckpt_path, "checkpoint")
    _require_file(vocab_path, "vocabulary")
    vocab = tok.load_vocabulary(vocab_path)
    ckpt = TR.load_checkpoint(ckpt_path, vocab_hash=tok.vocabulary_hash(vocab))
    return ckpt.to_weights(), vocab


def _cmd_tokenizer_train(args) -> int:
    corpus: list[str] = []
    if args.csv:
        result = D.ingest_csv(_require_file(args.csv, "csv"))
        for d in result.dialogues:
            corpus.extend(t.text for t in d.turns)
    elif args.text:
        with open(_require_file(args.text, "text"), "r", encoding="utf-8") as f:
            corpus = [line.rstrip("\n") for line in f if line.strip()]
    else:
        raise DataError("tokenizer-train needs --csv or --text")
    vocab = tok.train_bpe(corpus, args.vocab_size)
    tok.save_vocabulary(vocab, args.out)
    note = "" if vocab.reached_target else " (corpus too small for target; flagged)"
    print(f"vocabulary: {len(vocab)} tokens, {len(vocab.merges)} merges{note}")
    return EXIT_OK


def _cmd_data_prepare(args) -> int:
    vocab = tok.load_vocabulary(_require_file(args.vocab, "vocabulary"))
    blocklist = set(t for t in (args.blocklist or "").split(",") if t) or None
    result = D.ingest_csv(_require_file(args.csv, "csv"), blocklist=blocklist)
    examples = D.prepare_examples(result.dialogues, vocab, args.window, args.max_seq_len)
    D.write_examples_jsonl(examples, args.out)
    if result.dropped_dialogues:
        print(f"dropped dialogues (blocklist): {result.dropped_dialogues}")
    print(f"examples: {len(examples)}")
    return EXIT_OK


def _cmd_train(args) -> int:
    vocab = tok.load_vocabulary(_require_file(args.vocab, "vocabulary"))
    examples = D.read_examples_jsonl(_require_file(args.examples, "examples"))
    overrides = {}
    if args.config:
        with open(_require_file(args.config, "config"), "r", encoding="utf-8") as f:
            overrides = json.load(f)

    model_kwargs = dict(overrides.get("model", {}))
    preset = overrides.get("preset", args.preset)
    if preset == "toy":
        model_kwargs.setdefault("vocab_size", len(vocab))
        cfg = M.toy_config(**model_kwargs)
    else:
        cfg = M.PRESETS[preset]()
        if model_kwargs:
            raise DataError("model overrides are only supported with the toy preset")

    seed = _seed_of(args)
    train_cfg = TR.TrainConfig(seed=seed, **overrides.get("train", {}))
    weights = M.init(cfg, seed)
    result = TR.train(weights, examples, train_cfg, vocab_hash=tok.vocabulary_hash(vocab))
    TR.save_checkpoint(result.checkpoint, args.out)
    if result.aborted:
        print(f"training aborted early: {result.abort_reason}; last good checkpoint saved")
        return EXIT_RUNTIME
    final = result.loss_history[-1] if result.loss_history else float("nan")
    print(f"steps: {len(result.loss_history)}  final loss: {final:.4f}  checkpoint: {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    weights, vocab = _load_model(args.ckpt, args.vocab)
    examples = D.read_examples_jsonl(_require_file(args.examples, "examples"))
    decode_cfg = DecodeConfig(
        strategy="greedy", max_new_tokens=args.max_new_tokens, seed=_seed_of(args)
    )
    report = MET.evaluate(weights, examples, decode_cfg, vocab)
    with open(args.report, "w", encoding="utf-8") as f:
        f.write(MET.report_json(report))
    print(MET.report_table(report), end="")
    return EXIT_OK


def _cmd_generate(args) -> int:
    weights, vocab = _load_model(args.ckpt, args.vocab)
    cfg = DecodeConfig(
        strategy=args.strategy,
        top_k=args.top_k,
        temperature=args.temperature,
        max_new_tokens=args.max_new_tokens,
        seed=_seed_of(args),
    )
    context = encode(vocab, args.prompt) + [vocab.eot_id]
    out = generate(weights, context, cfg, vocab.eot_id)
    print(decode(vocab, out))
    return EXIT_OK


def _cmd_chat(args) -> int:
    weights, vocab = _load_model(args.ckpt, args.vocab)
    cfg = DecodeConfig(
        strategy=args.strategy,
        top_k=args.top_k,
        temperature=args.temperature,
        max_new_tokens=args.max_new_tokens,
        seed=_seed_of(args),
    )
    session = ChatSession(session_id="repl", context_window=args.window)
    print("coral chat. /reset clears the session, /quit exits.")
    while True:
        try:
            line = input("you> ").strip()
        except EOFError:
            return EXIT_OK
        if not line:
            continue
        if line == "/quit":
            return EXIT_OK
        if line == "/reset":
            session = ChatSession(session_id="repl", context_window=args.window)
            print("(session reset)")
            continue
        capture: list = []
        _, reply = chat_respond(session, line, weights, vocab, cfg, context_capture=capture)
        if args.debug_context:
            print(f"[context] {decode(vocab, capture[-1], special_render=' | ')}")
        print(f"coral> {reply}")


def _cmd_serve(args) -> int:
    from .service import ServiceConfig, run_service

    _require_file(args.ckpt, "checkpoint")
    _require_file(args.vocab, "vocabulary")
    run_service(
        ServiceConfig(
            checkpoint_path=args.ckpt,
            vocab_path=args.vocab,
            port=args.port,
            context_window=args.window,
            max_sessions=args.max_sessions,
        )
    )
    return EXIT_OK


_COMMANDS = {
    "tokenizer-train": _cmd_tokenizer_train,
    "data-prepare": _cmd_data_prepare,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "generate": _cmd_generate,
    "chat": _cmd_chat,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except D.FormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - last-resort mapping to exit code
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
