"""CLI contracts: subcommand behavior, exit codes, env-var precedence, and
REPL transcript determinism via scripted stdin."""

import json
import subprocess
import sys

import pytest

from coral.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from coral.synthetic import make_memorizable_dialogues, make_synthetic_dialogues, write_dialogues_csv


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, capsys_factory=None):
    """Run the full CLI pipeline once: corpus -> vocab -> examples -> ckpt."""
    root = tmp_path_factory.mktemp("pipeline")
    csv = root / "dialogues.csv"
    write_dialogues_csv(make_memorizable_dialogues(16, turns_per_dialogue=4, seed=0), str(csv))
    vocab = root / "vocab.json"
    examples = root / "examples.jsonl"
    ckpt = root / "model.ckpt"
    config = root / "train.json"
    config.write_text(json.dumps({
        "train": {"learning_rate": 1e-3, "epochs": 100, "batch_size": 4, "max_steps": 300},
        "model": {"dropout_rate": 0.1},
    }))

    assert main(["tokenizer-train", "--csv", str(csv), "--vocab-size", "2000", "--out", str(vocab)]) == EXIT_OK
    assert main(["data-prepare", "--csv", str(csv), "--vocab", str(vocab),
                 "--window", "2", "--out", str(examples)]) == EXIT_OK
    assert main(["train", "--examples", str(examples), "--vocab", str(vocab),
                 "--config", str(config), "--out", str(ckpt), "--seed", "0"]) == EXIT_OK
    return {"root": root, "csv": csv, "vocab": vocab, "examples": examples, "ckpt": ckpt}


class TestDataPrepare:
    def test_two_dialogue_fixture_prints_example_count(self, tmp_path, capsys):
        # H=5 and H=4 with window 2: (5-2) + (4-2) = 5 examples
        ds = make_synthetic_dialogues(2, seed=3, min_turns=5, max_turns=5)
        ds[1].turns = ds[1].turns[:4]
        csv = tmp_path / "two.csv"
        write_dialogues_csv(ds, str(csv))
        vocab = tmp_path / "v.json"
        out = tmp_path / "ex.jsonl"
        assert main(["tokenizer-train", "--csv", str(csv), "--vocab-size", "300", "--out", str(vocab)]) == EXIT_OK
        capsys.readouterr()
        assert main(["data-prepare", "--csv", str(csv), "--vocab", str(vocab),
                     "--window", "2", "--out", str(out)]) == EXIT_OK
        assert "examples: 5" in capsys.readouterr().out

    def test_blocklist_flag(self, tmp_path, capsys):
        ds = make_synthetic_dialogues(3, seed=0, min_turns=3, max_turns=3)
        ds[0].turns[0].text = "mentions forbiddenword here"
        csv = tmp_path / "b.csv"
        write_dialogues_csv(ds, str(csv))
        vocab = tmp_path / "v.json"
        out = tmp_path / "ex.jsonl"
        main(["tokenizer-train", "--csv", str(csv), "--vocab-size", "300", "--out", str(vocab)])
        capsys.readouterr()
        assert main(["data-prepare", "--csv", str(csv), "--vocab", str(vocab),
                     "--window", "2", "--out", str(out), "--blocklist", "forbiddenword"]) == EXIT_OK
        assert "dropped dialogues (blocklist): 1" in capsys.readouterr().out


class TestTrainEval:
    def test_overfit_then_eval_reports_low_perplexity(self, pipeline, capsys):
        report = pipeline["root"] / "report.json"
        code = main(["eval", "--ckpt", str(pipeline["ckpt"]), "--vocab", str(pipeline["vocab"]),
                     "--examples", str(pipeline["examples"]), "--report", str(report),
                     "--max-new-tokens", "8", "--seed", "0"])
        assert code == EXIT_OK
        payload = json.loads(report.read_text())
        assert payload["perplexity"] < 1.5
        assert 0 <= payload["average_bleu"] <= 100
        out = capsys.readouterr().out
        assert "perplexity" in out

    def test_eval_missing_checkpoint_exits_2(self, pipeline):
        code = main(["eval", "--ckpt", "/nonexistent/model.ckpt", "--vocab", str(pipeline["vocab"]),
                     "--examples", str(pipeline["examples"]), "--report", "/tmp/r.json"])
        assert code == EXIT_DATA

    def test_generate_prints_text(self, pipeline, capsys):
        code = main(["generate", "--ckpt", str(pipeline["ckpt"]), "--vocab", str(pipeline["vocab"]),
                     "--prompt", "topic0 step one", "--strategy", "greedy",
                     "--max-new-tokens", "8", "--seed", "0"])
        assert code == EXIT_OK
        assert capsys.readouterr().out  # some text came out


class TestExitCodes:
    def test_bad_flags_exit_1(self, capsys):
        assert main(["train", "--no-such-flag"]) == EXIT_USAGE
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_missing_file_exit_2_names_path(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        code = main(["tokenizer-train", "--csv", "/no/such/file.csv", "--out", str(out)])
        assert code == EXIT_DATA
        assert "/no/such/file.csv" in capsys.readouterr().err


class TestEnvOverrides:
    def test_env_supplies_flag_and_flag_wins(self, tmp_path, monkeypatch, capsys):
        ds = make_synthetic_dialogues(2, seed=0, min_turns=4, max_turns=4)
        csv = tmp_path / "d.csv"
        write_dialogues_csv(ds, str(csv))
        vocab = tmp_path / "v.json"
        out = tmp_path / "ex.jsonl"
        main(["tokenizer-train", "--csv", str(csv), "--vocab-size", "300", "--out", str(vocab)])

        monkeypatch.setenv("CORAL_WINDOW", "3")
        capsys.readouterr()
        assert main(["data-prepare", "--csv", str(csv), "--vocab", str(vocab), "--out", str(out)]) == EXIT_OK
        assert "examples: 2" in capsys.readouterr().out  # H=4, W=3 -> 1 each

        assert main(["data-prepare", "--csv", str(csv), "--vocab", str(vocab),
                     "--window", "2", "--out", str(out)]) == EXIT_OK
        assert "examples: 4" in capsys.readouterr().out  # flag beats env


REPL_SCRIPT = "hello there\ntopic0 step one\n/reset\ntopic1 step two\n/quit\n"


def _run_repl(pipeline, extra_args=()):
    cmd = [sys.executable, "-m", "coral.cli", "chat",
           "--ckpt", str(pipeline["ckpt"]), "--vocab", str(pipeline["vocab"]),
           "--strategy", "greedy", "--max-new-tokens", "8", *extra_args]
    return subprocess.run(cmd, input=REPL_SCRIPT, capture_output=True, text=True, timeout=120)


class TestChatRepl:
    def test_quit_immediately(self, pipeline):
        cmd = [sys.executable, "-m", "coral.cli", "chat",
               "--ckpt", str(pipeline["ckpt"]), "--vocab", str(pipeline["vocab"])]
        r = subprocess.run(cmd, input="/quit\n", capture_output=True, text=True, timeout=120)
        assert r.returncode == 0
        assert "coral>" not in r.stdout  # nothing generated

    def test_eof_clean_exit(self, pipeline):
        cmd = [sys.executable, "-m", "coral.cli", "chat",
               "--ckpt", str(pipeline["ckpt"]), "--vocab", str(pipeline["vocab"])]
        r = subprocess.run(cmd, input="", capture_output=True, text=True, timeout=120)
        assert r.returncode == 0

    def test_scripted_transcript_replay_identical(self, pipeline):
        a = _run_repl(pipeline)
        b = _run_repl(pipeline)
        assert a.returncode == 0 and b.returncode == 0
        assert a.stdout == b.stdout
        assert a.stdout.count("coral>") == 3  # three non-command inputs

    def test_reset_clears_context_debug_view(self, pipeline):
        r = _run_repl(pipeline, ["--debug-context"])
        assert r.returncode == 0
        blocks = r.stdout.split("(session reset)")
        assert len(blocks) == 2
        # after reset, the next context contains only the new message
        # (the input() prompt precedes the context line in captured stdout)
        post = [l for l in blocks[1].splitlines() if "[context]" in l]
        assert len(post) == 1
        assert "topic1 step two" in post[0]
        assert "hello there" not in post[0]
