"""Dialogue ingestion, arrangement, windowing, and example construction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coral import data as D
from coral import tokenizer as tok
from coral.data import Dialogue, Turn

from oracles import brute_force_window_count


def write_csv(path, rows):
    header = "conv_id,utterance_idx,context,prompt,speaker_idx,utterance\n"
    path.write_text(header + "".join(rows), encoding="utf-8")


class TestIngest:
    def test_grouping_by_conv_id(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, [
            "hit:0_conv:1,1,afraid,prompt one,0,hello\n",
            "hit:0_conv:1,2,afraid,prompt one,1,hi there\n",
        ])
        result = D.ingest_csv(str(p))
        assert len(result.dialogues) == 1
        d = result.dialogues[0]
        assert d.conv_id == "hit:0_conv:1"
        assert len(d.turns) == 2
        assert d.turns[0].text == "hello"
        assert d.emotion_label == "afraid"

    def test_comma_unescaping(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, ["c1,1,afraid,p,0,I was scared_comma_ really.\n"])
        result = D.ingest_csv(str(p))
        assert result.dialogues[0].turns[0].text == "I was scared, really."

    def test_rows_sorted_by_utterance_idx(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, [
            "c1,2,joyful,p,1,second\n",
            "c1,1,joyful,p,0,first\n",
        ])
        d = D.ingest_csv(str(p)).dialogues[0]
        assert [t.text for t in d.turns] == ["first", "second"]

    def test_blocklist_drops_and_counts(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, [
            "c1,1,sad,p,0,nothing here\n",
            "c2,1,sad,p,0,contains zzz term\n",
        ])
        result = D.ingest_csv(str(p), blocklist={"zzz"})
        assert len(result.dialogues) == 1
        assert result.dialogues[0].conv_id == "c1"
        assert result.dropped_dialogues == 1

    def test_malformed_rows_skipped_and_counted(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, [
            "c1,1,sad,p,0,good row\n",
            "c1,notanint,sad,p,0,bad idx\n",
            "c1,2,sad,p,notanint,bad speaker\n",
        ])
        result = D.ingest_csv(str(p))
        assert result.skipped_rows == 2
        assert len(result.dialogues[0].turns) == 1

    def test_missing_column_is_format_error(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("conv_id,utterance_idx,utterance\nc1,1,hello\n", encoding="utf-8")
        with pytest.raises(D.FormatError, match="speaker_idx"):
            D.ingest_csv(str(p))


class TestArrange:
    def test_every_turn_eot_terminated(self, tiny_vocab):
        d = Dialogue("c", "joyful", "p", [Turn(0, "Hi"), Turn(1, "Hello")])
        ids = D.arrange_multi_turn(d, tiny_vocab)
        E = tiny_vocab.eot_id
        expected = tok.encode(tiny_vocab, "Hi") + [E] + tok.encode(tiny_vocab, "Hello") + [E]
        assert ids == expected

    def test_single_turn(self, tiny_vocab):
        d = Dialogue("c", "joyful", "p", [Turn(0, "solo")])
        assert D.arrange_multi_turn(d, tiny_vocab) == tok.encode(tiny_vocab, "solo") + [tiny_vocab.eot_id]

    def test_decode_with_newline_render(self, tiny_vocab):
        d = Dialogue("c", "joyful", "p", [Turn(0, "one"), Turn(1, "two")])
        ids = D.arrange_multi_turn(d, tiny_vocab)
        assert tok.decode(tiny_vocab, ids, special_render="\n") == "one\ntwo\n"

    def test_ingest_arrange_decode_round_trip(self, tmp_path, tiny_vocab):
        p = tmp_path / "d.csv"
        write_csv(p, [
            "c1,1,hopeful,p,0,first turn here\n",
            "c1,2,hopeful,p,1,second turn there\n",
            "c1,3,hopeful,p,0,third one\n",
        ])
        d = D.ingest_csv(str(p)).dialogues[0]
        ids = D.arrange_multi_turn(d, tiny_vocab)
        text = tok.decode(tiny_vocab, ids, special_render="\n")
        assert text == "first turn here\nsecond turn there\nthird one\n"


def _dialogue(conv_id: str, n_turns: int) -> Dialogue:
    return Dialogue(conv_id, "joyful", "p", [Turn(i % 2, f"turn {i}") for i in range(n_turns)])


class TestSegmentation:
    def test_h5_w2_gives_3(self):
        windows = D.segment_context_windows([_dialogue("c", 5)], 2)
        assert len(windows) == 3
        # (T1 T2 -> T3), (T2 T3 -> T4), (T3 T4 -> T5)
        assert [w.window_start for w in windows] == [1, 2, 3]
        assert [w.response_turn.text for w in windows] == ["turn 2", "turn 3", "turn 4"]

    def test_window_larger_than_dialogue(self):
        assert D.segment_context_windows([_dialogue("c", 4)], 6) == []

    def test_100_dialogues_h4_w2(self):
        ds = [_dialogue(f"c{i}", 4) for i in range(100)]
        assert len(D.segment_context_windows(ds, 2)) == 200

    def test_ordering_by_conv_id_then_start(self):
        ds = [_dialogue("b", 4), _dialogue("a", 5)]
        windows = D.segment_context_windows(ds, 2)
        keys = [(w.conv_id, w.window_start) for w in windows]
        assert keys == sorted(keys)

    def test_window_must_be_positive(self):
        with pytest.raises(ValueError):
            D.segment_context_windows([], 0)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.integers(1, 12), min_size=0, max_size=10),
        st.integers(1, 8),
    )
    def test_count_law_vs_brute_force(self, turn_counts, window):
        ds = [_dialogue(f"c{i}", h) for i, h in enumerate(turn_counts)]
        got = len(D.segment_context_windows(ds, window))
        assert got == brute_force_window_count(turn_counts, window)
        assert got == sum(max(0, h - window) for h in turn_counts)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 12), min_size=1, max_size=10), st.integers(1, 6))
    def test_monotonicity_in_window(self, turn_counts, w1):
        ds = [_dialogue(f"c{i}", h) for i, h in enumerate(turn_counts)]
        w2 = w1 + 1
        assert len(D.segment_context_windows(ds, w1)) >= len(D.segment_context_windows(ds, w2))


class TestToTrainingExample:
    def test_mask_construction(self, tiny_vocab):
        ex = D.to_training_example([Turn(0, "Hi")], Turn(1, "Hello"), tiny_vocab, 64)
        a = len(tok.encode(tiny_vocab, "Hi")) + 1
        assert ex.source_len == a
        resp = len(tok.encode(tiny_vocab, "Hello")) + 1
        assert len(ex.input_ids) == a + resp
        assert ex.loss_mask == [False] * a + [True] * resp
        assert ex.input_ids[-1] == tiny_vocab.eot_id
        assert sum(ex.loss_mask) == len(ex.input_ids) - a  # B - a target tokens

    def test_invariants(self, tiny_vocab):
        ex = D.to_training_example(
            [Turn(0, "tell me more"), Turn(1, "i feel sad today")],
            Turn(0, "that sounds hard"), tiny_vocab, 64,
        )
        B = len(ex.input_ids)
        assert 1 <= ex.source_len < B <= 64
        # mask true exactly at 1-indexed positions a+1..B
        for i in range(B):
            assert ex.loss_mask[i] == (i + 1 > ex.source_len)

    def test_drops_oldest_context_turn_first(self, tiny_vocab):
        long_turn = Turn(0, "x" * 40)
        short_turn = Turn(1, "hi")
        resp = Turn(0, "ok")
        resp_len = len(tok.encode(tiny_vocab, "ok")) + 1
        short_len = len(tok.encode(tiny_vocab, "hi")) + 1
        budget = short_len + resp_len + 2
        ex = D.to_training_example([long_turn, short_turn], resp, tiny_vocab, budget)
        assert ex.source_len == short_len  # oldest turn dropped, a recomputed
        assert not ex.truncated

    def test_truncates_response_tail_and_flags(self, tiny_vocab):
        ctx = [Turn(0, "hi")]
        resp = Turn(1, "y" * 50)
        a = len(tok.encode(tiny_vocab, "hi")) + 1
        ex = D.to_training_example(ctx, resp, tiny_vocab, a + 5)
        assert ex.truncated
        assert len(ex.input_ids) == a + 5
        assert ex.input_ids[-1] == tiny_vocab.eot_id

    def test_discards_when_no_response_room(self, tiny_vocab):
        ctx = [Turn(0, "z" * 100)]
        with pytest.raises(D.ExampleDiscardedError):
            D.to_training_example(ctx, Turn(1, "hello"), tiny_vocab, 10)

    def test_requires_context(self, tiny_vocab):
        with pytest.raises(ValueError):
            D.to_training_example([], Turn(1, "hello"), tiny_vocab, 10)


class TestJsonl:
    def test_round_trip(self, tiny_vocab, tmp_path):
        ds = [_dialogue("a", 5), _dialogue("b", 4)]
        examples = D.prepare_examples(ds, tiny_vocab, 2, 128)
        p = tmp_path / "ex.jsonl"
        D.write_examples_jsonl(examples, str(p))
        loaded = D.read_examples_jsonl(str(p))
        assert len(loaded) == len(examples) == 5
        for got, want in zip(loaded, examples):
            assert got.input_ids == want.input_ids
            assert got.source_len == want.source_len
            assert got.loss_mask == want.loss_mask
            assert got.conv_id == want.conv_id
            assert got.window_start == want.window_start

    def test_deterministic_bytes(self, tiny_vocab, tmp_path):
        ds = [_dialogue("a", 4)]
        examples = D.prepare_examples(ds, tiny_vocab, 2, 128)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        D.write_examples_jsonl(examples, str(p1))
        D.write_examples_jsonl(examples, str(p2))
        assert p1.read_bytes() == p2.read_bytes()


class TestSplit:
    def test_deterministic_and_partitioned(self):
        ds = [_dialogue(f"conv{i}", 4) for i in range(200)]
        s1 = D.split_dialogues(ds)
        s2 = D.split_dialogues(ds)
        ids = lambda part: [d.conv_id for d in part]
        assert ids(s1["train"]) == ids(s2["train"])
        total = sum(len(v) for v in s1.values())
        assert total == 200
        assert len(s1["train"]) > len(s1["valid"])
        assert len(s1["train"]) > len(s1["test"])
        assert len(s1["valid"]) > 0 and len(s1["test"]) > 0
