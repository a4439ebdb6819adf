"""Synthetic emotion-grounded dialogues for desk-scale runs.

The real fine-tuning corpus is large and external; these generators produce
small CSV-compatible stand-ins with the same row schema. Two flavors:

  * make_synthetic_dialogues: varied templated conversations (3-8 turns)
    for pipeline, segmentation, and trend experiments.
  * make_memorizable_dialogues: every next turn is a deterministic function
    of its context with a unique topic word per dialogue, so a small model
    can drive the loss to ~0 (the overfit fixture).
"""

from __future__ import annotations

import csv

import numpy as np

from .data import Dialogue, Turn

_EMOTIONS = [
    "joyful", "anxious", "proud", "lonely", "grateful", "afraid",
    "nostalgic", "hopeful", "guilty", "content", "angry", "surprised",
]

_TOPICS = [
    "exam", "job", "move", "trip", "game", "dog", "garden", "recipe",
    "concert", "interview", "project", "race", "storm", "reunion",
]

_OPENERS = [
    "i feel {emotion} about the {topic}",
    "the {topic} made me so {emotion} today",
    "i have been {emotion} since the {topic}",
]

_LISTENER = [
    "that sounds really {emotion} , tell me more about the {topic}",
    "i hear you , the {topic} can do that",
    "thank you for sharing about the {topic}",
    "how did the {topic} make you feel afterwards",
]

_SPEAKER = [
    "honestly the {topic} was a lot to handle",
    "i keep thinking about the {topic} all the time",
    "talking about the {topic} helps a little",
    "maybe the {topic} will turn out fine",
]


def make_synthetic_dialogues(n: int, seed: int = 0, min_turns: int = 3, max_turns: int = 8) -> list[Dialogue]:
    rng = np.random.default_rng(seed)
    dialogues = []
    for i in range(n):
        emotion = _EMOTIONS[rng.integers(len(_EMOTIONS))]
        topic = _TOPICS[rng.integers(len(_TOPICS))]
        H = int(rng.integers(min_turns, max_turns + 1))
        turns = [Turn(0, _OPENERS[rng.integers(len(_OPENERS))].format(emotion=emotion, topic=topic))]
        for t in range(1, H):
            pool = _LISTENER if t % 2 == 1 else _SPEAKER
            turns.append(
                Turn(t % 2, pool[rng.integers(len(pool))].format(emotion=emotion, topic=topic))
            )
        dialogues.append(
            Dialogue(
                conv_id=f"hit:{i}_conv:{i}",
                emotion_label=emotion,
                prompt=f"i want to talk about the {topic}",
                turns=turns,
            )
        )
    return dialogues


def make_memorizable_dialogues(n: int, turns_per_dialogue: int = 6, seed: int = 0) -> list[Dialogue]:
    """Each dialogue carries a unique topic word and a fixed turn script, so
    the mapping context -> next turn is exactly learnable."""
    rng = np.random.default_rng(seed)
    script = ["one", "two", "three", "four", "five", "six", "seven", "eight"]
    dialogues = []
    for i in range(n):
        emotion = _EMOTIONS[int(rng.integers(len(_EMOTIONS)))]
        topic = f"topic{i}"
        turns = [
            Turn(t % 2, f"{topic} step {script[t % len(script)]}")
            for t in range(turns_per_dialogue)
        ]
        dialogues.append(
            Dialogue(conv_id=f"mem:{i}", emotion_label=emotion, prompt=topic, turns=turns)
        )
    return dialogues


def write_dialogues_csv(dialogues: list[Dialogue], path: str) -> None:
    """Write dialogues in the utterance-per-row CSV layout the ingester reads."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["conv_id", "utterance_idx", "context", "prompt", "speaker_idx", "utterance"])
        for d in dialogues:
            for i, turn in enumerate(d.turns, start=1):
                writer.writerow(
                    [
                        d.conv_id,
                        i,
                        d.emotion_label,
                        d.prompt.replace(",", "_comma_"),
                        turn.speaker_index,
                        turn.text.replace(",", "_comma_"),
                    ]
                )
