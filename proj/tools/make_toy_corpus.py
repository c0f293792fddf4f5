#!/usr/bin/env python3
"""Generate the synthetic sentiment corpus used by the text fixtures.

Usage: make_toy_corpus.py OUT_DIR

Each record is one JSON object per line: {"tokens": [...], "label": 0|1}.
Label 1 is positive. A negator flips the polarity of the adjective phrase it
precedes; in "X but Y" sentences the clause after "but" decides the label.
"""
import json
import random
import sys

POSITIVE = ["good", "great", "fun", "glorious", "delightful", "amazing", "charming", "pleasurable"]
NEGATIVE = ["bad", "dull", "boring", "grotesque", "mundane", "pointless", "awful", "bleak"]
INTENSIFIERS = ["very", "really", "so"]
NEGATORS = ["not", "never", "hardly"]
SUBJECTS = [["the", "movie"], ["the", "film"], ["this", "story"], ["the", "acting"], ["the", "plot"], ["it"]]
VERBS = ["is", "was", "seems"]


def clause(rng):
    polarity = rng.random() < 0.5
    adjective = rng.choice(POSITIVE if polarity else NEGATIVE)
    words = list(rng.choice(SUBJECTS)) + [rng.choice(VERBS)]
    negated = rng.random() < 0.35
    if negated:
        words.append(rng.choice(NEGATORS))
    if rng.random() < 0.5:
        words.append(rng.choice(INTENSIFIERS))
    words.append(adjective)
    return words, polarity != negated


def sentence(rng):
    first, label = clause(rng)
    if rng.random() < 0.25:
        second, label = clause(rng)
        return first + ["but"] + second[-3:], label
    return first + ["."], label


def main():
    out = sys.argv[1]
    rng = random.Random(1729)
    for name, count in (("train", 3000), ("test", 500)):
        with open(f"{out}/{name}.jsonl", "w", encoding="utf-8") as f:
            for _ in range(count):
                tokens, label = sentence(rng)
                f.write(json.dumps({"tokens": tokens, "label": int(label)}) + "\n")


if __name__ == "__main__":
    main()
