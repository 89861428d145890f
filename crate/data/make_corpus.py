"""Regenerates corpus.txt: a seeded Zipf-weighted bigram chain over 128 ids."""

import random

VOCAB = 128
LINES = 48
LINE_LEN = 64
SEED = 20240601

rng = random.Random(SEED)
weights = [1.0 / (r + 1) for r in range(VOCAB)]
successors = []
for _ in range(VOCAB):
    order = list(range(VOCAB))
    rng.shuffle(order)
    successors.append(order)

with open("corpus.txt", "w") as out:
    out.write(f"# synthetic bigram corpus: vocab {VOCAB}, seed {SEED}; regenerate with make_corpus.py\n")
    for _ in range(LINES):
        tok = rng.randrange(VOCAB)
        line = [tok]
        for _ in range(LINE_LEN - 1):
            tok = rng.choices(successors[tok], weights)[0]
            line.append(tok)
        out.write(" ".join(map(str, line)) + "\n")
