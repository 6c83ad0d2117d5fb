"""Regenerates the bundled mini benchmark.

Writes corpus.jsonl (200 chunks), dataset.jsonl (50 questions),
generator.json (scripted answers for the table generator) and config.json.

Texts are built from invented words so the bag-of-words mock embedder
(`bow:768:0`) gives a predictable geometry:

* 20 "hidden" questions. Each has five decoy chunks that repeat most of the
  question's words and a ground-truth chunk that shares only two. The decoys
  fill the question's top-5, so the ground truth is found only through the
  scripted pseudo-context, which shares four words with it.
* 30 "plain" questions whose ground truth is the question's nearest chunk.
  For the first 10 the direct answer is already right and agrees with the
  pseudo-context answer, so the gate skips retrieval.
* 50 filler chunks.

Run from anywhere: `python data/mini/generate.py`.
"""

import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
rng = random.Random(7)

ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "th", "gl"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
CODAS = ["", "n", "r", "s", "l", "th", "k"]
_used = set()


def word():
    while True:
        w = "".join(
            rng.choice(ONSETS) + rng.choice(VOWELS) + rng.choice(CODAS)
            for _ in range(rng.randint(2, 3))
        )
        if w not in _used and w not in {"which", "warden", "guards", "who", "built"}:
            _used.add(w)
            return w


def cap(w):
    return w[0].upper() + w[1:]


corpus, dataset, rules = [], [], []


def pseudo_rule(question, pseudo):
    rules.append({"contains": f"Question: {question}\nBackground:", "completion": pseudo})


for i in range(20):
    qid = f"hidden-{i:02d}"
    a, b = word(), word()
    shared = [word() for _ in range(4)]
    answer = cap(word())
    question = f"Which warden guards {cap(a)} {cap(b)}?"
    pseudo = " ".join(cap(w) for w in shared) + "."
    gt_id = f"h{i:02d}-gt"
    corpus.append({
        "id": gt_id,
        "text": f"{cap(a)} {cap(b)}: {' '.join(shared)} {answer}.",
    })
    for j in range(5):
        corpus.append({
            "id": f"h{i:02d}-decoy{j}",
            "text": f"Which warden guards {cap(a)} {cap(b)}? {word()} {word()}.",
        })
    dataset.append({"id": qid, "question": question, "answers": [answer], "gt_chunk_ids": [gt_id]})
    pseudo_rule(question, pseudo)
    # Only a context holding the ground-truth chunk yields the answer.
    rules.append({"contains": ["Context:", answer, f"Question: {question}\n"], "completion": answer})
    rules.append({
        "contains": ["Answer the question with a short phrase", f"Question: {question}\n"],
        "completion": cap(word()),
    })

for i in range(30):
    qid = f"plain-{i:02d}"
    a, b, c, z = word(), word(), word(), word()
    answer = cap(word())
    question = f"Who built {cap(a)} {cap(b)} {cap(c)}?"
    pseudo = f"{cap(a)} {cap(b)} {z}."
    gt_id = f"p{i:02d}-gt"
    corpus.append({"id": gt_id, "text": f"{cap(a)} {cap(b)} {cap(c)} was built by {answer}."})
    dataset.append({"id": qid, "question": question, "answers": [answer], "gt_chunk_ids": [gt_id]})
    pseudo_rule(question, pseudo)
    rules.append({"contains": ["Context:", answer, f"Question: {question}\n"], "completion": answer})
    if i < 10:
        rules.append({"contains": ["Context:", pseudo, f"Question: {question}\n"], "completion": answer})
        rules.append({
            "contains": ["Answer the question with a short phrase", f"Question: {question}\n"],
            "completion": answer,
        })
    else:
        rules.append({
            "contains": ["Answer the question with a short phrase", f"Question: {question}\n"],
            "completion": cap(word()),
        })

for i in range(50):
    corpus.append({"id": f"filler-{i:02d}", "text": " ".join(word() for _ in range(6)) + "."})

assert len(corpus) == 200 and len(dataset) == 50


def write_jsonl(name, rows):
    with open(HERE / name, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


write_jsonl("corpus.jsonl", corpus)
write_jsonl("dataset.jsonl", dataset)
(HERE / "generator.json").write_text(
    json.dumps({"rules": rules, "default": "unknown"}, indent=2) + "\n", encoding="utf-8"
)
(HERE / "config.json").write_text(
    json.dumps(
        {"mode": "pairs", "n": 5, "k": 3, "embedder": "bow:768:0", "generator": "table:generator.json"},
        indent=2,
    )
    + "\n",
    encoding="utf-8",
)
