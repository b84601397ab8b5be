"""Stability under injected negatives: gold passage plus 0..4 distractors.

Random negatives rarely collide with a question, while BM25 negatives are
chosen for lexical overlap and reliably find the one damaging lookalike
planted for every third question. The stability error ratio (SER) counts
gold-correct answers that flip. The scripted reader treats any "VENOM"
passage as damaging.
"""

import random

from passagelab.datamodel import Passage, QAInstance
from passagelab.gateway import MockReader, ReaderGateway
from passagelab.simlab import build_bm25_index, run_injection_study

instances = []
corpus = []
markers = []
for i in range(12):
    rare = f"topic{i}word"
    markers.append((f"GOLD{i}M", f"fact {i}"))
    instances.append(
        QAInstance(
            instance_id=f"q{i:02d}",
            question=f"what is known about {rare}",
            gold_answers=(f"fact {i}",),
            contexts=(
                Passage(id=f"gold-{i}", title="gold", text=f"the {rare} entry states GOLD{i}M"),
            ),
        )
    )
    # four lexical neighbors per question; every third question gets a trap
    # that doubles the rare term, so BM25 ranks it first
    if i % 3 == 0:
        corpus.append(Passage(id=f"trap-{i}", title="", text=f"rumor: {rare} {rare} VENOM"))
    else:
        corpus.append(Passage(id=f"extra-{i}", title="", text=f"{rare} {rare} footnote"))
    for j in range(3):
        corpus.append(Passage(id=f"plain-{i}-{j}", title="", text=f"harmless mention {j} of {rare}"))
corpus += [
    Passage(id=f"noise-{n}", title="", text=f"misc chatter entry number {n}")
    for n in range(120)
]

reader = MockReader(markers=markers, poison_marker="VENOM", poison_answer="rumor",
                    default_answer="unknown")
index = build_bm25_index(corpus)
study = run_injection_study(
    instances, modes=["random", "bm25"], counts=[0, 1, 2, 3, 4],
    gateway=ReaderGateway(reader), index=index, corpus=corpus, seed=1,
)

print("mode    count  EM      AcEM    SER")
for row in study.rows:
    print(f"{row.mode:<7} {row.count:>4}  {row.em:.3f}   {row.acem:.3f}   {row.ser:.3f}")

print("\nBM25 negatives sit close to the question wording, so they are the ones")
print("that hit the planted traps (4 of 12 questions); random negatives almost")
print("never do. SER isolates the gold-correct flips.")
