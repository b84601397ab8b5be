"""Incremental inference and passage typing, end to end on a scripted reader.

The reader here is a deterministic mock whose answer depends only on marker
tokens planted in the passages, so the walk-through needs no model. Watch
how each prefix answer turns into one EM bit, and how the 0/1 transitions
type every passage.
"""

from passagelab.datamodel import Passage, QAInstance
from passagelab.gateway import MockReader, ReaderGateway
from passagelab.metrics import acem
from passagelab.patterns import incremental_inference, label_types

# A question with five retrieved passages. Passage 2 carries the evidence;
# passage 4 derails the reader (its marker outranks the older one).
instance = QAInstance(
    instance_id="demo",
    question="who recorded the duet?",
    gold_answers=("Linda Davis",),
    contexts=(
        Passage(id="p0", title="intro", text="a passage about duets in general"),
        Passage(id="p1", title="evidence", text="the duet was recorded by EVIDENCE_TOKEN"),
        Passage(id="p2", title="echo", text="another passage repeating the story"),
        Passage(id="p3", title="confuser", text="a lookalike article DERAIL_TOKEN about a tour"),
        Passage(id="p4", title="tail", text="closing passage with nothing new"),
    ),
)

reader = MockReader(
    markers=[("DERAIL_TOKEN", "Reba McEntire"), ("EVIDENCE_TOKEN", "Linda Davis")],
    default_answer="unknown",
)
gateway = ReaderGateway(reader)

pattern = incremental_inference(instance, max_k=5, gateway=gateway)
print(f"question: {instance.question}")
for k, answer in enumerate(pattern.answers_at_k, start=1):
    print(f"  top-{k}: reader said {answer!r} -> EM {pattern.bits[k - 1]}")

print(f"\nEM pattern:  {pattern.bitstring}")
print(f"AcEM per k:  {''.join(str(b) for b in acem(pattern))}")

print("\npassage types (0-based index):")
for label in label_types(pattern):
    print(f"  [{label.passage_index}] {label.label}")
