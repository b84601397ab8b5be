"""Attention-threshold filtering and the attention/type crosstab.

The reply-reported per-passage attention drives a second pass that keeps
only high-attention passages. On the replay fixture, raising the threshold
strips away answer-carrying passages and EM declines; the crosstab then
shows how weakly the argmax-attention passage aligns with the damaging one.
"""

from pathlib import Path

from passagelab.datamodel import QAInstance, parse_retrieval_file, read_patterns_file
from passagelab.gateway import ReaderGateway, ReplayBackend
from passagelab.selection import attention_threshold_sweep, attention_type_crosstab

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

instances = parse_retrieval_file((FIXTURES / "dataset.json").read_bytes())
patterns, labels = read_patterns_file(FIXTURES / "patterns.jsonl")
gateway = ReaderGateway(ReplayBackend(FIXTURES / "cache.jsonl"))

rows = attention_threshold_sweep(instances, [0.025, 0.05, 0.075, 0.1, 0.2], gateway)
print("threshold  EM      fallbacks")
for row in rows:
    print(f"{row.threshold:<9}  {row.em:.3f}   {row.n_fallback}")

records = []
for pattern in patterns:
    inst = next(i for i in instances if i.instance_id == pattern.instance_id)
    reply = gateway.answer(inst.question, inst.contexts, want_attention=True)
    records.append((inst, pattern, labels[inst.instance_id], list(reply.attention)))

crosstab = attention_type_crosstab(records)
print(f"\ninstances containing a damaging transition: {crosstab.n_dn_instances}")
print("type of the highest-attention passage:")
for t, share in sorted(crosstab.argmax_type_share.items(), key=lambda kv: -kv[1]):
    print(f"  {t}: {share:.1%}")
print("where the transitioned (wrong) answer string lives:")
for t, share in sorted(crosstab.prediction_location_share.items(), key=lambda kv: -kv[1]):
    print(f"  {t}: {share:.1%}")
