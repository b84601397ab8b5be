"""Re-scoring EM with an equivalence judge: SeEM and SeAcEM.

Exact match misses answers that differ only in surface form. A judge
expands the gold set with candidates it accepts; bits can only improve.
The scripted judge below plays the role of a remote LLM with one canned
response; the rule-based judge handles containment cases on its own.
"""

from passagelab.datamodel import EMPattern
from passagelab.metrics import RuleBasedJudge, ScriptedJudge, acem, semantic_em

question = "who sings does he love me with reba"
golds = ["Linda Davis"]
pattern = EMPattern(
    instance_id="reba",
    bits=(0, 1, 0),
    reader_fingerprint="demo",
    answers_at_k=("Linda Kaye Davis", "Linda Davis", "Linda Kaye Davis"),
)

print(f"question:     {question}")
print(f"gold answers: {golds}")
print(f"EM bits:      {''.join(map(str, pattern.bits))}")
print(f"AcEM bits:    {''.join(map(str, acem(pattern)))}")

judge = ScriptedJudge({("Linda Davis", "Linda Kaye Davis"): "Yes, the candidate is correct."})
scores = semantic_em(pattern, question, golds, judge)
print(f"\nscripted judge verdicts:")
for v in scores.verdicts:
    print(f"  {v.candidate!r} vs {v.gold_answer!r} -> {v.verdict} ({v.raw_response!r})")
print(f"SeEM bits:    {''.join(map(str, scores.se_bits))}")
print(f"SeAcEM bits:  {''.join(map(str, scores.se_acem_bits))}")

# the cheap rule judge accepts containment matches like dates with extra detail
rule = RuleBasedJudge()
date_pattern = EMPattern("kong", (0,), "demo", ("June 1, 2008",))
rescored = semantic_em(date_pattern, "when did the ride burn down", ["2008"], rule)
print(f"\nrule judge: {date_pattern.answers_at_k[0]!r} vs '2008' "
      f"-> SeEM {rescored.se_bits[0]}")
