"""Answer scoring: normalization, EM, AcEM, SER, and semantic-equivalence judging.

Scoring follows the open-domain QA convention (lowercase, strip punctuation,
drop English articles, collapse whitespace). ``NORMALIZATION_VERSION`` is
stamped into output schemas so alternative normalizers can coexist without
invalidating caches.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

import requests

from .datamodel import EMPattern, PassageType, PassageTypeLabel, QAInstance
from .errors import ProtocolError, TransportError, UndefinedRatioError

NORMALIZATION_VERSION = "qa-norm-1"

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(candidate: str, golds: Sequence[str]) -> int:
    """1 iff the normalized candidate equals some normalized gold answer."""
    if not golds:
        raise ValueError("golds must be non-empty")
    cand = normalize_answer(candidate)
    return int(any(cand == normalize_answer(g) for g in golds))


def acem(pattern: EMPattern | Sequence[int]) -> list[int]:
    """Accumulated exact match: prefix maximum of the EM bits."""
    bits = pattern.bits if isinstance(pattern, EMPattern) else tuple(pattern)
    if not bits:
        raise ValueError("pattern must be non-empty")
    out = []
    best = 0
    for b in bits:
        best = max(best, b)
        out.append(best)
    return out


# ---------------------------------------------------------------------------
# Stability Error Ratio
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityRecord:
    """One instance's outcome for a fixed negative-injection count."""

    correct_with_gold_only: bool
    answer_changed: bool


def ser(records: Sequence[StabilityRecord], k: int) -> float:
    """Fraction of gold-only-correct instances whose answer changed after k negatives.

    "Changed" compares normalized answer strings against the gold-only run,
    not EM bits; only instances correct with the gold passage alone enter
    the denominator.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    denom = [r for r in records if r.correct_with_gold_only]
    if not denom:
        raise UndefinedRatioError(f"no gold-only-correct instances at k={k}")
    changed = sum(1 for r in denom if r.answer_changed)
    return changed / len(denom)


# ---------------------------------------------------------------------------
# Semantic-equivalence judging
# ---------------------------------------------------------------------------


class Verdict(str, Enum):
    YES = "yes"
    NO = "no"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class JudgeVerdict:
    question: str
    gold_answer: str
    candidate: str
    verdict: Verdict
    raw_response: str
    judge_id: str


PROMPT_TEMPLATE = "Question: {question}\nAnswer: {gold}\nCandidate: {candidate}\nIs candidate correct?"


def parse_verdict(raw_response: str) -> Verdict:
    """Accept only responses starting with an explicit yes/no token."""
    tokens = raw_response.split()
    if not tokens:
        return Verdict.DISCARDED
    head = tokens[0].strip(string.punctuation).lower()
    if head == "yes":
        return Verdict.YES
    if head == "no":
        return Verdict.NO
    return Verdict.DISCARDED


class Judge:
    """Answers "is this candidate equivalent to this gold answer?"."""

    judge_id: str = "judge"

    def raw_response(self, question: str, gold: str, candidate: str) -> str:
        raise NotImplementedError

    def judge(self, question: str, gold: str, candidate: str) -> JudgeVerdict:
        raw = self.raw_response(question, gold, candidate)
        return JudgeVerdict(
            question=question,
            gold_answer=gold,
            candidate=candidate,
            verdict=parse_verdict(raw),
            raw_response=raw,
            judge_id=self.judge_id,
        )


class RuleBasedJudge(Judge):
    """Normalized substring containment in either direction."""

    judge_id = "rule-containment-1"

    def raw_response(self, question: str, gold: str, candidate: str) -> str:
        g, c = normalize_answer(gold), normalize_answer(candidate)
        if g and c and (g in c or c in g):
            return "Yes"
        return "No"


class ScriptedJudge(Judge):
    """Table-driven judge for tests: (gold, candidate) -> raw response."""

    def __init__(self, table: Mapping[tuple[str, str], str], default: str = "Cannot say.",
                 judge_id: str = "scripted-judge"):
        self.table = dict(table)
        self.default = default
        self.judge_id = judge_id

    def raw_response(self, question: str, gold: str, candidate: str) -> str:
        return self.table.get((gold, candidate), self.default)


class HttpChatJudge(Judge):
    """Chat-completion client posting the fixed prompt template.

    Expects an OpenAI-style endpoint: POST {url} with {"model", "messages"}
    returning {"choices": [{"message": {"content": ...}}]}. The API key is
    read from ``api_key_env`` (default JUDGE_API_KEY).
    """

    def __init__(self, url: str, model: str, api_key_env: str = "JUDGE_API_KEY",
                 timeout: float = 60.0):
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.judge_id = f"http:{model}"

    def raw_response(self, question: str, gold: str, candidate: str) -> str:
        prompt = PROMPT_TEMPLATE.format(question=question, gold=gold, candidate=candidate)
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self.url,
                json={"model": self.model, "messages": [{"role": "user", "content": prompt}]},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            body = resp.json()
        except requests.RequestException as e:
            raise TransportError(f"judge request failed: {e}") from e
        except ValueError as e:
            raise ProtocolError(f"judge reply is not JSON: {e}") from e
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise ProtocolError(f"judge reply missing choices[0].message.content: {body!r}") from e


class VerdictCache:
    """Verdicts keyed by (judge_id, question, gold, candidate), optionally persisted.

    LLM judges are nondeterministic, so a cached verdict is authoritative.
    """

    def __init__(self, path=None):
        self.path = path
        self._store: dict[tuple[str, str, str, str], JudgeVerdict] = {}
        if path is not None and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    v = JudgeVerdict(
                        question=rec["question"],
                        gold_answer=rec["gold_answer"],
                        candidate=rec["candidate"],
                        verdict=Verdict(rec["verdict"]),
                        raw_response=rec["raw_response"],
                        judge_id=rec["judge_id"],
                    )
                    self._store[self._key(v.judge_id, v.question, v.gold_answer, v.candidate)] = v

    @staticmethod
    def _key(judge_id: str, question: str, gold: str, candidate: str):
        return (judge_id, question, gold, candidate)

    def get(self, judge_id: str, question: str, gold: str, candidate: str) -> JudgeVerdict | None:
        return self._store.get(self._key(judge_id, question, gold, candidate))

    def put(self, verdict: JudgeVerdict) -> None:
        key = self._key(verdict.judge_id, verdict.question, verdict.gold_answer, verdict.candidate)
        if key in self._store:
            return
        self._store[key] = verdict
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps({
                    "question": verdict.question,
                    "gold_answer": verdict.gold_answer,
                    "candidate": verdict.candidate,
                    "verdict": verdict.verdict.value,
                    "raw_response": verdict.raw_response,
                    "judge_id": verdict.judge_id,
                }, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._store)


@dataclass(frozen=True)
class SemanticScores:
    """EM and AcEM recomputed against a judge-adjusted gold set."""

    se_bits: tuple[int, ...]
    se_acem_bits: tuple[int, ...]
    adjusted_golds: tuple[str, ...]
    verdicts: tuple[JudgeVerdict, ...]


def semantic_em(
    pattern: EMPattern,
    question: str,
    golds: Sequence[str],
    judge: Judge,
    cache: VerdictCache | None = None,
) -> SemanticScores:
    """Re-score a pattern after letting a judge expand the gold answer set.

    Distinct candidate answers that are not already exact matches are judged
    against every gold answer; a "yes" adds the candidate to the adjusted
    gold list. Discarded verdicts count as "no" for scoring but are kept in
    the verdict log. Bits can only flip 0 -> 1.
    """
    if cache is None:
        cache = VerdictCache()
    adjusted = list(golds)
    verdicts: list[JudgeVerdict] = []
    seen: set[str] = set()
    for candidate in pattern.answers_at_k:
        if candidate in seen:
            continue
        seen.add(candidate)
        if exact_match(candidate, golds):
            continue
        for gold in golds:
            verdict = cache.get(judge.judge_id, question, gold, candidate)
            if verdict is None:
                verdict = judge.judge(question, gold, candidate)
                cache.put(verdict)
            verdicts.append(verdict)
            if verdict.verdict is Verdict.YES:
                adjusted.append(candidate)
                break
    se_bits = tuple(exact_match(a, adjusted) for a in pattern.answers_at_k)
    return SemanticScores(
        se_bits=se_bits,
        se_acem_bits=tuple(acem(se_bits)),
        adjusted_golds=tuple(adjusted),
        verdicts=tuple(verdicts),
    )


# ---------------------------------------------------------------------------
# Dataset-level reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DnReviewRecord:
    """One instance with a definite negative, exported for manual review."""

    instance_id: str
    em_pattern: str
    dn_indices: tuple[int, ...]  # 0-based passage indices
    first_dn_index: int
    prediction: str  # the transitioned (wrong) answer at the first DN
    question: str | None = None
    gold_answers: tuple[str, ...] | None = None
    prediction_in_dn_context: bool | None = None
    context_index_including_prediction: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "em_pattern": self.em_pattern,
            "dn_indices": list(self.dn_indices),
            "first_dn_index": self.first_dn_index,
            "prediction": self.prediction,
            "question": self.question,
            "gold_answers": list(self.gold_answers) if self.gold_answers is not None else None,
            "prediction_in_dn_context": self.prediction_in_dn_context,
            "context_index_including_prediction": self.context_index_including_prediction,
        }


@dataclass
class MetricsReport:
    """Mean EM/AcEM curves plus type counts and the DN review export."""

    ks: tuple[int, ...]
    em_at_k: dict[int, float]
    acem_at_k: dict[int, float]
    em_at_max: float
    acem_at_max: float
    type_counts: dict[PassageType, int]
    n_instances: int
    dn_review: list[DnReviewRecord] = field(default_factory=list)

    @property
    def gap_at_max(self) -> float:
        return self.acem_at_max - self.em_at_max

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "em", "acem"])
        for k in self.ks:
            w.writerow([k, f"{self.em_at_k[k]:.6f}", f"{self.acem_at_k[k]:.6f}"])
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(
            {
                "n_instances": self.n_instances,
                "em_at_max": self.em_at_max,
                "acem_at_max": self.acem_at_max,
                "gap_at_max": self.gap_at_max,
                "type_counts": {t.value: c for t, c in sorted(self.type_counts.items(), key=lambda kv: kv[0].value)},
                "n_dn_instances": len(self.dn_review),
                "passage_index_convention": "0-based",
                "k_convention": "1-based",
            },
            indent=2,
        )

    def dn_review_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in self.dn_review)


def metrics_report(
    patterns: Sequence[EMPattern],
    labels: Mapping[str, Sequence[PassageTypeLabel]],
    ks: Sequence[int],
    instances: Mapping[str, QAInstance] | None = None,
) -> MetricsReport:
    """Aggregate per-k EM/AcEM means, type counts, and the DN review list.

    EM@k for a pattern shorter than k uses the deepest available prefix.
    When ``instances`` is given, DN records also report whether the
    transitioned prediction appears in the DN passage and the first context
    containing it.
    """
    if not patterns:
        raise ValueError("patterns must be non-empty")
    ks = tuple(sorted(set(ks)))
    if any(k < 1 for k in ks):
        raise ValueError("every k must be >= 1")

    em_sums = {k: 0 for k in ks}
    acem_sums = {k: 0 for k in ks}
    em_max_sum = 0
    acem_max_sum = 0
    type_counts: dict[PassageType, int] = {t: 0 for t in PassageType}
    dn_review: list[DnReviewRecord] = []

    for p in patterns:
        prefix_max = acem(p)
        for k in ks:
            i = min(k, len(p)) - 1
            em_sums[k] += p.bits[i]
            acem_sums[k] += prefix_max[i]
        em_max_sum += p.bits[-1]
        acem_max_sum += prefix_max[-1]

        inst_labels = sorted(labels.get(p.instance_id, ()), key=lambda l: l.passage_index)
        for lab in inst_labels:
            type_counts[lab.label] += 1
        dn_indices = tuple(l.passage_index for l in inst_labels if l.label is PassageType.DN)
        if dn_indices:
            dn_review.append(_dn_record(p, dn_indices, instances))

    n = len(patterns)
    return MetricsReport(
        ks=ks,
        em_at_k={k: em_sums[k] / n for k in ks},
        acem_at_k={k: acem_sums[k] / n for k in ks},
        em_at_max=em_max_sum / n,
        acem_at_max=acem_max_sum / n,
        type_counts=type_counts,
        n_instances=n,
        dn_review=dn_review,
    )


def _dn_record(
    p: EMPattern,
    dn_indices: tuple[int, ...],
    instances: Mapping[str, QAInstance] | None,
) -> DnReviewRecord:
    first_dn = dn_indices[0]
    prediction = p.answers_at_k[first_dn]
    question = None
    golds = None
    in_dn = None
    containing = None
    if instances is not None and p.instance_id in instances:
        inst = instances[p.instance_id]
        question = inst.question
        golds = inst.gold_answers
        pred_norm = normalize_answer(prediction)
        if pred_norm:
            in_dn = pred_norm in normalize_answer(inst.contexts[first_dn].text)
            for i, ctx in enumerate(inst.contexts[: len(p)]):
                if pred_norm in normalize_answer(ctx.text):
                    containing = i
                    break
        else:
            in_dn = False
    return DnReviewRecord(
        instance_id=p.instance_id,
        em_pattern=p.bitstring,
        dn_indices=dn_indices,
        first_dn_index=first_dn,
        prediction=prediction,
        question=question,
        gold_answers=golds,
        prediction_in_dn_context=in_dn,
        context_index_including_prediction=containing,
    )
