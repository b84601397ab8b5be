"""Negative-injection study: gold passage plus sampled distractors.

Negatives come either uniformly at random from a corpus or from a BM25
index (high lexical overlap with the question, excluding anything that
contains a gold answer). The reader runs on the gold passage plus 0..c
negatives and the study tracks EM, AcEM, and the stability error ratio.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .datamodel import Passage, QAInstance
from .errors import IndexBuildError, InsufficientCorpusError, UndefinedRatioError
from .gateway import ReaderGateway
from .metrics import StabilityRecord, exact_match, normalize_answer, ser

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4


def tokenize(text: str) -> list[str]:
    """Lowercase word split on non-alphanumeric characters."""
    out = []
    word = []
    for ch in text.lower():
        if ch.isalnum():
            word.append(ch)
        elif word:
            out.append("".join(word))
            word = []
    if word:
        out.append("".join(word))
    return out


class Bm25Index:
    """Okapi BM25 over an in-memory corpus, via an inverted index.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); query terms contribute
    with multiplicity. Ties in ranking break by passage id ascending.
    """

    def __init__(self, passages: Sequence[Passage], k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        if not passages:
            raise IndexBuildError("cannot build a BM25 index over an empty corpus")
        self.k1 = k1
        self.b = b
        self.passages = list(passages)
        self.doc_len: list[int] = []
        self._postings: dict[str, list[tuple[int, int]]] = {}  # term -> [(doc, tf)]
        for doc_id, p in enumerate(self.passages):
            tokens = tokenize(p.text)
            self.doc_len.append(len(tokens))
            for term, tf in Counter(tokens).items():
                self._postings.setdefault(term, []).append((doc_id, tf))
        self.n_docs = len(self.passages)
        self.avgdl = sum(self.doc_len) / self.n_docs
        self._idf = {
            term: math.log(1.0 + (self.n_docs - len(post) + 0.5) / (len(post) + 0.5))
            for term, post in self._postings.items()
        }

    def scores(self, query: str) -> dict[int, float]:
        """BM25 score per document sharing at least one query term."""
        acc: dict[int, float] = {}
        for term, qf in Counter(tokenize(query)).items():
            idf = self._idf.get(term)
            if idf is None:
                continue
            for doc_id, tf in self._postings[term]:
                norm = tf + self.k1 * (1.0 - self.b + self.b * self.doc_len[doc_id] / self.avgdl)
                acc[doc_id] = acc.get(doc_id, 0.0) + qf * idf * tf * (self.k1 + 1.0) / norm
        return acc

    def top(self, query: str, m: int) -> list[tuple[Passage, float]]:
        """Top-m passages by score; documents with no overlap never appear."""
        acc = self.scores(query)
        ranked = sorted(acc.items(), key=lambda kv: (-kv[1], self.passages[kv[0]].id))
        return [(self.passages[doc_id], score) for doc_id, score in ranked[:m]]


def build_bm25_index(
    corpus: Iterable[Passage], k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> Bm25Index:
    return Bm25Index(list(corpus), k1=k1, b=b)


def _contains_any_gold(text: str, golds: Sequence[str]) -> bool:
    norm = normalize_answer(text)
    return any(g and g in norm for g in (normalize_answer(a) for a in golds))


def _instance_seed(seed: int, instance_id: str, mode: str) -> int:
    digest = hashlib.sha256(f"{seed}|{mode}|{instance_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def sample_negatives(
    instance: QAInstance,
    mode: str,
    count: int,
    index: Bm25Index | None = None,
    seed: int = 0,
    corpus: Sequence[Passage] | None = None,
) -> list[Passage]:
    """Sample distractor passages for an instance's designated gold context.

    The designated gold passage is ``instance.contexts[0]``. Random mode
    draws uniformly without replacement from the corpus, excluding the gold
    passage. BM25 mode takes the top-ranked passages for the question,
    skipping the gold passage and anything whose normalized text contains a
    normalized gold answer. Deterministic given the seed and index.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if mode not in ("random", "bm25"):
        raise ValueError(f"mode must be 'random' or 'bm25', got {mode!r}")
    gold = instance.contexts[0]

    if mode == "bm25":
        if index is None:
            raise ValueError("bm25 mode requires an index")
        picked = []
        for passage, _score in index.top(instance.question, m=index.n_docs):
            if passage.id == gold.id:
                continue
            if _contains_any_gold(passage.text, instance.gold_answers):
                continue
            picked.append(passage)
            if len(picked) == count:
                return picked
        raise InsufficientCorpusError(
            f"instance {instance.instance_id!r}: only {len(picked)} bm25 negatives "
            f"available, need {count}"
        )

    pool = corpus if corpus is not None else (index.passages if index is not None else None)
    if pool is None:
        raise ValueError("random mode requires a corpus or an index")
    candidates = [p for p in pool if p.id != gold.id]
    if len(candidates) < count:
        raise InsufficientCorpusError(
            f"instance {instance.instance_id!r}: corpus has {len(candidates)} candidates "
            f"after exclusions, need {count}"
        )
    rng = random.Random(_instance_seed(seed, instance.instance_id, mode))
    return rng.sample(candidates, count)


@dataclass
class StudyRow:
    mode: str
    count: int
    em: float
    acem: float
    ser: float


@dataclass
class InjectionStudy:
    rows: list[StudyRow]
    # per mode/instance: answers and EM bits indexed by injection count
    detail: dict[str, dict[str, dict[int, str]]] = field(default_factory=dict)

    def row(self, mode: str, count: int) -> StudyRow:
        for r in self.rows:
            if r.mode == mode and r.count == count:
                return r
        raise KeyError((mode, count))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "count", "em", "acem", "ser"])
        for r in self.rows:
            w.writerow([r.mode, r.count, f"{r.em:.6f}", f"{r.acem:.6f}", f"{r.ser:.6f}"])
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(
            [
                {"mode": r.mode, "count": r.count, "em": r.em, "acem": r.acem, "ser": r.ser}
                for r in self.rows
            ],
            indent=2,
        )


def run_injection_study(
    instances: Sequence[QAInstance],
    modes: Sequence[str],
    counts: Sequence[int],
    gateway: ReaderGateway,
    index: Bm25Index | None = None,
    corpus: Sequence[Passage] | None = None,
    seed: int = 0,
) -> InjectionStudy:
    """Drive the reader on gold-plus-negatives contexts across injection counts.

    Each instance's designated gold passage is ``contexts[0]``; negatives
    for smaller counts are prefixes of one max-count sample, so the AcEM
    column is a true prefix maximum over the injection sequence. "Answer
    changed" compares normalized strings against the gold-only run.
    """
    counts = sorted(set(counts))
    if not counts or counts[0] < 0:
        raise ValueError("counts must be non-negative")
    max_count = counts[-1]
    ordered = sorted(instances, key=lambda i: i.instance_id)
    rows: list[StudyRow] = []
    detail: dict[str, dict[str, dict[int, str]]] = {}

    for mode in modes:
        per_instance_answers: dict[str, dict[int, str]] = {}
        per_instance_bits: dict[str, dict[int, int]] = {}
        for inst in ordered:
            gold = inst.contexts[0]
            negatives = (
                sample_negatives(inst, mode, max_count, index=index, seed=seed, corpus=corpus)
                if max_count > 0
                else []
            )
            answers: dict[int, str] = {}
            bits: dict[int, int] = {}
            for c in range(0, max_count + 1):
                reply = gateway.answer(inst.question, [gold] + negatives[:c])
                answers[c] = reply.answer
                bits[c] = exact_match(reply.answer, inst.gold_answers)
            per_instance_answers[inst.instance_id] = answers
            per_instance_bits[inst.instance_id] = bits
        detail[mode] = per_instance_answers

        for c in counts:
            em = sum(per_instance_bits[i][c] for i in per_instance_answers) / len(ordered)
            acem = sum(
                max(per_instance_bits[i][cc] for cc in range(0, c + 1))
                for i in per_instance_answers
            ) / len(ordered)
            if c == 0:
                ser_value = 0.0
            else:
                records = [
                    StabilityRecord(
                        correct_with_gold_only=per_instance_bits[i][0] == 1,
                        answer_changed=normalize_answer(per_instance_answers[i][c])
                        != normalize_answer(per_instance_answers[i][0]),
                    )
                    for i in per_instance_answers
                ]
                try:
                    ser_value = ser(records, c)
                except UndefinedRatioError:
                    ser_value = float("nan")
            rows.append(StudyRow(mode=mode, count=c, em=em, acem=acem, ser=ser_value))

    return InjectionStudy(rows=rows, detail=detail)
