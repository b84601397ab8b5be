"""Incremental inference over context prefixes and passage-type labeling.

The reader is driven on growing prefixes of the retrieved list; the binary
sequence of exact-match outcomes (the EM pattern) is the sole input to
typing. Transitions identify definite positives and negatives; runs of
equal bits are only weakly informative.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

from .datamodel import EMPattern, PassageType, PassageTypeLabel, QAInstance
from .errors import CapabilityError
from .gateway import ReaderGateway
from .metrics import exact_match


class RunCheckpoint:
    """Per-prefix answers persisted as they arrive, so interrupted runs resume.

    Records are JSON-lines ``{"instance_id", "k", "answer"}`` plus a
    ``{"instance_id", "done": true}`` marker once an instance completes.
    """

    def __init__(self, path=None):
        self.path = path
        self._answers: dict[tuple[str, int], str] = {}
        self._done: set[str] = set()
        if path is not None and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    if rec.get("done"):
                        self._done.add(rec["instance_id"])
                    else:
                        self._answers[(rec["instance_id"], rec["k"])] = rec["answer"]

    def get(self, instance_id: str, k: int) -> str | None:
        return self._answers.get((instance_id, k))

    def put(self, instance_id: str, k: int, answer: str) -> None:
        self._answers[(instance_id, k)] = answer
        self._write({"instance_id": instance_id, "k": k, "answer": answer})

    def mark_done(self, instance_id: str) -> None:
        if instance_id in self._done:
            return
        self._done.add(instance_id)
        self._write({"instance_id": instance_id, "done": True})

    def is_done(self, instance_id: str) -> bool:
        return instance_id in self._done

    def _write(self, record) -> None:
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")


def incremental_inference(
    instance: QAInstance,
    max_k: int,
    gateway: ReaderGateway,
    checkpoint: RunCheckpoint | None = None,
) -> EMPattern:
    """Score the reader on prefixes top-1 .. top-max_k of the retrieved list.

    One logical reader evaluation per prefix size; cache and checkpoint hits
    do not reach the backend. Answers are stored raw so patterns can be
    re-scored later with a different normalizer or judge.
    """
    if not 1 <= max_k <= len(instance.contexts):
        raise ValueError(
            f"max_k must be in 1..{len(instance.contexts)}, got {max_k}"
        )
    answers: list[str] = []
    for k in range(1, max_k + 1):
        answer = checkpoint.get(instance.instance_id, k) if checkpoint else None
        if answer is None:
            answer = gateway.answer(instance.question, instance.contexts[:k]).answer
            if checkpoint:
                checkpoint.put(instance.instance_id, k, answer)
        answers.append(answer)
    if checkpoint:
        checkpoint.mark_done(instance.instance_id)
    bits = tuple(exact_match(a, instance.gold_answers) for a in answers)
    return EMPattern(
        instance_id=instance.instance_id,
        bits=bits,
        reader_fingerprint=gateway.fingerprint(),
        answers_at_k=tuple(answers),
    )


def label_types(pattern: EMPattern) -> list[PassageTypeLabel]:
    """Assign exactly one of IZ/DP/DN/SP/SN to every prefix position.

    For 1-based position i: IZ while no prefix has matched yet; DP on a
    0->1 transition (or a leading 1); DN on a 1->0 transition; SP on 1->1;
    SN on 0->0 after some match. Emitted with 0-based passage_index.
    """
    if not pattern.bits:
        raise ValueError("pattern must be non-empty")
    labels = []
    seen_one = False
    prev = 0
    for i, bit in enumerate(pattern.bits):
        if bit == 1:
            label = PassageType.SP if (i > 0 and prev == 1) else PassageType.DP
            seen_one = True
        else:
            if i > 0 and prev == 1:
                label = PassageType.DN
            elif seen_one:
                label = PassageType.SN
            else:
                label = PassageType.IZ
        labels.append(PassageTypeLabel(pattern.instance_id, i, label))
        prev = bit
    return labels


def reconstruct(labels: Sequence[PassageTypeLabel]) -> tuple[int, ...]:
    """Recover the EM bits a label sequence came from (inverse of label_types)."""
    ordered = sorted(labels, key=lambda l: l.passage_index)
    if [l.passage_index for l in ordered] != list(range(len(ordered))):
        raise ValueError("labels must cover a contiguous 0-based index range")
    return tuple(1 if l.label in (PassageType.DP, PassageType.SP) else 0 for l in ordered)


@dataclass(frozen=True)
class LeaveOneOutResult:
    flags: tuple[tuple[int, bool], ...]  # (passage_index, positive)
    reader_calls: int

    def positives(self) -> list[int]:
        return [i for i, pos in self.flags if pos]


def leave_one_out(instance: QAInstance, n: int, gateway: ReaderGateway) -> LeaveOneOutResult:
    """Baseline attribution: hold out each of the top-n passages in turn.

    A passage is positive iff the full top-n answers correctly and dropping
    it breaks the answer. Costs n+1 reader calls, recorded for the cost
    comparison against incremental inference.
    """
    if not 2 <= n <= len(instance.contexts):
        raise ValueError(f"n must be in 2..{len(instance.contexts)}, got {n}")
    top = instance.contexts[:n]
    calls = 0
    full = gateway.answer(instance.question, top).answer
    calls += 1
    full_correct = exact_match(full, instance.gold_answers) == 1
    flags = []
    for i in range(n):
        subset = top[:i] + top[i + 1:]
        answer = gateway.answer(instance.question, subset).answer
        calls += 1
        without_correct = exact_match(answer, instance.gold_answers) == 1
        flags.append((i, full_correct and not without_correct))
    return LeaveOneOutResult(flags=tuple(flags), reader_calls=calls)


def brute_force_subset_oracle(
    instance: QAInstance,
    n: int,
    gateway: ReaderGateway,
    force_remote: bool = False,
) -> dict[int, bool]:
    """Exact-match outcome of every non-empty subset of the top-n contexts.

    The subset bitmask sets bit i (0-based) when the passage at index i is
    included. 2^n - 1 reader calls, so this is a test oracle: n is capped
    at 12 and remote backends are refused unless forced.
    """
    if n > 12:
        raise ValueError(f"n={n} would need {2 ** n - 1} reader calls; cap is 12")
    if not 1 <= n <= len(instance.contexts):
        raise ValueError(f"n must be in 1..{len(instance.contexts)}, got {n}")
    if gateway.backend.is_remote and not force_remote:
        raise CapabilityError(
            "subset oracle refuses remote backends (2^n calls); pass force_remote=True to override"
        )
    out: dict[int, bool] = {}
    for mask in range(1, 2 ** n):
        subset = [instance.contexts[i] for i in range(n) if mask & (1 << i)]
        answer = gateway.answer(instance.question, subset).answer
        out[mask] = exact_match(answer, instance.gold_answers) == 1
    return out
