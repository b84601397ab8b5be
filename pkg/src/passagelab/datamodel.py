"""Core value types and (de)serialization of the external file formats.

Conventions used by every schema in this package:

* ``passage_index`` is 0-based everywhere (files, labels, reports).
* Metric names ``EM@k`` / ``AcEM@k`` use 1-based ``k`` (the prefix size).

All types are immutable values after construction and safe to share
between threads.
"""

from __future__ import annotations

import hashlib
import io
import json
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, BinaryIO, Iterable, Mapping, Sequence

from .errors import ConsistencyError, FieldError, ParseError


class PassageType(str, Enum):
    """The five passage types derived from EM-pattern transitions."""

    IZ = "IZ"  # initial zeros: leading run of incorrect prefixes
    DP = "DP"  # definite positive: flips the prefix answer to correct
    DN = "DN"  # definite negative: flips the prefix answer to incorrect
    SP = "SP"  # semi-positive: prefix stays correct
    SN = "SN"  # semi-negative: prefix stays incorrect after some success

    def __str__(self) -> str:  # so f-strings render "DP", not "PassageType.DP"
        return self.value


class PaddingPolicy(str, Enum):
    PAD_TO_BUDGET = "pad_to_budget"
    NO_PADDING = "no_padding"


PADDING_TITLE = "padding"


@dataclass(frozen=True)
class Passage:
    """One retrieved corpus chunk."""

    id: str
    title: str
    text: str
    retriever_score: float | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("passage id must be non-empty")
        if not self.text and self.title != PADDING_TITLE:
            raise ValueError(f"passage {self.id!r}: empty text on a non-padding passage")

    @property
    def is_padding(self) -> bool:
        return self.title == PADDING_TITLE and not self.text


def padding_passage(n: int) -> Passage:
    """The n-th padding filler appended by budgeted selection."""
    return Passage(id=f"padding-{n}", title=PADDING_TITLE, text="")


@dataclass(frozen=True)
class QAInstance:
    """A question, its reference answers, and the retriever's ranked contexts.

    ``contexts`` preserve retriever rank order: rank k (1-based) sits at
    list position k-1.
    """

    instance_id: str
    question: str
    gold_answers: tuple[str, ...]
    contexts: tuple[Passage, ...]
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"instance {self.instance_id!r}: gold_answers must be non-empty")
        if not self.contexts:
            raise ValueError(f"instance {self.instance_id!r}: contexts must be non-empty")


@dataclass(frozen=True)
class EMPattern:
    """Per-instance binary sequence of exact-match outcomes over context prefixes.

    ``bits[i]`` (0-based i) is the exact-match outcome when the reader sees
    the top-(i+1) contexts; ``answers_at_k[i]`` is the raw, un-normalized
    reader answer for that prefix.
    """

    instance_id: str
    bits: tuple[int, ...]
    reader_fingerprint: str
    answers_at_k: tuple[str, ...]

    def __post_init__(self):
        if len(self.bits) != len(self.answers_at_k):
            raise ValueError(
                f"pattern {self.instance_id!r}: {len(self.bits)} bits vs "
                f"{len(self.answers_at_k)} answers"
            )
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"pattern {self.instance_id!r}: bits must be 0 or 1")

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def bitstring(self) -> str:
        """Bits as a '0'/'1' string, e.g. "01000000000000000000"."""
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class PassageTypeLabel:
    """The type assigned to one passage of one instance (0-based index)."""

    instance_id: str
    passage_index: int
    label: PassageType

    def __post_init__(self):
        if self.passage_index < 0:
            raise ValueError("passage_index must be >= 0")


@dataclass(frozen=True)
class ProbeSpec:
    """A selection strategy: which passage types to keep and how to size the context.

    ``context_budget=None`` means unbounded (no truncation, no padding).
    """

    name: str
    retained_types: frozenset[PassageType]
    context_budget: int | None = None
    padding: PaddingPolicy = PaddingPolicy.NO_PADDING
    note: str = ""

    def __post_init__(self):
        if not self.retained_types:
            raise ValueError(f"probe {self.name!r}: retained_types must be non-empty")
        if self.context_budget is not None and self.context_budget < 1:
            raise ValueError(f"probe {self.name!r}: context_budget must be >= 1")

    def with_budget(self, budget: int | None) -> "ProbeSpec":
        return ProbeSpec(self.name, self.retained_types, budget, self.padding, self.note)


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility record written next to every run output."""

    reader_fingerprint: str
    dataset_path: str
    max_context: int
    normalization_version: str
    created_at: str
    config_hash: str

    @classmethod
    def create(
        cls,
        reader_fingerprint: str,
        dataset_path: str,
        max_context: int,
        normalization_version: str,
        settings: Mapping[str, Any],
    ) -> "RunManifest":
        """Build a manifest; the hash covers every output-affecting setting."""
        hashed = dict(settings)
        hashed.update(
            reader_fingerprint=reader_fingerprint,
            dataset_path=dataset_path,
            max_context=max_context,
            normalization_version=normalization_version,
        )
        return cls(
            reader_fingerprint=reader_fingerprint,
            dataset_path=dataset_path,
            max_context=max_context,
            normalization_version=normalization_version,
            created_at=datetime.now(timezone.utc).isoformat(),
            config_hash=config_hash(hashed),
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "reader_fingerprint": self.reader_fingerprint,
                "dataset_path": self.dataset_path,
                "max_context": self.max_context,
                "normalization_version": self.normalization_version,
                "created_at": self.created_at,
                "config_hash": self.config_hash,
            },
            indent=2,
        )


def config_hash(settings: Mapping[str, Any]) -> str:
    """Deterministic hash of a settings mapping (key order does not matter)."""
    canonical = json.dumps(settings, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Retrieval-result file format (the published DPR result layout):
# a JSON array of {"question", "answers", "ctxs": [{"id", "title", "text",
# "score"?}, ...]}. Unknown fields are preserved and echoed on export.
# ---------------------------------------------------------------------------

_CTX_KNOWN = {"id", "title", "text", "score"}
_INSTANCE_KNOWN = {"id", "question", "answers", "ctxs"}


def parse_retrieval_file(data: bytes | str | BinaryIO) -> list[QAInstance]:
    """Parse a retrieval-result JSON file into QAInstances.

    Context order is preserved; ``instance_id`` falls back to the 0-based
    position in the file when the object carries no ``id``. Duplicate
    passage ids within one instance are accepted with a warning.
    """
    if hasattr(data, "read"):
        data = data.read()
    if isinstance(data, bytes):
        text = data.decode("utf-8")
    else:
        text = data
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON at byte {offset}: {e.msg}", byte_offset=offset) from e
    if not isinstance(raw, list):
        raise ParseError("expected a top-level JSON array of instances")

    instances: list[QAInstance] = []
    for idx, obj in enumerate(raw):
        if not isinstance(obj, dict):
            raise FieldError(idx, "<object>", f"instance {idx}: expected a JSON object")
        instances.append(_parse_instance(idx, obj))
    return instances


def _parse_instance(idx: int, obj: Mapping[str, Any]) -> QAInstance:
    for name in ("question", "answers", "ctxs"):
        if name not in obj:
            raise FieldError(idx, name)
    question = obj["question"]
    answers = obj["answers"]
    ctxs = obj["ctxs"]
    if not isinstance(question, str) or not question:
        raise FieldError(idx, "question", f"instance {idx}: question must be a non-empty string")
    if not isinstance(answers, list) or not answers or not all(isinstance(a, str) for a in answers):
        raise FieldError(idx, "answers", f"instance {idx}: answers must be a non-empty string list")
    if not isinstance(ctxs, list) or not ctxs:
        raise FieldError(idx, "ctxs", f"instance {idx}: ctxs must be a non-empty list")

    passages = []
    seen_ids: set[str] = set()
    for j, ctx in enumerate(ctxs):
        if not isinstance(ctx, dict):
            raise FieldError(idx, f"ctxs[{j}]", f"instance {idx}: ctxs[{j}] must be an object")
        for name in ("id", "title", "text"):
            if name not in ctx or not isinstance(ctx[name], str):
                raise FieldError(idx, f"ctxs[{j}].{name}")
        pid = ctx["id"]
        if pid in seen_ids:
            warnings.warn(
                f"instance {idx}: duplicate passage id {pid!r} in ctxs", stacklevel=2
            )
        seen_ids.add(pid)
        score = ctx.get("score")
        if score is not None:
            score = float(score)
        extra = {k: v for k, v in ctx.items() if k not in _CTX_KNOWN}
        try:
            passages.append(
                Passage(id=pid, title=ctx["title"], text=ctx["text"], retriever_score=score, extra=extra)
            )
        except ValueError as e:
            raise FieldError(idx, f"ctxs[{j}].text", f"instance {idx}: {e}") from e

    instance_id = str(obj["id"]) if "id" in obj else str(idx)
    extra = {k: v for k, v in obj.items() if k not in _INSTANCE_KNOWN}
    return QAInstance(
        instance_id=instance_id,
        question=question,
        gold_answers=tuple(answers),
        contexts=tuple(passages),
        extra=extra,
    )


def serialize_retrieval_file(instances: Sequence[QAInstance]) -> bytes:
    """Inverse of :func:`parse_retrieval_file`; unknown fields are echoed back."""
    out = []
    for inst in instances:
        ctxs = []
        for p in inst.contexts:
            ctx: dict[str, Any] = {"id": p.id, "title": p.title, "text": p.text}
            if p.retriever_score is not None:
                ctx["score"] = p.retriever_score
            ctx.update(p.extra)
            ctxs.append(ctx)
        obj: dict[str, Any] = {
            "id": inst.instance_id,
            "question": inst.question,
            "answers": list(inst.gold_answers),
            "ctxs": ctxs,
        }
        obj.update(inst.extra)
        out.append(obj)
    return json.dumps(out, ensure_ascii=False, indent=1).encode("utf-8")


# ---------------------------------------------------------------------------
# Pattern/label JSON-lines format. One record per instance:
#   {"instance_id", "bits": "0100...", "reader_fingerprint", "answers_at_k",
#    "labels": ["IZ", "DP", ...], "normalization_version"}
# "bits" uses the display convention of one '0'/'1' character per prefix
# size; "labels"[i] is the type of the passage at 0-based index i.
# ---------------------------------------------------------------------------


def serialize_patterns(
    patterns: Sequence[EMPattern],
    labels: Mapping[str, Sequence[PassageTypeLabel]] | None = None,
    normalization_version: str = "",
) -> bytes:
    """Serialize patterns (and optional labels) to JSON-lines.

    All patterns must share one reader fingerprint; the output round-trips
    losslessly through :func:`parse_patterns`.
    """
    fingerprints = {p.reader_fingerprint for p in patterns}
    if len(fingerprints) > 1:
        raise ConsistencyError(f"patterns mix reader fingerprints: {sorted(fingerprints)}")
    buf = io.StringIO()
    for p in patterns:
        record: dict[str, Any] = {
            "instance_id": p.instance_id,
            "bits": p.bitstring,
            "reader_fingerprint": p.reader_fingerprint,
            "answers_at_k": list(p.answers_at_k),
        }
        if normalization_version:
            record["normalization_version"] = normalization_version
        if labels is not None and p.instance_id in labels:
            ordered = sorted(labels[p.instance_id], key=lambda l: l.passage_index)
            if [l.passage_index for l in ordered] != list(range(len(p.bits))):
                raise ConsistencyError(
                    f"labels for {p.instance_id!r} do not cover indices 0..{len(p.bits) - 1}"
                )
            record["labels"] = [l.label.value for l in ordered]
        buf.write(json.dumps(record, ensure_ascii=False))
        buf.write("\n")
    return buf.getvalue().encode("utf-8")


def parse_patterns(
    data: bytes | str,
) -> tuple[list[EMPattern], dict[str, list[PassageTypeLabel]]]:
    """Parse the JSON-lines pattern/label format back into values."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    patterns: list[EMPattern] = []
    labels: dict[str, list[PassageTypeLabel]] = {}
    # split on "\n" only: JSON strings may embed unicode line separators
    for lineno, line in enumerate(data.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"pattern file line {lineno}: {e.msg}") from e
        try:
            bits = tuple(int(c) for c in record["bits"])
            pattern = EMPattern(
                instance_id=record["instance_id"],
                bits=bits,
                reader_fingerprint=record["reader_fingerprint"],
                answers_at_k=tuple(record["answers_at_k"]),
            )
        except (KeyError, ValueError) as e:
            raise ParseError(f"pattern file line {lineno}: {e}") from e
        patterns.append(pattern)
        if "labels" in record:
            labels[pattern.instance_id] = [
                PassageTypeLabel(pattern.instance_id, i, PassageType(v))
                for i, v in enumerate(record["labels"])
            ]
    return patterns, labels


def write_patterns_file(
    path,
    patterns: Sequence[EMPattern],
    labels: Mapping[str, Sequence[PassageTypeLabel]] | None = None,
    normalization_version: str = "",
) -> None:
    with open(path, "wb") as f:
        f.write(serialize_patterns(patterns, labels, normalization_version))


def read_patterns_file(path) -> tuple[list[EMPattern], dict[str, list[PassageTypeLabel]]]:
    with open(path, "rb") as f:
        return parse_patterns(f.read())


def read_corpus_file(path) -> list[Passage]:
    """Read a passage corpus from JSON-lines of {"id", "title", "text"}."""
    passages = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                extra = {k: v for k, v in obj.items() if k not in ("id", "title", "text")}
                passages.append(
                    Passage(id=str(obj["id"]), title=obj["title"], text=obj["text"], extra=extra)
                )
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise ParseError(f"corpus line {lineno}: {e}") from e
    return passages
