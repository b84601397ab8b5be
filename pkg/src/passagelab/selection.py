"""Context selection: probe-based type filtering and attention thresholding.

A probe keeps a chosen subset of passage types (in original rank order),
optionally padding or truncating to a fixed context budget, and the reader
is re-run on the reduced context. Attention filtering instead keeps the
passages whose reply-reported attention clears a threshold.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .datamodel import (
    EMPattern,
    PaddingPolicy,
    Passage,
    PassageType,
    PassageTypeLabel,
    ProbeSpec,
    QAInstance,
    padding_passage,
)
from .errors import CapabilityError, ConsistencyError
from .gateway import ReaderGateway, ReaderReply
from .metrics import exact_match, normalize_answer

# Probe 3 keeps the positive-leaning types: definite positives, steady
# positives, and the initial zeros the reader is merely unconfident about.
PROBE3 = ProbeSpec(
    name="probe3",
    retained_types=frozenset({PassageType.IZ, PassageType.DP, PassageType.SP}),
    context_budget=None,
    padding=PaddingPolicy.PAD_TO_BUDGET,
)

_PLACEHOLDER_NOTE = (
    "PLACEHOLDER retained-type set. Only probe3's definition is shipped; "
    "edit this entry to the retained types you intend before relying on it."
)


def default_probes() -> dict[str, ProbeSpec]:
    """Shipped presets: probe3 is real, the others are editable placeholders."""
    placeholder_sets = {
        "probe1": frozenset({PassageType.DP}),
        "probe2": frozenset({PassageType.DP, PassageType.SP}),
        "probe4": frozenset({PassageType.IZ, PassageType.DP}),
        "probe5": frozenset({PassageType.DP, PassageType.SP, PassageType.SN}),
        "probe6": frozenset({PassageType.IZ, PassageType.DP, PassageType.SN}),
    }
    probes = {"probe3": PROBE3}
    for name, types in placeholder_sets.items():
        probes[name] = ProbeSpec(
            name=name,
            retained_types=types,
            context_budget=None,
            padding=PaddingPolicy.PAD_TO_BUDGET,
            note=_PLACEHOLDER_NOTE,
        )
    return probes


def write_probes_file(path, probes: Mapping[str, ProbeSpec] | None = None) -> None:
    probes = probes if probes is not None else default_probes()
    out = {}
    for name, p in probes.items():
        out[name] = {
            "retained_types": sorted(t.value for t in p.retained_types),
            "context_budget": p.context_budget if p.context_budget is not None else "unbounded",
            "padding": p.padding.value,
        }
        if p.note:
            out[name]["note"] = p.note
    with open(path, "w", encoding="utf-8") as f:
        json.dump(out, f, indent=2)
        f.write("\n")


def load_probes_file(path) -> dict[str, ProbeSpec]:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    probes = {}
    for name, cfg in raw.items():
        budget = cfg.get("context_budget", "unbounded")
        probes[name] = ProbeSpec(
            name=name,
            retained_types=frozenset(PassageType(t) for t in cfg["retained_types"]),
            context_budget=None if budget == "unbounded" else int(budget),
            padding=PaddingPolicy(cfg.get("padding", "no_padding")),
            note=cfg.get("note", ""),
        )
    return probes


def _labels_for(instance: QAInstance, labels: Sequence[PassageTypeLabel]) -> list[PassageType]:
    by_index = {}
    for l in labels:
        if l.instance_id != instance.instance_id:
            raise ConsistencyError(
                f"label for {l.instance_id!r} applied to instance {instance.instance_id!r}"
            )
        by_index[l.passage_index] = l.label
    n = len(instance.contexts)
    if sorted(by_index) != list(range(n)):
        raise ConsistencyError(
            f"instance {instance.instance_id!r}: labels cover {sorted(by_index)}, "
            f"need 0..{n - 1}"
        )
    return [by_index[i] for i in range(n)]


def select_by_probe(
    instance: QAInstance,
    labels: Sequence[PassageTypeLabel],
    probe: ProbeSpec,
) -> list[Passage]:
    """Keep the contexts whose type the probe retains, in rank order.

    With ``pad_to_budget`` and a budget, short selections are filled with
    empty-text padding passages; long ones are truncated to the first
    ``budget`` by rank.
    """
    types = _labels_for(instance, labels)
    selected = [p for p, t in zip(instance.contexts, types) if t in probe.retained_types]
    budget = probe.context_budget
    if budget is not None:
        if len(selected) > budget:
            selected = selected[:budget]
        elif len(selected) < budget and probe.padding is PaddingPolicy.PAD_TO_BUDGET:
            selected = selected + [padding_passage(i) for i in range(budget - len(selected))]
    return selected


@dataclass
class SelectionRow:
    size: int
    em: float
    n_fallback: int


@dataclass
class SelectionTable:
    probe_name: str
    rows: list[SelectionRow]
    per_instance: dict[int, dict[str, int]] = field(default_factory=dict)  # size -> id -> em
    fallback_ids: dict[int, list[str]] = field(default_factory=dict)

    def em_at(self, size: int) -> float:
        for row in self.rows:
            if row.size == size:
                return row.em
        raise KeyError(size)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["size", "em", "n_fallback"])
        for row in self.rows:
            w.writerow([row.size, f"{row.em:.6f}", row.n_fallback])
        return buf.getvalue()


def selection_inference(
    labeled: Sequence[tuple[QAInstance, Sequence[PassageTypeLabel]]],
    probe: ProbeSpec,
    sizes: Sequence[int],
    gateway: ReaderGateway,
    scorer: Callable[[str, Sequence[str]], int] = exact_match,
) -> SelectionTable:
    """Mean EM of probe-selected contexts at each requested context size.

    Labels may cover only a prefix of the contexts (a truncated pattern
    run); selection then operates on that prefix. Instances whose selection
    comes back empty fall back to their original top-size contexts and are
    counted in ``n_fallback``.
    """
    if any(s < 1 for s in sizes):
        raise ValueError("sizes must be >= 1")
    rows = []
    per_instance: dict[int, dict[str, int]] = {}
    fallback_ids: dict[int, list[str]] = {}
    ordered = sorted(labeled, key=lambda pair: pair[0].instance_id)
    for size in sorted(sizes):
        em_sum = 0
        details: dict[str, int] = {}
        fallbacks: list[str] = []
        for instance, labels in ordered:
            covered = max(l.passage_index for l in labels) + 1
            scoped = instance
            if covered < len(instance.contexts):
                scoped = QAInstance(
                    instance_id=instance.instance_id,
                    question=instance.question,
                    gold_answers=instance.gold_answers,
                    contexts=instance.contexts[:covered],
                    extra=instance.extra,
                )
            sized = probe.with_budget(size)
            selected = select_by_probe(scoped, labels, sized)
            if not any(not p.is_padding for p in selected):
                selected = list(scoped.contexts[:size])
                fallbacks.append(instance.instance_id)
            answer = gateway.answer(instance.question, selected).answer
            em = scorer(answer, instance.gold_answers)
            em_sum += em
            details[instance.instance_id] = em
        rows.append(SelectionRow(size=size, em=em_sum / len(ordered), n_fallback=len(fallbacks)))
        per_instance[size] = details
        fallback_ids[size] = fallbacks
    return SelectionTable(probe_name=probe.name, rows=rows, per_instance=per_instance,
                          fallback_ids=fallback_ids)


# ---------------------------------------------------------------------------
# Attention-score filtering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttentionFilterResult:
    answer: str
    used_indices: tuple[int, ...]
    fallback: bool  # no passage cleared the threshold; full set was used

    @property
    def n_used(self) -> int:
        return len(self.used_indices)


def attention_filter(
    instance: QAInstance,
    reply_with_attention: ReaderReply,
    threshold: float,
    gateway: ReaderGateway,
) -> AttentionFilterResult:
    """Re-run the reader keeping only passages whose attention clears the threshold.

    When nothing clears it, the entire candidate list is used instead and
    the result is flagged as a fallback.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    attention = reply_with_attention.attention
    if attention is None:
        raise CapabilityError(
            "reply carries no attention scores; use a backend whose handshake "
            "reports supports_attention and request want_attention"
        )
    if len(attention) != len(instance.contexts):
        raise ConsistencyError(
            f"attention length {len(attention)} != context count {len(instance.contexts)}"
        )
    kept = tuple(i for i, a in enumerate(attention) if a > threshold)
    fallback = not kept
    used = kept if kept else tuple(range(len(instance.contexts)))
    passages = [instance.contexts[i] for i in used]
    reply = gateway.answer(instance.question, passages)
    return AttentionFilterResult(answer=reply.answer, used_indices=used, fallback=fallback)


@dataclass
class ThresholdSweepRow:
    threshold: float
    em: float
    n_fallback: int


def attention_threshold_sweep(
    instances: Sequence[QAInstance],
    thresholds: Sequence[float],
    gateway: ReaderGateway,
    scorer: Callable[[str, Sequence[str]], int] = exact_match,
) -> list[ThresholdSweepRow]:
    """EM after attention filtering at each threshold, over a dataset."""
    ordered = sorted(instances, key=lambda i: i.instance_id)
    replies = {
        i.instance_id: gateway.answer(i.question, i.contexts, want_attention=True)
        for i in ordered
    }
    rows = []
    for threshold in sorted(thresholds):
        em_sum = 0
        fallbacks = 0
        for inst in ordered:
            result = attention_filter(inst, replies[inst.instance_id], threshold, gateway)
            em_sum += scorer(result.answer, inst.gold_answers)
            fallbacks += result.fallback
        rows.append(ThresholdSweepRow(threshold=threshold, em=em_sum / len(ordered),
                                      n_fallback=fallbacks))
    return rows


def sweep_csv(rows: Sequence[ThresholdSweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "em", "n_fallback"])
    for row in rows:
        w.writerow([row.threshold, f"{row.em:.6f}", row.n_fallback])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Attention/type cross-tabulation over instances containing a DN
# ---------------------------------------------------------------------------


@dataclass
class CrosstabReport:
    n_dn_instances: int
    argmax_type_share: dict[str, float]
    prediction_location_share: dict[str, float]  # includes "none"
    histogram_rows: list[tuple[str, float, float, int]]  # type, lo, hi, count

    def argmax_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "context_type", "share"])
        for t, share in sorted(self.argmax_type_share.items()):
            w.writerow(["highest_attention", t, f"{share:.6f}"])
        for t, share in sorted(self.prediction_location_share.items()):
            w.writerow(["transitioned_prediction", t, f"{share:.6f}"])
        return buf.getvalue()

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["type", "bucket_low", "bucket_high", "count"])
        for t, lo, hi, count in self.histogram_rows:
            w.writerow([t, f"{lo:.6f}", f"{hi:.6f}", count])
        return buf.getvalue()


def attention_type_crosstab(
    records: Sequence[tuple[QAInstance, EMPattern, Sequence[PassageTypeLabel], Sequence[float]]],
    n_bins: int = 20,
) -> CrosstabReport:
    """Relate attention to passage types over instances containing a DN.

    Reports (a) the type distribution of the highest-attention passage,
    (b) where the transitioned prediction string is found (the type of the
    first passage containing it, or "none"), and (c) per-type attention
    histograms over all labeled passages. Padding passages are excluded
    from attention aggregation.
    """
    argmax_counts: dict[str, int] = {}
    location_counts: dict[str, int] = {}
    scores_by_type: dict[str, list[float]] = {t.value: [] for t in PassageType}
    n_dn = 0

    for instance, pattern, labels, attention in records:
        types = [l.label for l in sorted(labels, key=lambda l: l.passage_index)]
        k = len(types)
        if len(attention) < k:
            raise ConsistencyError(
                f"instance {instance.instance_id!r}: {len(attention)} attention scores "
                f"for {k} labeled passages"
            )
        real = [i for i in range(k) if not instance.contexts[i].is_padding]
        for i in real:
            scores_by_type[types[i].value].append(attention[i])
        dn_indices = [i for i, t in enumerate(types) if t is PassageType.DN]
        if not dn_indices:
            continue
        n_dn += 1
        top = max(real, key=lambda i: (attention[i], -i))
        argmax_counts[types[top].value] = argmax_counts.get(types[top].value, 0) + 1

        first_dn = dn_indices[0]
        prediction = normalize_answer(pattern.answers_at_k[first_dn])
        location = "none"
        if prediction:
            for i in real:
                if prediction in normalize_answer(instance.contexts[i].text):
                    location = types[i].value
                    break
        location_counts[location] = location_counts.get(location, 0) + 1

    if n_dn:
        argmax_share = {t: c / n_dn for t, c in argmax_counts.items()}
        location_share = {t: c / n_dn for t, c in location_counts.items()}
    else:
        argmax_share = {}
        location_share = {}

    all_scores = [s for scores in scores_by_type.values() for s in scores]
    histogram_rows: list[tuple[str, float, float, int]] = []
    if all_scores:
        lo, hi = 0.0, max(all_scores)
        width = (hi - lo) / n_bins if hi > lo else 1.0
        for t in sorted(scores_by_type):
            scores = scores_by_type[t]
            if not scores:
                continue
            for b in range(n_bins):
                b_lo = lo + b * width
                b_hi = b_lo + width
                if b == n_bins - 1:
                    count = sum(1 for s in scores if b_lo <= s <= hi)
                else:
                    count = sum(1 for s in scores if b_lo <= s < b_hi)
                histogram_rows.append((t, b_lo, b_hi, count))

    return CrosstabReport(
        n_dn_instances=n_dn,
        argmax_type_share=argmax_share,
        prediction_location_share=location_share,
        histogram_rows=histogram_rows,
    )
