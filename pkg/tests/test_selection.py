import pytest

from passagelab.datamodel import (
    PaddingPolicy,
    PassageType,
    PassageTypeLabel,
    ProbeSpec,
    QAInstance,
)
from passagelab.errors import CapabilityError, ConsistencyError
from passagelab.gateway import MockReader, ReaderGateway, ReaderReply, ReplayCache
from passagelab.metrics import exact_match
from passagelab.patterns import incremental_inference, label_types
from passagelab.selection import (
    PROBE3,
    attention_filter,
    attention_threshold_sweep,
    attention_type_crosstab,
    default_probes,
    load_probes_file,
    select_by_probe,
    selection_inference,
    write_probes_file,
)
from tests.conftest import make_instance, scripted_pattern

ALL_TYPES = ProbeSpec(
    name="all-types",
    retained_types=frozenset(PassageType),
    padding=PaddingPolicy.NO_PADDING,
)


def _labeled(bits, iid="i0", **kwargs):
    inst, mock = scripted_pattern(bits, instance_id=iid, **kwargs)
    pattern = incremental_inference(inst, len(bits), ReaderGateway(mock))
    return inst, mock, pattern, label_types(pattern)


def test_select_by_probe_drops_dn_and_sn():
    inst, _, _, labels = _labeled("0100")
    selected = select_by_probe(inst, labels, PROBE3)
    assert [p.id for p in selected] == ["i0-p0", "i0-p1"]


def test_select_by_probe_identity_with_all_types():
    inst, _, _, labels = _labeled("0110")
    assert select_by_probe(inst, labels, ALL_TYPES) == list(inst.contexts)


def test_select_by_probe_pads_to_budget():
    inst, _, _, labels = _labeled("0100")
    probe = PROBE3.with_budget(5)
    selected = select_by_probe(inst, labels, probe)
    assert len(selected) == 5
    assert [p.id for p in selected[:2]] == ["i0-p0", "i0-p1"]
    assert all(p.is_padding for p in selected[2:])


def test_select_by_probe_truncates_to_budget():
    inst, _, _, labels = _labeled("1111")
    selected = select_by_probe(inst, labels, PROBE3.with_budget(2))
    assert [p.id for p in selected] == ["i0-p0", "i0-p1"]


def test_select_by_probe_rejects_mismatched_labels():
    inst, _, _, labels = _labeled("010")
    with pytest.raises(ConsistencyError):
        select_by_probe(inst, labels[:-1], PROBE3)
    other = [PassageTypeLabel("other", l.passage_index, l.label) for l in labels]
    with pytest.raises(ConsistencyError):
        select_by_probe(inst, other, PROBE3)


MICRO_BITS = {
    "i0": "1111",
    "i1": "0111",
    "i2": "0010",
    "i3": "1100",
    "i4": "0000",
    "i5": "1010",
    "i6": "0101",
    "i7": "1000",
}


def micro_fixture():
    """8 instances with known patterns behind one merged scripted reader."""
    markers = []
    labeled = []
    for iid, bits in MICRO_BITS.items():
        inst, mock = scripted_pattern(bits, instance_id=iid)
        markers.extend(mock.markers)
        labeled.append((inst, bits))
    merged = MockReader(markers=markers, default_answer="no idea")
    gateway = ReaderGateway(merged)
    out = []
    for inst, bits in labeled:
        pattern = incremental_inference(inst, len(bits), gateway)
        assert pattern.bitstring == bits
        out.append((inst, pattern, label_types(pattern)))
    return out, gateway


def test_selection_inference_micro_fixture():
    # Hand-derived from the marker precedence rule: at size 1 only i0, i3,
    # i5, i7 keep a gold marker in their first retained passage (4/8); at
    # size 2 i1 and i6 recover theirs (6/8); at size 4 i2's does too (7/8).
    rows, gateway = micro_fixture()
    table = selection_inference(
        [(inst, labels) for inst, _, labels in rows], PROBE3, [1, 2, 4], gateway
    )
    assert table.em_at(1) == 0.5
    assert table.em_at(2) == 0.75
    assert table.em_at(4) == 0.875
    assert all(row.n_fallback == 0 for row in table.rows)


def test_probe3_full_size_matches_acem_on_clean_fixture():
    rows, gateway = micro_fixture()
    table = selection_inference(
        [(inst, labels) for inst, _, labels in rows], PROBE3, [4], gateway
    )
    acem_at_4 = sum(max(p.bits) for _, p, _ in rows) / len(rows)
    assert table.em_at(4) == acem_at_4 == 0.875


def test_all_types_probe_reproduces_plain_em():
    rows, gateway = micro_fixture()
    table = selection_inference(
        [(inst, labels) for inst, _, labels in rows], ALL_TYPES, [4], gateway
    )
    plain = sum(p.bits[-1] for _, p, _ in rows) / len(rows)
    assert table.em_at(4) == plain == 0.375


def test_selection_inference_fallback_on_empty_selection():
    inst, mock, pattern, labels = _labeled("0000")
    probe = ProbeSpec(name="dn-only", retained_types=frozenset({PassageType.DN}),
                      padding=PaddingPolicy.PAD_TO_BUDGET)
    table = selection_inference([(inst, labels)], probe, [2], ReaderGateway(mock))
    assert table.rows[0].n_fallback == 1
    assert table.fallback_ids[2] == ["i0"]


def test_selection_inference_handles_prefix_labels():
    # labels cover only the first 3 of 5 contexts (a truncated pattern run)
    inst, mock = scripted_pattern("01011")
    gateway = ReaderGateway(mock)
    pattern = incremental_inference(inst, 3, gateway)
    labels = label_types(pattern)
    table = selection_inference([(inst, labels)], PROBE3, [3], gateway)
    assert table.em_at(3) == 1.0


def test_probe_presets_and_config_round_trip(tmp_path):
    probes = default_probes()
    assert probes["probe3"].retained_types == frozenset(
        {PassageType.IZ, PassageType.DP, PassageType.SP}
    )
    assert not probes["probe3"].note
    for name in ("probe1", "probe2", "probe4", "probe5", "probe6"):
        assert "PLACEHOLDER" in probes[name].note

    path = tmp_path / "probes.json"
    write_probes_file(path)
    loaded = load_probes_file(path)
    assert loaded["probe3"] == probes["probe3"]
    assert loaded["probe5"].retained_types == probes["probe5"].retained_types


# ---------------------------------------------------------------------------
# Attention filtering
# ---------------------------------------------------------------------------


def _attention_instance():
    inst = make_instance(texts=("has GOLDMARK inside", "filler text"),
                         golds=("the answer",))
    mock = MockReader(markers=[("GOLDMARK", "the answer")],
                      marker_attention={"GOLDMARK": 0.3}, attention_default=0.01)
    return inst, mock


def test_attention_filter_keeps_high_scores():
    inst, mock = _attention_instance()
    gateway = ReaderGateway(mock)
    reply = gateway.answer(inst.question, inst.contexts, want_attention=True)
    assert reply.attention == (0.3, 0.01)
    result = attention_filter(inst, reply, threshold=0.1, gateway=gateway)
    assert result.used_indices == (0,)
    assert not result.fallback
    assert result.answer == "the answer"


def test_attention_filter_falls_back_when_empty():
    inst, mock = _attention_instance()
    gateway = ReaderGateway(mock)
    reply = gateway.answer(inst.question, inst.contexts, want_attention=True)
    result = attention_filter(inst, reply, threshold=0.5, gateway=gateway)
    assert result.fallback
    assert result.used_indices == (0, 1)
    assert result.answer == "the answer"


def test_attention_filter_below_min_reproduces_unfiltered(tmp_path):
    inst, mock = _attention_instance()
    gateway = ReaderGateway(mock, cache=ReplayCache(tmp_path / "c.jsonl"))
    reply = gateway.answer(inst.question, inst.contexts, want_attention=True)
    calls = mock.calls
    result = attention_filter(inst, reply, threshold=0.001, gateway=gateway)
    assert result.used_indices == (0, 1)
    assert not result.fallback
    assert result.answer == reply.answer
    assert mock.calls == calls  # served bit-exact from cache


def test_attention_filter_requires_attention():
    inst, mock = _attention_instance()
    gateway = ReaderGateway(mock)
    bare = ReaderReply(request_id="r", answer="x", attention=None)
    with pytest.raises(CapabilityError):
        attention_filter(inst, bare, threshold=0.1, gateway=gateway)
    short = ReaderReply(request_id="r", answer="x", attention=(0.5,))
    with pytest.raises(ConsistencyError):
        attention_filter(inst, short, threshold=0.1, gateway=gateway)
    full = ReaderReply(request_id="r", answer="x", attention=(0.5, 0.5))
    with pytest.raises(ValueError):
        attention_filter(inst, full, threshold=0.0, gateway=gateway)


def test_threshold_sweep_declines_monotonically():
    instances = []
    markers = []
    attention = {}
    for i, level in enumerate([0.03, 0.06, 0.09, 0.15]):
        marker = f"G{i}"
        instances.append(
            QAInstance(
                instance_id=f"s{i}",
                question=f"sweep question {i}?",
                gold_answers=("gold",),
                contexts=make_instance(f"s{i}", texts=(
                    f"carrier passage with {marker}", "filler one", "filler two",
                )).contexts,
            )
        )
        markers.append((marker, "gold"))
        attention[marker] = level
    mock = MockReader(markers=markers, marker_attention=attention, attention_default=0.3)
    gateway = ReaderGateway(mock)
    rows = attention_threshold_sweep(instances, [0.025, 0.05, 0.075, 0.1, 0.2], gateway)
    assert [row.em for row in rows] == [1.0, 0.75, 0.5, 0.25, 0.0]
    assert all(row.n_fallback == 0 for row in rows)


# ---------------------------------------------------------------------------
# Attention/type crosstab
# ---------------------------------------------------------------------------


def test_crosstab_empty_without_dn():
    inst, _, pattern, labels = _labeled("0111")
    report = attention_type_crosstab([(inst, pattern, labels, [0.1] * 4)])
    assert report.n_dn_instances == 0
    assert report.argmax_type_share == {}


def test_crosstab_argmax_and_prediction_location():
    inst, _, pattern, labels = _labeled("110", wrong_in_text=True)
    report = attention_type_crosstab([(inst, pattern, labels, [0.1, 0.2, 0.9])])
    assert report.n_dn_instances == 1
    assert report.argmax_type_share == {"DN": 1.0}
    assert report.prediction_location_share == {"DN": 1.0}


def test_crosstab_prediction_not_in_contexts():
    inst, _, pattern, labels = _labeled("110", wrong_in_text=False)
    report = attention_type_crosstab([(inst, pattern, labels, [0.9, 0.2, 0.1])])
    assert report.argmax_type_share == {"DP": 1.0}
    assert report.prediction_location_share == {"none": 1.0}


def test_crosstab_histogram_counts_every_labeled_passage():
    inst, _, pattern, labels = _labeled("1100")
    report = attention_type_crosstab([(inst, pattern, labels, [0.5, 0.4, 0.3, 0.2])])
    assert sum(count for _, _, _, count in report.histogram_rows) == 4
    assert report.histogram_csv().startswith("type,bucket_low,bucket_high,count")
