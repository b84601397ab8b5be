import pytest
from hypothesis import given, strategies as st

from passagelab.datamodel import EMPattern, PassageType, PassageTypeLabel
from passagelab.errors import UndefinedRatioError
from passagelab.metrics import (
    JudgeVerdict,
    RuleBasedJudge,
    ScriptedJudge,
    StabilityRecord,
    Verdict,
    VerdictCache,
    acem,
    exact_match,
    metrics_report,
    normalize_answer,
    parse_verdict,
    semantic_em,
    ser,
)
from tests.conftest import make_instance


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("The Beatles!", "beatles"),
        ("June 1, 2008", "june 1 2008"),
        ("", ""),
        ("  An  Apple a   Day ", "apple day"),
    ],
)
def test_normalize_answer(raw, expected):
    assert normalize_answer(raw) == expected


@pytest.mark.parametrize(
    "candidate,golds,expected",
    [
        ("Linda Davis", ["Linda Davis"], 1),
        ("Linda Kaye Davis", ["Linda Davis"], 0),
        ("the 2008", ["2008"], 1),
        ("2009", ["2008", "2009"], 1),
    ],
)
def test_exact_match(candidate, golds, expected):
    assert exact_match(candidate, golds) == expected


@given(st.text(max_size=30), st.text(max_size=30))
def test_exact_match_symmetric(a, b):
    assert exact_match(a, [b]) == exact_match(b, [a])


def _pattern(bits, answers=None, iid="i0"):
    answers = answers if answers is not None else [f"a{i}" for i in range(len(bits))]
    return EMPattern(iid, tuple(bits), "fp", tuple(answers))


def test_acem_examples():
    assert acem(_pattern([0, 1, 0, 0])) == [0, 1, 1, 1]
    assert acem(_pattern([0, 0, 0])) == [0, 0, 0]


@given(st.lists(st.integers(0, 1), min_size=1, max_size=100))
def test_acem_properties(bits):
    out = acem(bits)
    # independent prefix-max recomputation
    assert out == [max(bits[: k + 1]) for k in range(len(bits))]
    assert acem(out) == out  # idempotent
    assert all(o >= b for o, b in zip(out, bits))  # pointwise >= bits
    assert all(out[i] <= out[i + 1] for i in range(len(out) - 1))  # non-decreasing


def test_ser_direct():
    records = [StabilityRecord(True, True)] + [StabilityRecord(True, False)] * 3
    records += [StabilityRecord(False, True)] * 5  # outside the denominator
    assert ser(records, 1) == 0.25


def test_ser_no_changes():
    assert ser([StabilityRecord(True, False)] * 4, 2) == 0.0


def test_ser_empty_denominator():
    with pytest.raises(UndefinedRatioError):
        ser([StabilityRecord(False, True)], 1)


@pytest.mark.parametrize(
    "raw,verdict",
    [
        ("Yes, the candidate is correct.", Verdict.YES),
        ("yes", Verdict.YES),
        ("No. The candidate refers to someone else.", Verdict.NO),
        ("Possibly, but it depends.", Verdict.DISCARDED),
        ("", Verdict.DISCARDED),
        ("The answer is yes", Verdict.DISCARDED),
    ],
)
def test_parse_verdict(raw, verdict):
    assert parse_verdict(raw) == verdict


def test_rule_judge_containment():
    judge = RuleBasedJudge()
    assert judge.judge("q", "2008", "June 1, 2008").verdict is Verdict.YES
    assert judge.judge("q", "Linda Davis", "Linda Kaye Davis").verdict is Verdict.NO


LINDA_PATTERN = EMPattern(
    instance_id="reba",
    bits=(0, 1),
    reader_fingerprint="fp",
    answers_at_k=("Linda Kaye Davis", "Linda Davis"),
)


def test_semantic_em_flips_judged_candidate():
    judge = ScriptedJudge(
        {("Linda Davis", "Linda Kaye Davis"): "Yes, the candidate is correct."}
    )
    scores = semantic_em(LINDA_PATTERN, "who sings does he love me with reba",
                         ["Linda Davis"], judge)
    assert scores.se_bits == (1, 1)
    assert scores.se_acem_bits == (1, 1)
    assert "Linda Kaye Davis" in scores.adjusted_golds
    assert scores.verdicts[0].verdict is Verdict.YES


def test_semantic_em_skips_exact_matches():
    class ExplodingJudge(RuleBasedJudge):
        def raw_response(self, question, gold, candidate):
            raise AssertionError("judge must not be called for exact matches")

    pattern = _pattern([1, 1], answers=["gold", "the gold"], iid="x")
    scores = semantic_em(pattern, "q", ["gold"], ExplodingJudge())
    assert scores.se_bits == (1, 1)
    assert scores.verdicts == ()


def test_semantic_em_discarded_leaves_bit():
    judge = ScriptedJudge({}, default="Hard to say.")
    scores = semantic_em(LINDA_PATTERN, "q", ["Linda Davis"], judge)
    assert scores.se_bits == (0, 1)  # unchanged
    assert scores.verdicts[0].verdict is Verdict.DISCARDED


@given(
    st.lists(st.sampled_from(["gold", "gold plus detail", "junk", "other junk"]),
             min_size=1, max_size=12)
)
def test_semantic_em_never_flips_down(answers):
    pattern = _pattern([exact_match(a, ["gold"]) for a in answers], answers=answers)
    scores = semantic_em(pattern, "q", ["gold"], RuleBasedJudge())
    assert all(se >= b for se, b in zip(scores.se_bits, pattern.bits))
    assert all(se >= a for se, a in zip(scores.se_acem_bits, acem(pattern)))


def test_verdict_cache_persists_and_short_circuits(tmp_path):
    path = tmp_path / "verdicts.jsonl"
    calls = {"n": 0}

    class CountingJudge(ScriptedJudge):
        def raw_response(self, question, gold, candidate):
            calls["n"] += 1
            return "Yes, equivalent."

    judge = CountingJudge({}, judge_id="counting")
    cache = VerdictCache(path)
    semantic_em(LINDA_PATTERN, "q", ["Linda Davis"], judge, cache=cache)
    assert calls["n"] == 1

    reloaded = VerdictCache(path)
    assert len(reloaded) == 1
    semantic_em(LINDA_PATTERN, "q", ["Linda Davis"], judge, cache=reloaded)
    assert calls["n"] == 1  # cached verdict is authoritative


def _labels(iid, types):
    return [PassageTypeLabel(iid, i, t) for i, t in enumerate(types)]


def test_metrics_report_single_instance():
    pattern = _pattern([0, 1, 0, 0])
    labels = {"i0": _labels("i0", [PassageType.IZ, PassageType.DP, PassageType.DN, PassageType.SN])}
    report = metrics_report([pattern], labels, ks=[1, 2, 4])
    assert [report.em_at_k[k] for k in (1, 2, 4)] == [0, 1, 0]
    assert [report.acem_at_k[k] for k in (1, 2, 4)] == [0, 1, 1]
    assert report.type_counts[PassageType.DN] == 1
    assert report.gap_at_max == 1.0


def test_metrics_report_dn_review_containment():
    instance = make_instance(
        "i0",
        golds=("Emma Stone",),
        texts=(
            "gwen stacy was portrayed by emma stone in the film",
            "in this reality Mary Jane Watson played gwen stacy in the movie",
            "an unrelated passage about new york",
        ),
    )
    pattern = EMPattern("i0", (1, 0, 0), "fp", ("Emma Stone", "Mary Jane Watson", "Mary Jane Watson"))
    labels = {"i0": _labels("i0", [PassageType.DP, PassageType.DN, PassageType.SN])}
    report = metrics_report([pattern], labels, ks=[1], instances={"i0": instance})
    assert len(report.dn_review) == 1
    rec = report.dn_review[0]
    assert rec.first_dn_index == 1
    assert rec.prediction == "Mary Jane Watson"
    assert rec.prediction_in_dn_context is True
    assert rec.context_index_including_prediction == 1
    assert rec.em_pattern == "100"


def test_metrics_report_dn_review_prediction_absent():
    instance = make_instance("i0", golds=("13",),
                             texts=("riverdale season one", "another passage"))
    pattern = EMPattern("i0", (1, 0), "fp", ("13", "21"))
    labels = {"i0": _labels("i0", [PassageType.DP, PassageType.DN])}
    report = metrics_report([pattern], labels, ks=[1, 2], instances={"i0": instance})
    rec = report.dn_review[0]
    assert rec.prediction_in_dn_context is False
    assert rec.context_index_including_prediction is None
