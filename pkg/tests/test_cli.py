import json
from pathlib import Path

import pytest

from passagelab.cli import main
from passagelab.datamodel import read_patterns_file
from tests.conftest import FIXTURES, scripted_pattern

DATASET = FIXTURES / "dataset.json"
CACHE = FIXTURES / "cache.jsonl"
MOCK = FIXTURES / "mock.json"
PATTERNS = FIXTURES / "patterns.jsonl"


def run(*argv) -> int:
    return main([str(a) for a in argv])


def test_run_incremental_reproduces_committed_patterns(tmp_path):
    out = tmp_path / "patterns.jsonl"
    code = run("run-incremental", "--data", DATASET, "--reader", f"mock:{MOCK}",
               "--max-k", 20, "--out", out)
    assert code == 0
    assert out.read_bytes() == PATTERNS.read_bytes()
    manifest = json.loads((tmp_path / "patterns.jsonl.manifest.json").read_text())
    assert manifest["max_context"] == 20
    assert manifest["config_hash"]


def test_run_incremental_replay_matches_mock(tmp_path):
    out = tmp_path / "patterns.jsonl"
    assert run("run-incremental", "--data", DATASET, "--reader", f"replay:{CACHE}",
               "--max-k", 20, "--out", out) == 0
    assert out.read_bytes() == PATTERNS.read_bytes()


def test_run_incremental_rejects_bad_max_k():
    # argparse exits with code 2 on argument errors
    with pytest.raises(SystemExit) as exc:
        run("run-incremental", "--data", DATASET, "--reader", f"mock:{MOCK}",
            "--max-k", 0, "--out", "/tmp/x.jsonl")
    assert exc.value.code == 2


def test_run_incremental_resumes_from_checkpoint(tmp_path):
    # Seed a checkpoint that already covers instance "7" up to k=3; a replay
    # backend stripped of those keys would fail without checkpoint reuse.
    inst, mock = scripted_pattern("010", instance_id="solo")
    data = tmp_path / "solo.json"
    data.write_text(json.dumps([{
        "question": inst.question,
        "answers": list(inst.gold_answers),
        "ctxs": [{"id": p.id, "title": p.title, "text": p.text} for p in inst.contexts],
    }]))
    ckpt = tmp_path / "ckpt.jsonl"
    out1 = tmp_path / "p1.jsonl"
    script = tmp_path / "mock.json"
    script.write_text(json.dumps(mock.to_script()))
    assert run("run-incremental", "--data", data, "--reader", f"mock:{script}",
               "--max-k", 3, "--out", out1, "--checkpoint", ckpt) == 0

    # rerun against a reader that would answer differently: checkpointed
    # answers win, so the output is unchanged
    empty = tmp_path / "empty_mock.json"
    empty.write_text(json.dumps({"name": "other", "version": "9", "markers": [],
                                 "default_answer": "nothing"}))
    out2 = tmp_path / "p2.jsonl"
    assert run("run-incremental", "--data", data, "--reader", f"mock:{empty}",
               "--max-k", 3, "--out", out2, "--checkpoint", ckpt) == 0
    p1, _ = read_patterns_file(out1)
    p2, _ = read_patterns_file(out2)
    assert p1[0].answers_at_k == p2[0].answers_at_k
    assert p1[0].bits == p2[0].bits


def test_select_reproduces_committed_csv(tmp_path):
    out = tmp_path / "probe3.csv"
    code = run("select", "--data", DATASET, "--patterns", PATTERNS,
               "--reader", f"replay:{CACHE}", "--probe", "probe3",
               "--sizes", "5,10,20", "--out", out)
    assert code == 0
    assert out.read_bytes() == (FIXTURES / "expected_probe3.csv").read_bytes()


def test_select_unknown_probe_lists_presets(tmp_path, capsys):
    code = run("select", "--data", DATASET, "--patterns", PATTERNS,
               "--reader", f"replay:{CACHE}", "--probe", "probe99",
               "--sizes", "5", "--out", tmp_path / "x.csv")
    assert code == 2
    err = capsys.readouterr().err
    assert "probe3" in err and "probe99" in err


def test_select_missing_patterns_file(tmp_path):
    code = run("select", "--data", DATASET, "--patterns", tmp_path / "absent.jsonl",
               "--reader", f"replay:{CACHE}", "--probe", "probe3",
               "--sizes", "5", "--out", tmp_path / "x.csv")
    assert code == 3


def test_select_unrecorded_size_is_backend_error(tmp_path):
    code = run("select", "--data", DATASET, "--patterns", PATTERNS,
               "--reader", f"replay:{CACHE}", "--probe", "probe3",
               "--sizes", "7", "--out", tmp_path / "x.csv")
    assert code == 4


def test_export_classifier_data_binary_and_split(tmp_path):
    out = tmp_path / "clf.jsonl"
    assert run("export-classifier-data", "--data", DATASET, "--labels", PATTERNS,
               "--out", out, "--split-ratio", "0.8", "--seed", "7") == 0
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert rows
    assert all(r["label"] in ("DP", "DN") for r in rows)
    assert all(r["split"] in ("train", "eval") for r in rows)
    assert {"question", "title", "context"} <= set(rows[0])

    again = tmp_path / "clf2.jsonl"
    assert run("export-classifier-data", "--data", DATASET, "--labels", PATTERNS,
               "--out", again, "--split-ratio", "0.8", "--seed", "7") == 0
    assert again.read_bytes() == out.read_bytes()


def test_export_classifier_data_multiclass_conserves_labels(tmp_path):
    out = tmp_path / "clf.jsonl"
    assert run("export-classifier-data", "--data", DATASET, "--labels", PATTERNS,
               "--out", out, "--multiclass") == 0
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    _, labels = read_patterns_file(PATTERNS)
    assert len(rows) == sum(len(v) for v in labels.values())


def test_export_classifier_data_validates_ratio(tmp_path):
    assert run("export-classifier-data", "--data", DATASET, "--labels", PATTERNS,
               "--out", tmp_path / "x.jsonl", "--split-ratio", "1.5") == 2


def test_simulate_end_to_end(tmp_path):
    dataset = [
        {
            "question": f"what does entry {i} say about zyq{i}tok",
            "answers": [f"answer {i}"],
            "ctxs": [{"id": f"g{i}", "title": "gold", "text": f"entry {i} gold GOLD{i}M"}],
        }
        for i in range(4)
    ]
    data = tmp_path / "data.json"
    data.write_text(json.dumps(dataset))
    corpus = tmp_path / "corpus.jsonl"
    with corpus.open("w") as f:
        for i in range(4):
            f.write(json.dumps({"id": f"p{i}", "title": "", "text": f"note on zyq{i}tok VENOM"}) + "\n")
            f.write(json.dumps({"id": f"q{i}", "title": "", "text": f"benign zyq{i}tok text"}) + "\n")
    script = tmp_path / "mock.json"
    script.write_text(json.dumps({
        "name": "sim-mock", "version": "1",
        "markers": [[f"GOLD{i}M", f"answer {i}"] for i in range(4)],
        "poison_marker": "VENOM", "poison_answer": "derailed",
        "default_answer": "no idea",
    }))
    out = tmp_path / "study.csv"
    summary = tmp_path / "study.json"
    assert run("simulate", "--data", data, "--corpus", corpus, "--reader", f"mock:{script}",
               "--modes", "bm25", "--counts", "0,1", "--seed", "0",
               "--out", out, "--summary", summary) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "mode,count,em,acem,ser"
    assert lines[1].startswith("bm25,0,1.000000")
    assert json.loads(summary.read_text())


def test_attention_reproduces_committed_sweep(tmp_path):
    prefix = tmp_path / "att"
    assert run("attention", "--data", DATASET, "--patterns", PATTERNS,
               "--reader", f"replay:{CACHE}", "--out-prefix", prefix) == 0
    assert (tmp_path / "att_sweep.csv").read_bytes() == (FIXTURES / "expected_sweep.csv").read_bytes()
    crosstab = (tmp_path / "att_crosstab.csv").read_text()
    assert crosstab.startswith("feature,context_type,share")
    assert (tmp_path / "att_histogram.csv").exists()


def test_judge_rule_based(tmp_path):
    prefix = tmp_path / "judged"
    assert run("judge", "--data", DATASET, "--patterns", PATTERNS, "--judge", "rule",
               "--verdict-cache", tmp_path / "verdicts_cache.jsonl",
               "--out-prefix", prefix) == 0
    curves = (tmp_path / "judged_curves.csv").read_text().splitlines()
    assert curves[0] == "k,em,acem,se_em,se_acem"
    for line in curves[1:]:
        _, em, acem, se_em, se_acem = line.split(",")
        assert float(se_em) >= float(em)
        assert float(se_acem) >= float(acem)
    verdicts = (tmp_path / "judged_verdicts.jsonl").read_text().splitlines()
    assert verdicts  # the fixture plants judge-recoverable wrong answers


def test_check_reader_order_free_mock():
    assert run("check-reader", "--reader", f"mock:{MOCK}", "--data", DATASET,
               "--instance", "0", "--trials", "5", "--seed", "1") == 0


def test_check_reader_order_sensitive_mock(tmp_path):
    script = tmp_path / "sensitive.json"
    script.write_text(json.dumps({"name": "sensitive", "version": "1", "markers": [],
                                  "order_mode": "first_title"}))
    assert run("check-reader", "--reader", f"mock:{script}", "--data", DATASET,
               "--instance", "0", "--trials", "10", "--seed", "1") == 1


def test_report_reproduces_committed_curves(tmp_path):
    prefix = tmp_path / "rep"
    assert run("report", "--patterns", PATTERNS, "--data", DATASET,
               "--ks", ",".join(str(k) for k in range(1, 21)),
               "--out-prefix", prefix) == 0
    assert (tmp_path / "rep_curves.csv").read_bytes() == (FIXTURES / "expected_curves.csv").read_bytes()
    summary = json.loads((tmp_path / "rep_summary.json").read_text())
    assert summary["n_instances"] == 60
    review = (tmp_path / "rep_dn_review.jsonl").read_text().splitlines()
    assert len(review) == summary["n_dn_instances"] > 0


def test_malformed_data_is_input_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[{oops")
    assert run("report", "--patterns", PATTERNS, "--data", bad,
               "--ks", "1", "--out-prefix", tmp_path / "x") == 3
