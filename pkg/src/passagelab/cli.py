"""Command-line surface tying the pipeline together.

Exit codes: 0 success, 1 failed check, 2 argument error, 3 input error,
4 backend error.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import datamodel, metrics, patterns, selection, simlab
from .datamodel import RunManifest
from .errors import BackendError, InputError
from .gateway import ReaderGateway, ReplayCache, backend_from_spec, check_backend_conformance, check_order_invariance

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ARGUMENT = 2
EXIT_INPUT = 3
EXIT_BACKEND = 4


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _gateway(args) -> ReaderGateway:
    backend = backend_from_spec(args.reader)
    cache = ReplayCache(args.cache) if getattr(args, "cache", None) else None
    return ReaderGateway(backend, cache=cache)


def _load_data(path) -> list[datamodel.QAInstance]:
    with open(path, "rb") as f:
        return datamodel.parse_retrieval_file(f.read())


def _load_patterns(path):
    p = Path(path)
    if not p.exists():
        raise InputError(f"patterns file not found: {p}")
    return datamodel.read_patterns_file(p)


def _write_manifest(out_path, gateway, dataset_path, max_context, settings) -> None:
    manifest = RunManifest.create(
        reader_fingerprint=gateway.fingerprint(),
        dataset_path=str(dataset_path),
        max_context=max_context,
        normalization_version=metrics.NORMALIZATION_VERSION,
        settings=settings,
    )
    Path(str(out_path) + ".manifest.json").write_text(manifest.to_json() + "\n", encoding="utf-8")


def cmd_run_incremental(args) -> int:
    instances = _load_data(args.data)
    gateway = _gateway(args)
    checkpoint = patterns.RunCheckpoint(args.checkpoint) if args.checkpoint else None
    results = []
    labels = {}
    for inst in instances:
        k = min(args.max_k, len(inst.contexts))
        pattern = patterns.incremental_inference(inst, k, gateway, checkpoint=checkpoint)
        results.append(pattern)
        labels[inst.instance_id] = patterns.label_types(pattern)
    datamodel.write_patterns_file(
        args.out, results, labels, normalization_version=metrics.NORMALIZATION_VERSION
    )
    _write_manifest(args.out, gateway, args.data, args.max_k,
                    {"command": "run-incremental", "max_k": args.max_k, "reader": args.reader})
    print(f"wrote {len(results)} patterns to {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    pats, labels = _load_patterns(args.patterns)
    probes = selection.load_probes_file(args.probes_file) if args.probes_file else selection.default_probes()
    if args.probe not in probes:
        print(f"unknown probe {args.probe!r}; available: {', '.join(sorted(probes))}",
              file=sys.stderr)
        return EXIT_ARGUMENT
    probe = probes[args.probe]
    if probe.note:
        print(f"note: {probe.note}", file=sys.stderr)
    instances = {i.instance_id: i for i in _load_data(args.data)}
    labeled = []
    for p in pats:
        if p.instance_id not in labels:
            raise InputError(f"patterns file carries no labels for {p.instance_id!r}")
        if p.instance_id not in instances:
            raise InputError(f"dataset has no instance {p.instance_id!r}")
        labeled.append((instances[p.instance_id], labels[p.instance_id]))
    gateway = _gateway(args)
    table = selection.selection_inference(labeled, probe, args.sizes, gateway)
    Path(args.out).write_text(table.to_csv(), encoding="utf-8")
    _write_manifest(args.out, gateway, args.data, max(args.sizes),
                    {"command": "select", "probe": args.probe, "sizes": args.sizes,
                     "reader": args.reader})
    print(f"wrote per-size EM table to {args.out}")
    return EXIT_OK


def cmd_export_classifier_data(args) -> int:
    if not 0.0 < args.split_ratio < 1.0:
        print(f"--split-ratio must be in (0, 1), got {args.split_ratio}", file=sys.stderr)
        return EXIT_ARGUMENT
    pats, labels = _load_patterns(args.labels)
    instances = {i.instance_id: i for i in _load_data(args.data)}
    ids = [p.instance_id for p in pats]
    rng = random.Random(args.seed)
    shuffled = list(ids)
    rng.shuffle(shuffled)
    cut = int(len(shuffled) * args.split_ratio)
    split_of = {iid: ("train" if i < cut else "eval") for i, iid in enumerate(shuffled)}

    wanted = None if args.multiclass else {datamodel.PassageType.DP, datamodel.PassageType.DN}
    n = 0
    with open(args.out, "w", encoding="utf-8") as f:
        for p in pats:
            inst = instances.get(p.instance_id)
            if inst is None:
                raise InputError(f"dataset has no instance {p.instance_id!r}")
            for label in sorted(labels.get(p.instance_id, ()), key=lambda l: l.passage_index):
                if wanted is not None and label.label not in wanted:
                    continue
                ctx = inst.contexts[label.passage_index]
                f.write(json.dumps({
                    "question": inst.question,
                    "title": ctx.title,
                    "context": ctx.text,
                    "label": label.label.value,
                    "split": split_of[p.instance_id],
                }, ensure_ascii=False) + "\n")
                n += 1
    print(f"wrote {n} {'multiclass' if args.multiclass else 'binary'} rows to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    instances = _load_data(args.data)
    corpus = datamodel.read_corpus_file(args.corpus)
    gateway = _gateway(args)
    index = simlab.build_bm25_index(corpus, k1=args.k1, b=args.b) if "bm25" in args.modes else None
    study = simlab.run_injection_study(
        instances, args.modes, args.counts, gateway, index=index, corpus=corpus, seed=args.seed
    )
    Path(args.out).write_text(study.to_csv(), encoding="utf-8")
    if args.summary:
        Path(args.summary).write_text(study.summary_json() + "\n", encoding="utf-8")
    _write_manifest(args.out, gateway, args.data, max(args.counts) + 1,
                    {"command": "simulate", "modes": args.modes, "counts": args.counts,
                     "seed": args.seed, "k1": args.k1, "b": args.b, "reader": args.reader})
    print(f"wrote study table to {args.out}")
    return EXIT_OK


def cmd_attention(args) -> int:
    pats, labels = _load_patterns(args.patterns)
    instances = {i.instance_id: i for i in _load_data(args.data)}
    gateway = _gateway(args)

    scoped = []
    records = []
    for p in pats:
        inst = instances.get(p.instance_id)
        if inst is None:
            raise InputError(f"dataset has no instance {p.instance_id!r}")
        k = min(len(p), len(inst.contexts))
        if k < len(inst.contexts):
            inst = datamodel.QAInstance(
                instance_id=inst.instance_id, question=inst.question,
                gold_answers=inst.gold_answers, contexts=inst.contexts[:k], extra=inst.extra,
            )
        scoped.append(inst)
        reply = gateway.answer(inst.question, inst.contexts, want_attention=True)
        records.append((inst, p, labels.get(p.instance_id, []), list(reply.attention or ())))

    sweep = selection.attention_threshold_sweep(scoped, args.thresholds, gateway)
    crosstab = selection.attention_type_crosstab(records)
    prefix = Path(args.out_prefix)
    (prefix.parent / (prefix.name + "_sweep.csv")).write_text(selection.sweep_csv(sweep),
                                                              encoding="utf-8")
    (prefix.parent / (prefix.name + "_crosstab.csv")).write_text(crosstab.argmax_csv(),
                                                                 encoding="utf-8")
    (prefix.parent / (prefix.name + "_histogram.csv")).write_text(crosstab.histogram_csv(),
                                                                  encoding="utf-8")
    print(f"wrote sweep, crosstab, and histogram CSVs with prefix {args.out_prefix}")
    return EXIT_OK


def _judge_from_spec(spec: str, model: str) -> metrics.Judge:
    if spec == "rule":
        return metrics.RuleBasedJudge()
    kind, _, rest = spec.partition(":")
    if kind == "script":
        with open(rest, "r", encoding="utf-8") as f:
            table = {(k.split("\x1f")[0], k.split("\x1f")[1]): v for k, v in json.load(f).items()}
        return metrics.ScriptedJudge(table)
    if kind in ("http", "https"):
        url = rest if "://" in rest else f"{kind}://{rest}"
        if not model:
            raise InputError("--judge-model is required with an http judge")
        return metrics.HttpChatJudge(url, model)
    raise InputError(f"unknown judge spec {spec!r}; expected rule, script:<file>, or http:<url>")


def cmd_judge(args) -> int:
    pats, _labels = _load_patterns(args.patterns)
    instances = {i.instance_id: i for i in _load_data(args.data)}
    judge = _judge_from_spec(args.judge, args.judge_model)
    cache = metrics.VerdictCache(args.verdict_cache)
    rows = []
    verdicts = []
    for p in pats:
        inst = instances.get(p.instance_id)
        if inst is None:
            raise InputError(f"dataset has no instance {p.instance_id!r}")
        scores = metrics.semantic_em(p, inst.question, inst.gold_answers, judge, cache=cache)
        verdicts.extend(scores.verdicts)
        rows.append((p, scores))

    prefix = Path(args.out_prefix)
    with open(prefix.parent / (prefix.name + "_verdicts.jsonl"), "w", encoding="utf-8") as f:
        for v in verdicts:
            f.write(json.dumps({
                "question": v.question, "gold_answer": v.gold_answer, "candidate": v.candidate,
                "verdict": v.verdict.value, "raw_response": v.raw_response, "judge_id": v.judge_id,
            }, ensure_ascii=False) + "\n")

    max_k = max(len(p) for p, _ in rows)
    n = len(rows)
    with open(prefix.parent / (prefix.name + "_curves.csv"), "w", encoding="utf-8") as f:
        f.write("k,em,acem,se_em,se_acem\n")
        for k in range(1, max_k + 1):
            em = sum(p.bits[min(k, len(p)) - 1] for p, _ in rows) / n
            ac = sum(metrics.acem(p)[min(k, len(p)) - 1] for p, _ in rows) / n
            se = sum(s.se_bits[min(k, len(s.se_bits)) - 1] for _, s in rows) / n
            seac = sum(s.se_acem_bits[min(k, len(s.se_acem_bits)) - 1] for _, s in rows) / n
            f.write(f"{k},{em:.6f},{ac:.6f},{se:.6f},{seac:.6f}\n")
    print(f"judged {n} patterns; wrote verdicts and curves with prefix {args.out_prefix}")
    return EXIT_OK


def cmd_check_reader(args) -> int:
    backend = backend_from_spec(args.reader)
    gateway = ReaderGateway(backend)
    print(json.dumps(gateway.handshake().to_json(), indent=2))
    failures = check_backend_conformance(backend)
    for failure in failures:
        print(f"conformance: {failure}", file=sys.stderr)
    invariant = True
    if args.data:
        instances = _load_data(args.data)
        inst = instances[args.instance]
        report = check_order_invariance(inst, args.trials, args.seed, gateway)
        invariant = report.invariant
        print(json.dumps({
            "instance_id": inst.instance_id,
            "invariant": report.invariant,
            "trials": report.trials,
            "counterexample": list(report.counterexample) if report.counterexample else None,
        }, indent=2))
    return EXIT_OK if invariant and not failures else EXIT_CHECK_FAILED


def cmd_report(args) -> int:
    pats, labels = _load_patterns(args.patterns)
    instances = None
    if args.data:
        instances = {i.instance_id: i for i in _load_data(args.data)}
    report = metrics.metrics_report(pats, labels, args.ks, instances=instances)
    prefix = Path(args.out_prefix)
    (prefix.parent / (prefix.name + "_curves.csv")).write_text(report.curve_csv(),
                                                               encoding="utf-8")
    (prefix.parent / (prefix.name + "_summary.json")).write_text(report.summary_json() + "\n",
                                                                 encoding="utf-8")
    (prefix.parent / (prefix.name + "_dn_review.jsonl")).write_text(report.dn_review_jsonl(),
                                                                    encoding="utf-8")
    print(f"wrote curves, summary, and DN review with prefix {args.out_prefix}")
    return EXIT_OK


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="passagelab",
        description="Identify, label, and remove damaging passages in retrieve-then-read QA.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_reader(p):
        p.add_argument("--reader", required=True,
                       help="reader backend: http:<url>, mock:<script-file>, or replay:<cache-file>")
        p.add_argument("--cache", help="record/replay cache file for reader replies")

    p = sub.add_parser("run-incremental", help="EM patterns over context prefixes")
    p.add_argument("--data", required=True)
    add_reader(p)
    p.add_argument("--max-k", type=_positive_int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="resumable per-prefix answer log")
    p.set_defaults(func=cmd_run_incremental)

    p = sub.add_parser("select", help="probe-based selection inference at varying sizes")
    p.add_argument("--data", required=True)
    p.add_argument("--patterns", required=True)
    add_reader(p)
    p.add_argument("--probe", required=True)
    p.add_argument("--probes-file", help="JSON probe presets (name -> retained types, budget, padding)")
    p.add_argument("--sizes", type=_int_list, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("export-classifier-data", help="export labeled (question, title, context) rows")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True, help="patterns file carrying labels")
    p.add_argument("--out", required=True)
    p.add_argument("--multiclass", action="store_true", help="all five types (default: DP/DN only)")
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_classifier_data)

    p = sub.add_parser("simulate", help="gold-plus-negatives injection study")
    p.add_argument("--data", required=True)
    p.add_argument("--corpus", required=True, help="JSON-lines corpus of {id, title, text}")
    add_reader(p)
    p.add_argument("--modes", "--mode", type=lambda s: [m.strip() for m in s.split(",") if m.strip()],
                   default=["random", "bm25"])
    p.add_argument("--counts", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k1", type=float, default=simlab.DEFAULT_K1)
    p.add_argument("--b", type=float, default=simlab.DEFAULT_B)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attention", help="attention threshold sweep and type crosstab")
    p.add_argument("--data", required=True)
    p.add_argument("--patterns", required=True)
    add_reader(p)
    p.add_argument("--thresholds", type=_float_list, default=[0.025, 0.05, 0.075, 0.1, 0.2])
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("judge", help="semantic-equivalence re-scoring (SeEM/SeAcEM)")
    p.add_argument("--data", required=True)
    p.add_argument("--patterns", required=True)
    p.add_argument("--judge", required=True, help="rule, script:<file>, or http:<url>")
    p.add_argument("--judge-model", default="")
    p.add_argument("--verdict-cache")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("check-reader", help="handshake, conformance, and order invariance")
    p.add_argument("--reader", required=True)
    p.add_argument("--data")
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--trials", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_reader)

    p = sub.add_parser("report", help="EM/AcEM curves, type counts, DN review export")
    p.add_argument("--patterns", required=True)
    p.add_argument("--data")
    p.add_argument("--ks", type=_int_list, required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"input error: file not found: {e.filename or e}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except BackendError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except ValueError as e:
        print(f"argument error: {e}", file=sys.stderr)
        return EXIT_ARGUMENT


if __name__ == "__main__":
    sys.exit(main())
