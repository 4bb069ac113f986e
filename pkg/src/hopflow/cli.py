"""Operator entry points.

Subcommands: run a dataset through the pipeline, evaluate results, score
reward samples, mine the inspector training set from traces, and report on
traces and cache behavior. Exit codes: 0 success (including runs with
per-question failures; the count lands in the metrics report), 2 for
config/schema problems, 3 for corpus or index problems.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

from .config import PipelineConfig, load_config
from .errors import (
    ConfigError,
    DuplicateId,
    EmbedderFailure,
    EmptyCorpus,
    HopflowError,
    MissingTeacherLabel,
    ParseError,
)
from .evaluation import exact_match, latency_breakdown, load_dataset, retrieval_recall, token_f1
from .gateway import Gateway, load_script
from .memoize import EvidenceStore
from .mining import load_teacher_labels, mine_stage2_dataset, write_stage2_dataset
from .orchestrator import Pipeline
from .retrieval import RetrievalEngine, SparseScorer, build_index, load_corpus
from .rewards import (
    DEFAULT_WEIGHTS,
    InspectorWeights,
    PlannerWeights,
    RewardWeights,
    SolverWeights,
    inspector_reward,
    planner_reward,
    solver_reward,
)
from .trace import TraceEvent, events_by_question, load_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CORPUS = 3


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_trace_tree(path: str) -> list[TraceEvent]:
    """Load one trace file or every *.jsonl under a directory."""
    if os.path.isdir(path):
        events: list[TraceEvent] = []
        for file in sorted(glob.glob(os.path.join(path, "*.jsonl"))):
            events.extend(load_trace(file))
        return events
    return load_trace(path)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    pipeline_cfg: PipelineConfig = config.pipeline
    if args.no_memoize:
        pipeline_cfg.memoize_on = False
    if args.no_context_inspector:
        pipeline_cfg.context_inspector_on = False
    if args.no_reasoning_inspector:
        pipeline_cfg.reasoning_inspector_on = False
    if args.no_planner:
        pipeline_cfg.planner_on = False
    if args.global_cache:
        pipeline_cfg.global_cache = True

    try:
        records = load_dataset(args.dataset)
    except (OSError, ParseError) as exc:
        return _fail(EXIT_CONFIG, f"dataset: {exc}")

    embedder = config.build_embedder()
    try:
        corpus = load_corpus(config.corpus_path)
        index = build_index(corpus, embedder)
    except (OSError, ParseError, EmptyCorpus, DuplicateId, EmbedderFailure) as exc:
        return _fail(EXIT_CORPUS, f"corpus: {exc}")
    engine = RetrievalEngine(index, SparseScorer(corpus), config.cascade)

    if args.scripted:
        try:
            gateway = Gateway.scripted(load_script(args.scripted))
        except (OSError, ParseError) as exc:
            return _fail(EXIT_CONFIG, f"script: {exc}")
    else:
        try:
            gateway = config.build_gateway()
        except ConfigError as exc:
            return _fail(EXIT_CONFIG, str(exc))

    shared_evidence = None
    if pipeline_cfg.global_cache:
        shared_evidence = EvidenceStore()
        if args.cache_file:
            try:
                shared_evidence.load_jsonl(args.cache_file, embedder)
            except (OSError, json.JSONDecodeError, KeyError) as exc:
                return _fail(EXIT_CONFIG, f"cache file: {exc}")

    os.makedirs(args.out_dir, exist_ok=True)
    pipeline = Pipeline(gateway, engine, embedder, pipeline_cfg, shared_evidence=shared_evidence)
    results, report = pipeline.run_dataset(
        records, os.path.join(args.out_dir, "traces"), parallelism=args.parallelism
    )

    by_id = {r.id: r for r in records}
    with open(os.path.join(args.out_dir, "results.jsonl"), "w", encoding="utf-8") as f:
        for result in results:
            golds = by_id[result.question_id].golds()
            f.write(
                json.dumps(
                    {
                        "question_id": result.question_id,
                        "final_answer": result.final_answer,
                        "em": exact_match(result.final_answer, golds),
                        "f1": token_f1(result.final_answer, golds),
                        "error": result.error,
                        "step_stats": result.step_stats(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with open(os.path.join(args.out_dir, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
    if pipeline_cfg.global_cache and pipeline.shared_evidence is not None:
        pipeline.shared_evidence.export_jsonl(os.path.join(args.out_dir, "cache.jsonl"))

    print(
        f"ran {report.n} questions: EM {report.em * 100:.1f}, F1 {report.f1 * 100:.1f}, "
        f"{report.n_failed} failed"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        records = load_dataset(args.dataset)
        rows = []
        with open(args.results, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    except (OSError, ParseError, json.JSONDecodeError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    if not rows:
        return _fail(EXIT_CONFIG, "results file is empty")
    by_id = {r.id: r for r in records}
    ems, f1s = [], []
    for row in rows:
        try:
            record = by_id[row["question_id"]]
            answer = row["final_answer"]
        except KeyError as exc:
            return _fail(EXIT_CONFIG, f"results/dataset mismatch: {exc}")
        ems.append(exact_match(answer, record.golds()))
        f1s.append(token_f1(answer, record.golds()))
    print(f"EM {sum(ems) / len(ems) * 100:.1f}")
    print(f"F1 {sum(f1s) / len(f1s) * 100:.1f}")

    if args.trace_dir:
        try:
            events = _load_trace_tree(args.trace_dir)
        except (OSError, ParseError) as exc:
            return _fail(EXIT_CONFIG, f"traces: {exc}")
        retrieved: dict[str, set[str]] = {}
        for qid, question_events in events_by_question(events).items():
            ids: set[str] = set()
            for event in question_events:
                if event.event_type == "retrieve":
                    ids.update(event.payload.get("doc_ids", []))
            retrieved[qid] = ids
        gold_support = {
            r.id: set(r.gold_support_ids) for r in records if r.gold_support_ids
        }
        if gold_support:
            recall, n_scored = retrieval_recall(retrieved, gold_support)
            print(f"retrieval recall {recall * 100:.1f} over {n_scored} questions")
    return EXIT_OK


def _weights_from_file(path: str | None) -> RewardWeights:
    if path is None:
        return DEFAULT_WEIGHTS
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    return RewardWeights(
        planner=PlannerWeights(**raw.get("planner", {})),
        solver=SolverWeights(**raw.get("solver", {})),
        inspector=InspectorWeights(**raw.get("inspector", {})),
    )


def cmd_score_rewards(args: argparse.Namespace) -> int:
    try:
        weights = _weights_from_file(args.weights)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        return _fail(EXIT_CONFIG, f"weights: {exc}")
    scored = 0
    try:
        with open(args.samples, encoding="utf-8") as f_in, open(
            args.out, "w", encoding="utf-8"
        ) as f_out:
            for lineno, line in enumerate(f_in, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    sample = json.loads(line)
                    kind = sample["kind"]
                    if kind == "planner":
                        breakdown = planner_reward(
                            sample["plan_text"],
                            int(sample["n_gold"]),
                            tuple(sample["judge_scores"]),
                            weights.planner,
                        )
                        row = {
                            "r_fmt": breakdown.r_fmt,
                            "r_count": breakdown.r_count,
                            "judge": list(breakdown.judge),
                            "total": breakdown.total,
                        }
                    elif kind == "solver":
                        breakdown = solver_reward(
                            sample["solver_text"],
                            sample["gold_answer"],
                            list(sample.get("gold_aliases", [])),
                            sample.get("gold_source_ids", []),
                            weights.solver,
                        )
                        row = {
                            "r_fmt": breakdown.r_fmt,
                            "r_acc": breakdown.r_acc,
                            "r_rel": breakdown.r_rel,
                            "total": breakdown.total,
                        }
                    elif kind == "inspector":
                        breakdown = inspector_reward(
                            sample["audit_text"],
                            sample["phase"],
                            sample["gold_stage"],
                            weights.inspector,
                        )
                        row = {
                            "r_fmt": breakdown.r_fmt,
                            "r_detect": breakdown.r_detect,
                            "r_length": breakdown.r_length,
                            "total": breakdown.total,
                        }
                    else:
                        raise ValueError(f"unknown sample kind {kind!r}")
                    row["id"] = sample["id"]
                    row["kind"] = kind
                except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                    return _fail(EXIT_CONFIG, f"{args.samples}:{lineno}: {exc}")
                f_out.write(json.dumps(row, sort_keys=True) + "\n")
                scored += 1
    except OSError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    print(f"scored {scored} samples -> {args.out}")
    return EXIT_OK


def cmd_mine_stage2(args: argparse.Namespace) -> int:
    try:
        events = _load_trace_tree(args.trace_dir)
        records = load_dataset(args.gold)
        labels = load_teacher_labels(args.labels)
    except (OSError, ParseError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    traces = events_by_question(events)
    golds = {r.id: r.golds() for r in records}
    try:
        mined = mine_stage2_dataset(traces, golds, labels)
    except MissingTeacherLabel as exc:
        return _fail(EXIT_CONFIG, str(exc))
    write_stage2_dataset(mined, args.out)
    retained = len({r.question_id for r in mined})
    print(f"retained {retained} of {len(traces)} traces -> {len(mined)} records at {args.out}")
    return EXIT_OK


def cmd_trace_report(args: argparse.Namespace) -> int:
    try:
        events = _load_trace_tree(args.trace)
    except (OSError, ParseError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    counts: dict[str, int] = {}
    for event in events:
        counts[event.event_type] = counts.get(event.event_type, 0) + 1
    print(f"{len(events)} events over {len(events_by_question(events))} questions")
    for event_type in sorted(counts):
        print(f"  {event_type}: {counts[event_type]}")
    print("latency by phase:")
    for phase, stats in sorted(latency_breakdown(events).items()):
        print(
            f"  {phase}: total {stats['total_ms']:.0f} ms, "
            f"mean {stats['mean_ms']:.1f} ms, count {stats['count']:.0f}"
        )
    return EXIT_OK


def cmd_cache_stats(args: argparse.Namespace) -> int:
    try:
        events = _load_trace_tree(args.trace)
    except (OSError, ParseError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    hits = 0
    steps: set[tuple[str, int]] = set()
    for event in events:
        step = event.payload.get("step")
        if step is not None:
            steps.add((event.question_id, int(step)))
        if event.event_type == "cache_hit":
            hits += 1
    total = len(steps)
    rate = hits / total if total else 0.0
    print(f"cache hits: {hits} of {total} steps ({rate * 100:.1f}%)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hopflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline over a dataset")
    run.add_argument("--config", required=True, help="JSON run config")
    run.add_argument("--dataset", required=True, help="QA dataset JSONL")
    run.add_argument("--out-dir", required=True, help="output directory")
    run.add_argument("--parallelism", type=int, default=1)
    run.add_argument("--scripted", help="JSONL script replacing model backends")
    run.add_argument("--no-memoize", action="store_true", help="disable the evidence cache")
    run.add_argument("--no-context-inspector", action="store_true")
    run.add_argument("--no-reasoning-inspector", action="store_true")
    run.add_argument("--no-planner", action="store_true", help="treat each question as one subquestion")
    run.add_argument("--global-cache", action="store_true", help="share the cache across questions")
    run.add_argument("--cache-file", help="preload a previously exported cache (global mode)")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="score a results file against a dataset")
    ev.add_argument("--results", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--trace-dir", help="traces for retrieval recall")
    ev.set_defaults(func=cmd_eval)

    score = sub.add_parser("score-rewards", help="compute reward breakdowns for samples")
    score.add_argument("--samples", required=True, help="JSONL of reward samples")
    score.add_argument("--out", required=True, help="output JSONL of breakdowns")
    score.add_argument("--weights", help="JSON weight overrides")
    score.set_defaults(func=cmd_score_rewards)

    mine = sub.add_parser("mine-stage2", help="mine inspector training records from traces")
    mine.add_argument("--trace-dir", required=True)
    mine.add_argument("--gold", required=True, help="QA dataset JSONL with gold answers")
    mine.add_argument("--labels", required=True, help="teacher audit labels JSONL")
    mine.add_argument("--out", required=True)
    mine.set_defaults(func=cmd_mine_stage2)

    report = sub.add_parser("trace-report", help="event counts and latency breakdown")
    report.add_argument("trace", help="trace file or directory")
    report.set_defaults(func=cmd_trace_report)

    cache = sub.add_parser("cache-stats", help="cache hit statistics from traces")
    cache.add_argument("trace", help="trace file or directory")
    cache.set_defaults(func=cmd_cache_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HopflowError as exc:
        return _fail(EXIT_CONFIG, str(exc))


if __name__ == "__main__":
    sys.exit(main())
