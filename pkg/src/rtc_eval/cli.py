"""Command-line entry point.

Subcommands: build-corpus, run synthesis, run editing, report, correlate.
Structured logs go to stderr; data only ever goes to the output files.
Exit codes: 0 success, 1 task-level failures present, 2 configuration
error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import shlex
import sys
import time
from pathlib import Path

from . import __version__, corpus, editing, engine, records, similarity, stats, synthesis
from .gateway import ModelGateway, ModelSpec, make_generator
from .manifest import ManifestError, load_manifest
from .sandbox import SandboxRunner

logger = logging.getLogger("rtc_eval")

EXIT_OK = 0
EXIT_TASK_FAILURES = 1
EXIT_CONFIG = 2


class ConfigError(RuntimeError):
    pass


def _run_manifest(args: argparse.Namespace, seed: int | None, model_id: str | None) -> dict:
    return {
        "command_line": shlex.join(sys.argv) if sys.argv else "",
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                   if k not in ("func",)},
        "seed": seed,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "harness_version": __version__,
        "model_id": model_id,
    }


def _build_model_spec(args: argparse.Namespace) -> ModelSpec:
    if args.mock:
        script = None
        if args.mock == "scripted":
            if not args.script:
                raise ConfigError("--mock scripted requires --script <file>")
            import json

            script = json.loads(Path(args.script).read_text(encoding="utf-8"))
        return ModelSpec(model_id=args.model_id or f"mock-{args.mock}",
                         kind=f"mock_{args.mock}", script=script)
    if not args.model_endpoint:
        raise ConfigError("either --mock or --model-endpoint is required")
    return ModelSpec(
        model_id=args.model_id or "remote",
        kind="remote",
        endpoint_url=args.model_endpoint,
        requests_per_minute=args.requests_per_minute,
        max_concurrent_requests=args.max_concurrent_requests,
    )


def _build_generators(args: argparse.Namespace):
    """Forward and backward generators; the same model serves both unless
    a separate backward endpoint is configured, which the summary then
    labels as a non-standard split-model run."""
    spec = _build_model_spec(args)
    forward = make_generator(ModelGateway(spec))
    if not args.backward_model_endpoint:
        return spec, forward, forward, None
    backward_spec = ModelSpec(
        model_id=args.backward_model_id or "remote-backward",
        kind="remote",
        endpoint_url=args.backward_model_endpoint,
        requests_per_minute=args.requests_per_minute,
        max_concurrent_requests=args.max_concurrent_requests,
    )
    backward = make_generator(ModelGateway(backward_spec))
    split = {"forward_model": spec.model_id, "backward_model": backward_spec.model_id}
    return spec, forward, backward, split


# -- build-corpus --------------------------------------------------------


def cmd_build_corpus(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    sandbox = SandboxRunner(
        max_parallel=args.max_parallel_sandboxes,
        default_timeout=args.test_timeout_seconds,
        no_network=args.no_network,
        shim_source=args.shim_file,
    )
    try:
        outcome, corpus_stats = corpus.sample_project(
            manifest,
            rng_seed=args.seed,
            per_project=args.per_project,
            min_accept=args.min_accept,
            sandbox=sandbox,
            min_chars=args.min_chars,
            max_chars=args.max_chars,
            context_budget=args.context_budget,
            test_timeout=args.test_timeout_seconds,
        )
    finally:
        sandbox.cleanup()

    out = Path(args.out)
    stats_path = Path(args.stats_out) if args.stats_out else out.with_suffix(out.suffix + ".stats.json")
    manifest_path = out.with_suffix(out.suffix + ".manifest.json")
    records.write_json(manifest_path, _run_manifest(args, args.seed, None))

    stats_doc = corpus_stats.to_dict()
    if isinstance(outcome, corpus.ProjectRejected):
        stats_doc["rejected"] = True
        stats_doc["reject_reason"] = outcome.reason
        records.write_jsonl(out, [])
        records.write_json(stats_path, stats_doc)
        logger.error("project %s rejected: %s", outcome.project_id, outcome.reason)
        return EXIT_TASK_FAILURES
    stats_doc["rejected"] = False
    records.write_jsonl(out, (task.to_dict() for task in outcome))
    records.write_json(stats_path, stats_doc)
    logger.info(
        "accepted %d tasks for %s (acceptance rate %.2f)",
        len(outcome),
        manifest.project_id,
        corpus_stats.acceptance_rate or 0.0,
    )
    print(f"corpus: {len(outcome)} tasks -> {out}")
    return EXIT_OK


# -- run synthesis -------------------------------------------------------


def _summarize(run_records: list[engine.RoundTripRecord], with_baseline: bool) -> dict:
    estimates = [engine.estimate_rtc(r) for r in run_records]
    overall = math.fsum(e.rtc for e in estimates) / len(estimates)
    summary: dict = {"task_count": len(run_records), "rtc": overall}
    if with_baseline:
        lifts = [engine.estimate_lift(r) for r in run_records]
        baselines = [
            math.fsum(r.baseline_scores) / len(r.baseline_scores) for r in run_records
        ]
        summary["baseline"] = math.fsum(baselines) / len(baselines)
        summary["lift"] = math.fsum(l.lift for l in lifts) / len(lifts)
    summary["failures"] = sum(1 for r in run_records if r.has_failures)
    return summary


def cmd_run_synthesis(args: argparse.Namespace) -> int:
    cfg = engine.SamplingConfig(
        n_forward=args.nf,
        n_backward=args.nb,
        forward_temperature=args.fwd_temp,
        backward_temperature=args.bwd_temp,
        max_forward_chars=args.max_fwd_chars,
        rng_seed=args.seed,
    )
    spec, forward_gen, backward_gen, split_models = _build_generators(args)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    sandbox = SandboxRunner(
        max_parallel=args.max_parallel_sandboxes,
        default_timeout=args.test_timeout_seconds,
        no_network=args.no_network,
        shim_source=args.shim_file,
    )
    try:
        if args.humaneval:
            problems = synthesis.load_benchmark_problems(args.humaneval)
            units = [synthesis.humaneval_adapter(p) for p in problems]
            kept = [u for u in units if synthesis.validate_benchmark_unit(u, sandbox)]
            excluded = len(units) - len(kept)
            tasks = [synthesis.BenchmarkRoundTrip(u) for u in kept]
            metric = synthesis.make_benchmark_pass_metric(sandbox, args.test_timeout_seconds)
        else:
            if not args.tasks or not args.project_root:
                raise ConfigError("run synthesis needs --tasks and --project-root (or --humaneval)")
            excluded = 0
            region_tasks = [corpus.RegionTask.from_dict(r) for r in records.read_jsonl(args.tasks)]
            tasks = [synthesis.SynthesisRoundTrip(t) for t in region_tasks]
            metric = similarity.make_pass_metric(
                sandbox, Path(args.project_root), args.test_timeout_seconds
            )

        run_records = engine.run_tasks(
            tasks,
            forward_gen,
            backward_gen,
            metric,
            cfg,
            include_baseline=args.baseline,
            max_workers=args.max_parallel_tasks,
        )
    finally:
        sandbox.cleanup()

    records.write_jsonl(out_dir / "records.jsonl", (r.to_dict() for r in run_records))
    summary = {"model_id": spec.model_id, "metric_id": metric.metric_id, "excluded": excluded}
    if split_models:
        summary["non_standard_split_models"] = split_models
    summary.update(_summarize(run_records, args.baseline))
    records.write_json(out_dir / "summary.json", summary)
    records.write_json(out_dir / "manifest.json", _run_manifest(args, args.seed, spec.model_id))
    print(f"synthesis rtc_{metric.metric_id}: {summary['rtc']:.6f} over {summary['task_count']} tasks")
    if args.baseline:
        print(f"baseline: {summary['baseline']:.6f}  lift: {summary['lift']:.6f}")
    return EXIT_TASK_FAILURES if summary["failures"] or excluded else EXIT_OK


# -- run editing ---------------------------------------------------------


def cmd_run_editing(args: argparse.Namespace) -> int:
    metric_names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metric_names if m not in editing.EDIT_METRICS]
    if unknown:
        raise ConfigError(f"unknown metrics: {unknown} (choose from em, bleu, rouge)")
    if not metric_names:
        raise ConfigError("at least one metric is required")

    cfg = engine.SamplingConfig(
        n_forward=args.nf,
        n_backward=args.nb,
        forward_temperature=args.fwd_temp,
        backward_temperature=args.bwd_temp,
        max_forward_chars=args.max_fwd_chars,
        rng_seed=args.seed,
    )
    spec, forward_gen, backward_gen, split_models = _build_generators(args)

    edit_tasks = editing.load_edit_tasks(args.tasks)
    tasks = [editing.EditingRoundTrip(t) for t in edit_tasks]

    def make_metric(name: str):
        if name == "em":
            return editing.edit_exact_match_metric(strict=args.strict_match)
        return editing.EDIT_METRICS[name]()

    primary = metric_names[0]
    run_records = engine.run_tasks(
        tasks, forward_gen, backward_gen, make_metric(primary), cfg,
        include_baseline=args.baseline, max_workers=args.max_parallel_tasks,
    )
    records_by_metric = {primary: run_records}
    for name in metric_names[1:]:
        other = make_metric(name)
        records_by_metric[name] = [
            engine.rescore(record, other, task) for record, task in zip(run_records, tasks)
        ]

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_records = [r.to_dict() for name in metric_names for r in records_by_metric[name]]
    records.write_jsonl(out_dir / "records.jsonl", all_records)

    summary: dict = {"model_id": spec.model_id, "metrics": {}}
    if split_models:
        summary["non_standard_split_models"] = split_models
    for name in metric_names:
        summary["metrics"][name] = _summarize(records_by_metric[name], args.baseline)
    if "bleu" in metric_names:
        # Sentence-mean vs corpus-level aggregation can differ; report both.
        pairs = [
            (editing.extract_new_code(text), task.task.new_code)
            for task, record in zip(tasks, records_by_metric["bleu"])
            for row in record.backward_samples
            for text in row
        ]
        summary["metrics"]["bleu"]["corpus_bleu"] = similarity.corpus_bleu(pairs)

    if args.supervised:
        em_scores = []
        bleu_scores = []
        skipped = 0
        for task in edit_tasks:
            em = editing.supervised_edit_generation(task, backward_gen)
            desc_bleu = editing.supervised_description_bleu(task, forward_gen, args.max_fwd_chars)
            if em is None:
                skipped += 1
                continue
            em_scores.append(float(em.value) * 100.0)
            bleu_scores.append(desc_bleu)
        summary["supervised"] = {
            "n": len(em_scores),
            "skipped_without_reference": skipped,
            "edit_exact_match": (
                math.fsum(em_scores) / len(em_scores) if em_scores else None
            ),
            "description_bleu": (
                math.fsum(bleu_scores) / len(bleu_scores) if bleu_scores else None
            ),
        }

    records.write_json(out_dir / "summary.json", summary)
    records.write_json(out_dir / "manifest.json", _run_manifest(args, args.seed, spec.model_id))
    for name in metric_names:
        print(f"editing rtc_{name}: {summary['metrics'][name]['rtc']:.6f}")
    failures = any(summary["metrics"][name]["failures"] for name in metric_names)
    return EXIT_TASK_FAILURES if failures else EXIT_OK


# -- report / correlate --------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    if args.group_by != "project":
        raise ConfigError(f"unsupported --group-by {args.group_by!r} (v1 groups by project)")
    loaded = [engine.RoundTripRecord.from_dict(raw) for raw in records.read_jsonl(args.records)]
    if not loaded:
        raise ConfigError(f"no records in {args.records}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    by_metric: dict[str, list[engine.RoundTripRecord]] = {}
    for record in loaded:
        by_metric.setdefault(record.metric_id, []).append(record)

    summary: dict = {"metrics": {}}
    for metric_id, group in sorted(by_metric.items()):
        rtc_by_task = {r.task_id: engine.estimate_rtc(r).rtc for r in group}
        lift_by_task = {
            r.task_id: engine.estimate_lift(r).lift for r in group if r.baseline_scores
        }
        project_of = {r.task_id: (r.project_id or "unknown") for r in group}
        rows = stats.per_project_table(rtc_by_task, project_of, lift_by_task or None)
        stats.write_csv(
            out_dir / f"per_project_{metric_id}.csv",
            ("project_id", "mean_rtc", "mean_lift", "n"),
            [(p, f"{m:.6f}", "" if l is None else f"{l:.6f}", n) for p, m, l, n in rows],
        )
        pairs = [
            (len(text), score)
            for r in group
            for row_text, row_score in zip(r.backward_samples, r.sim_scores)
            for text, score in zip(row_text, row_score)
        ]
        zero, nonzero = stats.length_stats(pairs)
        stats.write_csv(
            out_dir / f"lengths_{metric_id}.csv",
            ("group", "bucket_start", "count"),
            [(s.group, b, c) for s in (zero, nonzero) for b, c in s.histogram],
        )
        values = list(rtc_by_task.values())
        summary["metrics"][metric_id] = {
            "n_tasks": len(group),
            "mean_rtc": math.fsum(values) / len(values),
            "mean_lift": (
                math.fsum(lift_by_task.values()) / len(lift_by_task) if lift_by_task else None
            ),
            "length_mean_zero_score": zero.mean_chars,
            "length_mean_nonzero_score": nonzero.mean_chars,
            "rank_tie_handling": "average",
        }
    records.write_json(out_dir / "summary.json", summary)
    records.write_json(out_dir / "manifest.json", _run_manifest(args, None, None))
    print(f"report written to {out_dir}")
    return EXIT_OK


def _read_metric_csv(path: Path | str, value_column: str | None = None) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "model_id" not in reader.fieldnames:
            raise ConfigError(f"{path} needs a model_id column")
        column = value_column
        if column is None:
            candidates = [c for c in reader.fieldnames if c != "model_id"]
            if len(candidates) != 1:
                raise ConfigError(f"{path} must have exactly one metric column, got {candidates}")
            column = candidates[0]
        return {row["model_id"]: float(row[column]) for row in reader}


def cmd_correlate(args: argparse.Namespace) -> int:
    rtc_by_model = _read_metric_csv(args.records)
    supervised_by_model = _read_metric_csv(args.supervised)
    shared = sorted(set(rtc_by_model) & set(supervised_by_model))
    if len(shared) < 3:
        raise ConfigError(f"need >= 3 shared models, got {len(shared)}")
    xs = [supervised_by_model[m] for m in shared]
    ys = [rtc_by_model[m] for m in shared]
    result = stats.correlate(xs, ys)
    out = Path(args.out) if args.out else None
    if out:
        stats.write_csv(
            out,
            ("pearson_r", "spearman_rho", "n", "rank_tie_handling"),
            [(f"{result.pearson_r:.6f}", f"{result.spearman_rho:.6f}", result.n, "average")],
        )
    print(f"pearson_r={result.pearson_r:.4f} spearman_rho={result.spearman_rho:.4f} n={result.n}")
    return EXIT_OK


# -- argument plumbing ---------------------------------------------------


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mock", choices=("oracle", "echo", "scripted"),
                        help="use a deterministic local mock model")
    parser.add_argument("--script", help="script file for --mock scripted")
    parser.add_argument("--model-endpoint", help="URL of a remote generation endpoint")
    parser.add_argument("--model-id", help="model identifier recorded in outputs")
    parser.add_argument("--backward-model-endpoint",
                        help="separate backward endpoint (labels the run non-standard)")
    parser.add_argument("--backward-model-id")
    parser.add_argument("--requests-per-minute", type=int, default=None)
    parser.add_argument("--max-concurrent-requests", type=int, default=4)


def _add_sampling_args(parser: argparse.ArgumentParser, fwd_temp: float, bwd_temp: float) -> None:
    parser.add_argument("--nf", type=int, default=3, help="forward samples per task")
    parser.add_argument("--nb", type=int, default=1, help="backward samples per forward sample")
    parser.add_argument("--fwd-temp", type=float, default=fwd_temp)
    parser.add_argument("--bwd-temp", type=float, default=bwd_temp)
    parser.add_argument("--max-fwd-chars", type=int, default=128)
    parser.add_argument("--baseline", action="store_true",
                        help="also sample the uninformative-utterance baseline")
    parser.add_argument("--seed", type=int, default=None,
                        help="rng seed consumed by mock models")
    parser.add_argument("--max-parallel-tasks", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtc-eval", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    bc = sub.add_parser("build-corpus", help="sample region tasks from a tested project")
    bc.add_argument("--manifest", required=True)
    bc.add_argument("--out", required=True)
    bc.add_argument("--stats-out")
    bc.add_argument("--per-project", type=int, default=corpus.PER_PROJECT)
    bc.add_argument("--min-accept", type=int, default=corpus.MIN_ACCEPT)
    bc.add_argument("--min-chars", type=int, default=corpus.MIN_CHARS)
    bc.add_argument("--max-chars", type=int, default=corpus.MAX_CHARS)
    bc.add_argument("--context-budget", type=int, default=corpus.CONTEXT_BUDGET)
    bc.add_argument("--seed", type=int, required=True)
    bc.add_argument("--max-parallel-sandboxes", type=int, default=4)
    bc.add_argument("--test-timeout-seconds", type=float, default=300.0)
    bc.add_argument("--shim-file", help="shim script vendored into each worktree")
    bc.add_argument("--no-network", action="store_true")
    bc.set_defaults(func=cmd_build_corpus)

    run = sub.add_parser("run", help="round-trip a task set against a model")
    run_sub = run.add_subparsers(dest="task_kind", required=True)

    rs = run_sub.add_parser("synthesis", help="region-description round trips")
    rs.add_argument("--tasks", help="region-task records from build-corpus")
    rs.add_argument("--project-root", help="pristine project the tasks came from")
    rs.add_argument("--humaneval", help="benchmark problem archive (JSONL)")
    rs.add_argument("--out-dir", required=True)
    _add_model_args(rs)
    _add_sampling_args(rs, fwd_temp=0.8, bwd_temp=0.1)
    rs.add_argument("--max-parallel-sandboxes", type=int, default=4)
    rs.add_argument("--test-timeout-seconds", type=float, default=300.0)
    rs.add_argument("--shim-file", help="shim script vendored into each worktree")
    rs.add_argument("--no-network", action="store_true")
    rs.set_defaults(func=cmd_run_synthesis)

    re_ = run_sub.add_parser("editing", help="edit-description round trips")
    re_.add_argument("--tasks", required=True, help="edit-task records (JSONL)")
    re_.add_argument("--out-dir", required=True)
    re_.add_argument("--metrics", default="em", help="comma list: em,bleu,rouge")
    re_.add_argument("--strict-match", action="store_true",
                     help="raw equality instead of normalized exact match")
    re_.add_argument("--supervised", action="store_true",
                     help="also run the reference-comment modes")
    _add_model_args(re_)
    _add_sampling_args(re_, fwd_temp=1.0, bwd_temp=0.0)
    re_.set_defaults(func=cmd_run_editing)

    rp = sub.add_parser("report", help="aggregate record files into tables")
    rp.add_argument("--records", required=True)
    rp.add_argument("--group-by", default="project")
    rp.add_argument("--out-dir", required=True)
    rp.set_defaults(func=cmd_report)

    co = sub.add_parser("correlate", help="correlate per-model scores with a reference metric")
    co.add_argument("--records", required=True, help="CSV with columns model_id,<metric>")
    co.add_argument("--supervised", required=True, help="CSV with columns model_id,<metric>")
    co.add_argument("--out")
    co.set_defaults(func=cmd_correlate)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, FileNotFoundError, ValueError, KeyError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except corpus.CorpusError as exc:
        logger.error("%s", exc)
        return EXIT_TASK_FAILURES


if __name__ == "__main__":
    sys.exit(main())
