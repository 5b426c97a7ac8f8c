"""Command-line entry point: one binary, one subcommand per pipeline stage.

  generate  build a training dataset from multi-round searches
  decode    reward-guided greedy search over a problem set
  eval      first-error localization scoring / F1 table recomputation
  synth     end-to-end demo on the built-in synthetic domain
  inspect   dump the search tree for one problem

Every command is deterministic given (config, seeds, warm cache). Failures
print a machine-readable JSON error record to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .backends import (
    ChatCompletionGenerator,
    ExactVerifier,
    OracleScorer,
    ScriptedGenerator,
    ServedPrmScorer,
    ToolVerifier,
    builtin_template,
)
from .config import ConfigError, RunConfig, backend_config_from, load_config
from .dataset import BuildConfig, build_dataset, load_problems
from .decoding import decode, pass_at_n, sample_rollout, write_decode_log
from .domain import Problem
from .evaluation import (
    AnnotatedSample,
    Prediction,
    ReferenceRow,
    f1_from_accuracies,
    load_annotated,
    load_predictions,
    locate_first_error,
    recompute_reference_table,
    reference_rows,
    render_score_table,
    report_to_dict,
    score_samples,
    write_annotated,
    write_predictions,
)
from .mcts import export_tree, run_search
from .synthetic import SyntheticTrace, build_corpus, oracle_labels


def _json_line(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":"))


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_json_line(payload) + "\n", encoding="utf-8")


def _write_problems(path: Path, problems: list[Problem]) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for problem in problems:
            handle.write(
                _json_line(
                    {
                        "id": problem.id,
                        "statement": problem.statement,
                        "gold_answer": problem.gold_answer,
                        "source": problem.source,
                    }
                )
                + "\n"
            )


def _decode_all(problems, generator, scorer, cfg: RunConfig):
    """Decode every problem, on the config worker pool when sized above 1."""
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(
                lambda problem: decode(problem, generator, scorer, cfg.decode), problems
            ))
    return [decode(problem, generator, scorer, cfg.decode) for problem in problems]


def _write_decode_results(out: Path, results) -> None:
    with (out / "decode_results.jsonl").open("w", encoding="utf-8", newline="\n") as handle:
        for result in results:
            handle.write(
                _json_line(
                    {
                        "id": result.problem_id,
                        "correct": result.correct,
                        "complete": result.complete,
                        "final_answer": result.trajectory.final_answer,
                        "steps": [s.action for s in result.trajectory.steps],
                    }
                )
                + "\n"
            )


def _resolve_problems(
    cfg: RunConfig, roles: tuple[str, ...]
) -> tuple[list[Problem], list[SyntheticTrace] | None]:
    """Problems for this run: the synthetic corpus, or an external file.

    Only the backend roles the command actually uses decide which source
    applies; synthetic backends need the corpus, remote ones a problems file.
    """
    any_synthetic = any(cfg.backends[role].get("kind") == "synthetic" for role in roles)
    if any_synthetic:
        if cfg.paths.problems_file is not None:
            raise ConfigError(
                "synthetic backends generate their own problems; remove "
                "paths.problems_file or switch every backend to http"
            )
        if cfg.synthetic is None:
            raise ConfigError("synthetic backends require a [synthetic] corpus section")
        traces = build_corpus(cfg.synthetic)
        return [trace.problem for trace in traces], traces
    if cfg.paths.problems_file is None:
        raise ConfigError("paths.problems_file is required when all backends are remote")
    return load_problems(cfg.paths.problems_file), None


def _build_backends(cfg: RunConfig, traces: list[SyntheticTrace] | None,
                    roles: tuple[str, ...]) -> dict:
    cache_dir = cfg.paths.cache_dir
    scorer_template = "scorer_label_only" if cfg.mode == "no_rationale" else "scorer"
    built = {}
    for role in roles:
        spec = cfg.backends[role]
        synthetic = spec["kind"] == "synthetic"
        if synthetic and traces is None:
            raise ConfigError(f"backends.{role} is synthetic but no corpus is available")
        if role == "generator":
            if synthetic:
                built[role] = ScriptedGenerator(
                    traces,
                    branch_noise=cfg.synthetic.branch_noise,
                    noise_deltas=cfg.synthetic.noise_deltas,
                    seed=cfg.search.rng_seed,
                )
            else:
                built[role] = ChatCompletionGenerator(
                    backend_config_from(spec, "generator", cache_dir),
                    builtin_template("generator"),
                )
        elif role == "verifier":
            if synthetic:
                built[role] = ExactVerifier(traces)
            else:
                if "tool" not in spec or "judger" not in spec:
                    raise ConfigError(
                        "backends.verifier needs tool and judger endpoint objects"
                    )
                built[role] = ToolVerifier(
                    backend_config_from(spec["tool"], "verifier.tool", cache_dir),
                    backend_config_from(spec["judger"], "verifier.judger", cache_dir),
                    builtin_template("judger"),
                )
        elif role == "scorer":
            if synthetic:
                built[role] = OracleScorer(traces)
            else:
                built[role] = ServedPrmScorer(
                    backend_config_from(spec, "scorer", cache_dir),
                    builtin_template(scorer_template),
                    mode=spec.get("score_mode", "label"),
                )
    return built


def _outdir(cfg: RunConfig, override: str | None) -> Path:
    out = Path(override) if override else Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, mode=args.mode, workers=args.workers)


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg, args.output)
    roles = ("generator", "verifier")
    problems, traces = _resolve_problems(cfg, roles)
    backends = _build_backends(cfg, traces, roles)
    generator, verifier = backends["generator"], backends["verifier"]
    build_cfg = BuildConfig(
        mode=cfg.mode,
        rng_seed=cfg.search.rng_seed,
        config_hash=cfg.config_hash,
        workers=cfg.workers,
    )
    report = build_dataset(
        problems, generator, verifier, cfg.search, build_cfg, out / "dataset.jsonl"
    )
    if traces is not None:
        _write_problems(out / "problems.jsonl", problems)
    summary = report.summary_dict()
    summary.update({"mode": cfg.mode, "rng_seed": cfg.search.rng_seed,
                    "config_hash": cfg.config_hash})
    _write_json(out / "summary.json", summary)
    print(f"generate: kept {report.kept} of {report.rollouts_total} rollouts "
          f"({report.dropped_total} dropped) -> {out / 'dataset.jsonl'}")
    return 0


def cmd_decode(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg, args.output)
    roles = ("generator", "scorer")
    problems, traces = _resolve_problems(cfg, roles)
    backends = _build_backends(cfg, traces, roles)
    generator, scorer = backends["generator"], backends["scorer"]

    results = _decode_all(problems, generator, scorer, cfg)
    _write_decode_results(out, results)
    write_decode_log(out / "decode_log.jsonl", results)

    matrix = [
        [sample_rollout(problem, generator, cfg.decode, s)[1] for s in range(cfg.decode.pass_n)]
        for problem in problems
    ]
    summary = {
        "problems": len(problems),
        "guided_accuracy": sum(r.correct for r in results) / len(results) if results else 0.0,
        "pass_at_1": pass_at_n(matrix, 1) if matrix else 0.0,
        f"pass_at_{cfg.decode.pass_n}": pass_at_n(matrix, cfg.decode.pass_n) if matrix else 0.0,
        "rng_seed": cfg.decode.rng_seed,
        "config_hash": cfg.config_hash,
    }
    _write_json(out / "decode_summary.json", summary)
    print(f"decode: guided accuracy {summary['guided_accuracy']:.3f} on "
          f"{len(problems)} problems -> {out}")
    return 0


def _eval_reference(rows: list[ReferenceRow], out: Path | None) -> int:
    recomputed = recompute_reference_table(rows)
    table = [
        (row.model, row.benchmark, row.error_accuracy, row.correct_accuracy, f1)
        for row, f1 in recomputed
    ]
    text = render_score_table(table)
    max_dev = max(
        (abs(f1 - row.reported_f1) for row, f1 in recomputed), default=0.0
    )
    payload = {
        "rows": [
            {
                "model": row.model,
                "benchmark": row.benchmark,
                "error": row.error_accuracy,
                "correct": row.correct_accuracy,
                "reported_f1": row.reported_f1,
                "recomputed_f1": f1,
            }
            for row, f1 in recomputed
        ],
        "max_abs_deviation": max_dev,
    }
    print(text, end="")
    print(f"max |recomputed - reported| = {max_dev:.4f}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "f1_table.txt").write_text(text, encoding="utf-8")
        _write_json(out / "f1_table.json", payload)
    return 0


def cmd_eval(args) -> int:
    out = Path(args.output) if args.output else None
    if args.reference:
        return _eval_reference(reference_rows(), out)
    if args.pairs:
        records = json.loads(Path(args.pairs).read_text(encoding="utf-8"))["rows"]
        rows = [
            ReferenceRow(
                model=r["model"],
                benchmark=r.get("benchmark", "-"),
                error_accuracy=r["error"],
                correct_accuracy=r["correct"],
                reported_f1=r.get("f1", f1_from_accuracies(r["error"], r["correct"])),
            )
            for r in records
        ]
        return _eval_reference(rows, out)
    if not args.annotations or not args.predictions:
        raise ConfigError(
            "eval needs --annotations and --predictions, or --pairs, or --reference"
        )
    annotations = load_annotated(args.annotations)
    predictions = load_predictions(args.predictions)
    report = score_samples(predictions, annotations)
    text = render_score_table(
        [("predictions", "-", report.error_accuracy, report.correct_accuracy, report.f1)]
    )
    print(text, end="")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "eval_report.json", report_to_dict(report))
        (out / "eval_report.txt").write_text(text, encoding="utf-8")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    if cfg.synthetic is None:
        raise ConfigError("synth requires a [synthetic] corpus section")
    out = _outdir(cfg, args.output)
    traces = build_corpus(cfg.synthetic)
    problems = [trace.problem for trace in traces]
    roles = ("generator", "verifier", "scorer")
    backends = _build_backends(cfg, traces, roles)
    generator, verifier, scorer = (backends["generator"], backends["verifier"],
                                   backends["scorer"])

    _write_problems(out / "problems.jsonl", problems)

    annotations = [
        AnnotatedSample(
            sample_id=trace.problem.id,
            problem=trace.problem.statement,
            steps=tuple(s.action for s in trace.trajectory.steps),
            gold_first_error=trace.first_error_index,
        )
        for trace in traces
    ]
    write_annotated(out / "annotations.jsonl", annotations)
    predictions = [
        Prediction(
            sample_id=trace.problem.id,
            first_error=locate_first_error(oracle_labels(trace.trajectory.steps, trace)),
        )
        for trace in traces
    ]
    write_predictions(out / "predictions.jsonl", predictions)
    eval_report = score_samples(predictions, annotations)
    _write_json(out / "eval_report.json", report_to_dict(eval_report))
    (out / "eval_report.txt").write_text(
        render_score_table(
            [("exact-verifier", "synthetic", eval_report.error_accuracy,
              eval_report.correct_accuracy, eval_report.f1)]
        ),
        encoding="utf-8",
    )

    build_cfg = BuildConfig(
        mode=cfg.mode, rng_seed=cfg.search.rng_seed,
        config_hash=cfg.config_hash, workers=cfg.workers,
    )
    build_report = build_dataset(
        problems, generator, verifier, cfg.search, build_cfg, out / "dataset.jsonl"
    )
    _write_json(out / "dataset_summary.json", build_report.summary_dict())

    results = _decode_all(problems, generator, scorer, cfg)
    _write_decode_results(out, results)
    write_decode_log(out / "decode_log.jsonl", results)
    matrix = [
        [sample_rollout(problem, generator, cfg.decode, s)[1] for s in range(cfg.decode.pass_n)]
        for problem in problems
    ]

    report = {
        "config_hash": cfg.config_hash,
        "rng_seed": cfg.search.rng_seed,
        "mode": cfg.mode,
        "problems": len(problems),
        "dataset": {
            "rollouts": build_report.rollouts_total,
            "kept": build_report.kept,
            "dropped": dict(sorted(build_report.dropped.items())),
            "flip_events": len(build_report.flip_events),
        },
        "decode": {
            "guided_accuracy": sum(r.correct for r in results) / len(results),
            "pass_at_1": pass_at_n(matrix, 1),
            f"pass_at_{cfg.decode.pass_n}": pass_at_n(matrix, cfg.decode.pass_n),
        },
        "eval": report_to_dict(eval_report),
    }
    _write_json(out / "report.json", report)
    lines = [
        "synthetic end-to-end report",
        f"  problems:        {len(problems)}",
        f"  dataset kept:    {build_report.kept} of {build_report.rollouts_total} rollouts",
        f"  dataset dropped: {dict(sorted(build_report.dropped.items()))}",
        f"  guided accuracy: {report['decode']['guided_accuracy']:.3f}",
        f"  pass@1:          {report['decode']['pass_at_1']:.3f}",
        f"  pass@{cfg.decode.pass_n}:          {report['decode'][f'pass_at_{cfg.decode.pass_n}']:.3f}",
        f"  eval F1:         {eval_report.f1:.1f}",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_inspect(args) -> int:
    cfg = _load_cfg(args)
    roles = ("generator", "verifier")
    problems, traces = _resolve_problems(cfg, roles)
    if args.problem_id:
        matches = [p for p in problems if p.id == args.problem_id]
        if not matches:
            raise ConfigError(f"no problem with id {args.problem_id}")
        problem = matches[0]
    else:
        problem = problems[args.problem_index]
    backends = _build_backends(cfg, traces, roles)
    result = run_search(problem, backends["generator"], backends["verifier"], cfg.search)
    dump = export_tree(result.root)
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump, encoding="utf-8")
        print(f"inspect: wrote tree for {problem.id} to {path}")
    else:
        print(dump, end="")
    return 0


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="path to the JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="override every stage seed")
    parser.add_argument("--workers", type=int, default=None, help="override the worker pool size")
    parser.add_argument(
        "--mode",
        choices=["hybrid", "step_only", "outcome_only", "no_rationale"],
        default=None,
        help="override the labeling mode",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treeprm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_generate = sub.add_parser("generate", help="build a training dataset")
    _add_common(p_generate)
    p_generate.add_argument("--output", default=None, help="output directory override")
    p_generate.set_defaults(func=cmd_generate)

    p_decode = sub.add_parser("decode", help="reward-guided greedy decoding")
    _add_common(p_decode)
    p_decode.add_argument("--output", default=None, help="output directory override")
    p_decode.set_defaults(func=cmd_decode)

    p_eval = sub.add_parser("eval", help="first-error localization scoring")
    _add_common(p_eval, config_required=False)
    p_eval.add_argument("--annotations", default=None, help="annotated samples (JSONL)")
    p_eval.add_argument("--predictions", default=None, help="predicted first errors (JSONL)")
    p_eval.add_argument("--pairs", default=None,
                        help="JSON file of (error, correct) accuracy rows to recompute F1 for")
    p_eval.add_argument("--reference", action="store_true",
                        help="recompute F1 for the bundled published score rows")
    p_eval.add_argument("--output", default=None, help="directory for report files")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="end-to-end synthetic demo")
    _add_common(p_synth)
    p_synth.add_argument("--output", default=None, help="output directory override")
    p_synth.set_defaults(func=cmd_synth)

    p_inspect = sub.add_parser("inspect", help="dump one problem's search tree")
    _add_common(p_inspect)
    p_inspect.add_argument("--problem-id", default=None, help="problem id to inspect")
    p_inspect.add_argument("--problem-index", type=int, default=0,
                           help="fallback positional index when no id is given")
    p_inspect.add_argument("--output", default=None, help="file for the tree dump")
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - CLI boundary emits a machine-readable record
        record = {"error": type(err).__name__, "message": str(err)}
        print(_json_line(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
