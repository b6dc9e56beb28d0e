"""Command-line surface: corpus preprocessing, serving, evaluation, cost reports."""

from __future__ import annotations

import argparse
import json
import sys

from .backends import make_backend
from .cachestore import CacheStore
from .costmodel import (
    breakdown_table,
    load_shape,
    load_workload,
    report_csv,
    report_table,
    shape_preset_names,
    speedup_report,
    standard_variants,
    workload_preset_names,
)
from .dataset import PromptTemplate, example_segments, ingest
from .experiment import run_experiment, sweep
from .runtime import ServingPlan, preprocess, serve, serve_iterative


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", default="reference-alibi",
                        help="reference-alibi | reference-rotary | remote:<host>:<port>")
    parser.add_argument("--positioning", default="equilibrium",
                        choices=("equilibrium", "left_aligned"))
    parser.add_argument("--saliency", default="bayesian",
                        choices=("bayesian", "attention", "none"))
    parser.add_argument("--top-k", type=int, default=1)
    parser.add_argument("--factor", type=float, default=None,
                        help="superposition factor in [1, m]; default fully split")
    parser.add_argument("--iters", type=int, default=1,
                        help="iterative superposition steps")
    parser.add_argument("--cache-dir", default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-new-tokens", type=int, default=64)
    parser.add_argument("--template", default=None, help="prompt template JSON file")
    parser.add_argument("--plan", default=None, help="serving plan JSON file")
    parser.add_argument("--no-cache", action="store_true")
    parser.add_argument("--no-parallel", action="store_true")
    parser.add_argument("--no-prune", action="store_true")
    parser.add_argument("--threshold", type=float, default=None,
                        help="posterior threshold selector instead of top-k")
    parser.add_argument("--out", default="json", choices=("json", "csv"))


def _plan_from(args) -> ServingPlan:
    if args.plan:
        with open(args.plan) as fh:
            plan = ServingPlan.from_json(fh.read())
    else:
        plan = ServingPlan()
    plan.positioning = args.positioning
    plan.saliency = args.saliency
    plan.top_k = args.top_k
    plan.factor = args.factor
    plan.iterations = args.iters
    plan.max_new_tokens = args.max_new_tokens
    if args.no_cache:
        plan.use_cache = False
    if args.no_parallel:
        plan.parallel_paths = False
    if args.no_prune:
        plan.prune = False
    if args.threshold is not None:
        plan.posterior_threshold = args.threshold
    return plan


def _store_from(args) -> CacheStore | None:
    return CacheStore(args.cache_dir) if args.cache_dir else None


def _cmd_preprocess(args) -> int:
    backend = make_backend(args.backend)
    store = _store_from(args)
    examples = ingest(args.dataset, seed=args.seed)
    if args.index is not None:
        examples = [examples[args.index]]
    template = PromptTemplate.load(args.template)
    plan = _plan_from(args)
    total_calls = total_docs = 0
    for example in examples:
        preamble, documents, _, _ = example_segments(example, template)
        prep = preprocess(backend, preamble, documents,
                          positioning=plan.positioning, factor=plan.factor, store=store)
        total_calls += prep.backend_calls
        total_docs += len(prep.documents)
    print(json.dumps({
        "examples": len(examples),
        "documents_cached": total_docs,
        "backend_calls": total_calls,
        "cache_dir": args.cache_dir,
    }, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    backend = make_backend(args.backend)
    store = _store_from(args)
    plan = _plan_from(args)
    examples = ingest(args.dataset, seed=args.seed)
    example = examples[args.index]
    if args.question:
        example.question = args.question
    template = PromptTemplate.load(args.template)
    preamble, documents, query, postamble = example_segments(example, template)
    prep = preprocess(backend, preamble, documents,
                      positioning=plan.positioning, factor=plan.factor,
                      store=store if plan.use_cache else None)
    runner = serve_iterative if plan.iterations > 1 else serve
    result = runner(backend, prep, query, postamble, plan)
    print(result.to_json())
    return 0


def _cmd_eval(args) -> int:
    backend = make_backend(args.backend)
    store = _store_from(args)
    plan = _plan_from(args)
    examples = ingest(args.dataset, seed=args.seed)
    if args.limit:
        examples = examples[: args.limit]
    template = PromptTemplate.load(args.template)
    report = run_experiment(examples, plan, backend, template, store, seed=args.seed)
    print(report.to_csv() if args.out == "csv" else report.to_json())
    return 0


def _cmd_cost(args) -> int:
    shape = load_shape(args.shape)
    workload = load_workload(args.workload)
    variants = standard_variants(k=args.top_k)
    if args.factor is not None:
        variants.append({"method": "superposition", "prune": True, "cache": True,
                         "parallel": True, "k": args.top_k, "factor": args.factor})
    if args.breakdown:
        for variant in variants:
            print(breakdown_table(workload, shape, variant))
            print()
    rows = speedup_report(workload, shape, variants)
    if args.out == "csv":
        print(report_csv(rows), end="")
    elif args.out == "json":
        print(json.dumps(
            [{"variant": r.name, "cycles": r.cycles, "speedup": r.speedup} for r in rows],
            sort_keys=True, indent=2,
        ))
    else:
        print(report_table(rows))
    return 0


def _cmd_sweep(args) -> int:
    backend = make_backend(args.backend)
    store = _store_from(args)
    plan = _plan_from(args)
    examples = ingest(args.dataset, seed=args.seed)
    if args.limit:
        examples = examples[: args.limit]
    template = PromptTemplate.load(args.template)
    values = [float(v) if args.param == "factor" else int(v)
              for v in args.values.split(",")]
    result = sweep(examples, plan, backend, args.param, values, template, store,
                   seed=args.seed)
    print(result.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="superprompt",
        description="Superposition prompting engine for retrieval-augmented generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="compute KV caches for a corpus")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("serve", help="answer a single query")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--question", default=None, help="override the example question")
    _add_common(p)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("eval", help="run a dataset and report answer metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--limit", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("cost", help="analytical compute-cycles report")
    p.add_argument("--shape", default="mpt-7b",
                   help=f"preset ({', '.join(shape_preset_names())}) or JSON file")
    p.add_argument("--workload", default="nq_like",
                   help=f"preset ({', '.join(workload_preset_names())}) or JSON file")
    p.add_argument("--top-k", type=int, default=1)
    p.add_argument("--factor", type=float, default=None)
    p.add_argument("--out", default="table", choices=("table", "csv", "json"))
    p.add_argument("--breakdown", action="store_true",
                   help="print a stage-by-stage listing per variant")
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("sweep", help="grid over top-k or superposition factor")
    p.add_argument("--dataset", required=True)
    p.add_argument("--param", required=True, choices=("top_k", "factor"))
    p.add_argument("--values", required=True, help="comma-separated grid")
    p.add_argument("--limit", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
