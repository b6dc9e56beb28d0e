"""Dataset-level experiment runner: serve every example, score, aggregate."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .cachestore import CacheStore
from .dataset import PromptTemplate, RagExample, example_segments
from .metrics import answer_em_f1, best_em_subspan
from .runtime import ServingPlan, preprocess, serve, serve_iterative

METRIC_COLUMNS = ("best_em_subspan", "em", "f1", "cycles", "backend_calls")


@dataclass
class EvalReport:
    rows: list[dict]
    aggregates: dict
    counts: dict
    config: dict

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "counts": self.counts,
            "aggregates": self.aggregates,
            "rows": self.rows,
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["index", "question", "response", *METRIC_COLUMNS, "selected", "error"]
        writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        return buf.getvalue()


def _aggregate(rows: list[dict]) -> tuple[dict, dict]:
    ok = [r for r in rows if r["error"] is None]
    aggregates = {}
    for col in METRIC_COLUMNS:
        values = [r[col] for r in ok]
        aggregates[col] = sum(values) / len(values) if values else None
    counts = {"examples": len(rows), "succeeded": len(ok), "failed": len(rows) - len(ok)}
    return aggregates, counts


def run_experiment(
    examples: list[RagExample],
    plan: ServingPlan,
    backend,
    template: PromptTemplate | None = None,
    store: CacheStore | None = None,
    seed: int = 0,
) -> EvalReport:
    """Serve every example under one plan and collect answer metrics.

    A failing example degrades to a row with an ``error`` string rather than
    aborting the run.  Output ordering follows example index, so the report
    is byte-stable for a fixed seed, backend, and plan.
    """
    rows: list[dict] = []
    for example in examples:
        row = {
            "index": example.index,
            "question": example.question,
            "response": None,
            "best_em_subspan": None,
            "em": None,
            "f1": None,
            "cycles": None,
            "backend_calls": None,
            "selected": None,
            "error": None,
        }
        try:
            preamble, documents, query, postamble = example_segments(example, template)
            prep = preprocess(
                backend, preamble, documents,
                positioning=plan.positioning, factor=plan.factor,
                store=store if plan.use_cache else None,
            )
            runner = serve_iterative if plan.iterations > 1 else serve
            result = runner(backend, prep, query, postamble, plan)
            subspan = best_em_subspan(result.response_text, example.answers)
            em, f1 = answer_em_f1(result.response_text, example.answers)
            row.update(
                response=result.response_text,
                best_em_subspan=subspan,
                em=em,
                f1=f1,
                cycles=result.cycles,
                backend_calls=result.backend_calls + prep.backend_calls,
                selected=list(result.selected),
            )
        except Exception as exc:  # noqa: BLE001 - per-example isolation is the contract
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    aggregates, counts = _aggregate(rows)
    config = {
        "plan": json.loads(plan.to_json()),
        "backend": backend.model_id,
        "seed": seed,
    }
    return EvalReport(rows, aggregates, counts, config)


@dataclass
class SweepResult:
    parameter: str
    values: list
    reports: list[EvalReport] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "parameter": self.parameter,
            "points": [
                {"value": v, "aggregates": r.aggregates, "counts": r.counts}
                for v, r in zip(self.values, self.reports)
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def sweep(
    examples: list[RagExample],
    plan: ServingPlan,
    backend,
    parameter: str,
    values: list,
    template: PromptTemplate | None = None,
    store: CacheStore | None = None,
    seed: int = 0,
) -> SweepResult:
    """Re-run the experiment across a grid of top-k or superposition factors."""
    if parameter not in ("top_k", "factor"):
        raise ValueError("sweep parameter must be 'top_k' or 'factor'")
    result = SweepResult(parameter, list(values))
    for value in values:
        kwargs = {parameter: value}
        point_plan = ServingPlan(**{**json.loads(plan.to_json()), **kwargs})
        result.reports.append(
            run_experiment(examples, point_plan, backend, template, store, seed)
        )
    return result
