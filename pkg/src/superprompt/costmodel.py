"""Analytical compute accounting that credits caching, pruning, parallelism.

Cost is measured in multiply-accumulate operations with one twist: a plan is
a sequence of stages, each stage a set of branches that run concurrently, and
a stage costs the *maximum* over its branches rather than the sum.  Cached
segments cost nothing at serving time.  This reproduces the theoretical
speedup methodology behind the serving optimizations: caching removes work,
parallelism hides it, pruning shrinks the decode context.

Per new token the model spends P MACs in parameters (projections and MLPs)
plus 2 * L * d_model per visible key for the attention dot products, so a
segment of n tokens over an average visible context c costs

    P * n + 2 * L * d_model * n * c.

Whether normalization/softmax flops are counted varies between published
counters; this convention is isolated here so it can be swapped.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .graph import group_sizes
from .model import ModelShape


@dataclass(frozen=True)
class SegmentEval:
    """One segment forward: n_new tokens over an average context of n_ctx."""

    n_new: float
    n_ctx: float
    cached: bool = False

    def __post_init__(self):
        if self.n_new < 0 or self.n_ctx < 0:
            raise ValueError("token counts must be non-negative")


Branch = list[SegmentEval]
Stage = list[Branch]


@dataclass
class CostPlan:
    stages: list[Stage] = field(default_factory=list)

    def serial(self, *evals: SegmentEval) -> None:
        """Append each eval as its own single-branch stage."""
        for ev in evals:
            self.stages.append([[ev]])

    def parallel(self, branches: list[Branch]) -> None:
        self.stages.append(branches)


@dataclass
class WorkloadSpec:
    """Token-count model of one serving request."""

    preamble_len: int
    doc_count: int
    doc_len_mean: float = 0.0
    doc_lens: list[int] | None = None
    doc_len_std: float = 0.0
    query_len: int = 0
    postamble_len: int = 0
    response_len: int = 0

    def __post_init__(self):
        if self.doc_count < 1:
            raise ValueError("doc_count must be >= 1")
        if self.doc_lens is not None and len(self.doc_lens) != self.doc_count:
            raise ValueError("doc_lens length must equal doc_count")

    def doc_lengths(self) -> list[int]:
        if self.doc_lens is not None:
            return list(self.doc_lens)
        return [round(self.doc_len_mean)] * self.doc_count

    def sample_doc_lengths(self, rng) -> list[int]:
        """Synthetic per-document lengths: normal around the mean, floor 2."""
        draws = rng.normal(self.doc_len_mean, self.doc_len_std, size=self.doc_count)
        return [max(2, int(round(x))) for x in draws]


def segment_macs(shape: ModelShape, n_new: float, n_ctx: float) -> float:
    """MACs to evaluate n_new tokens whose mean visible context is n_ctx."""
    if n_new < 0 or n_ctx < 0:
        raise ValueError("token counts must be non-negative")
    return shape.param_count * n_new + 2.0 * shape.layers * shape.d_model * n_new * n_ctx


def compute_cycles(plan: CostPlan, shape: ModelShape) -> float:
    """Sum over stages of the max over parallel branches; cached evals cost 0."""
    total = 0.0
    for stage in plan.stages:
        branch_costs = []
        for branch in stage:
            cost = sum(
                0.0 if ev.cached else segment_macs(shape, ev.n_new, ev.n_ctx)
                for ev in branch
            )
            branch_costs.append(cost)
        total += max(branch_costs) if branch_costs else 0.0
    return total


def _causal(n: float, prefix: float = 0.0) -> float:
    """Average visible context for n new tokens after a prefix (self included)."""
    return prefix + (n + 1.0) / 2.0


def _decode(plan: CostPlan, context: float, response_len: int) -> None:
    """Greedy decoding: serial single-token stages against a growing context."""
    for i in range(response_len):
        plan.serial(SegmentEval(1, context + i + 1))


def naive_plan(w: WorkloadSpec) -> CostPlan:
    """One monolithic prompt forward followed by decoding."""
    prompt = w.preamble_len + sum(w.doc_lengths()) + w.query_len + w.postamble_len
    plan = CostPlan()
    plan.serial(SegmentEval(prompt, _causal(prompt)))
    _decode(plan, prompt, w.response_len)
    return plan


def superposition_plan(
    w: WorkloadSpec,
    prune: bool = False,
    cache: bool = False,
    parallel: bool = False,
    k: int = 1,
    factor: float | None = None,
) -> CostPlan:
    """Forked serving: per-path document+query branches, then join and decode.

    The preamble and every path share its KV within one request regardless of
    the cache flag; ``cache`` additionally marks preamble and document evals
    as precomputed offline.  With ``prune`` only the first min(k, paths)
    branches contribute to the join context (cycles are order-invariant, so
    which k is immaterial for uniform lengths).
    """
    lengths = w.doc_lengths()
    m = len(lengths)
    factor = m if factor is None else factor
    branch_lens: list[int] = []
    start = 0
    for size in group_sizes(m, factor):
        branch_lens.append(sum(lengths[start : start + size]))
        start += size

    p, q, t = w.preamble_len, w.query_len, w.postamble_len
    plan = CostPlan()
    plan.serial(SegmentEval(p, _causal(p), cached=cache))
    branches = [
        [
            SegmentEval(d, _causal(d, p), cached=cache),
            SegmentEval(q, _causal(q, p + d)),
        ]
        for d in branch_lens
    ]
    if parallel:
        plan.parallel(branches)
    else:
        for branch in branches:
            plan.stages.append([branch])

    kept = min(k, len(branch_lens)) if prune else len(branch_lens)
    join_ctx = p + sum(d + q for d in branch_lens[:kept])
    plan.serial(SegmentEval(t, _causal(t, join_ctx)))
    _decode(plan, join_ctx + t, w.response_len)
    return plan


def prompt_cache_plan(w: WorkloadSpec) -> CostPlan:
    """All prompt segments precomputed; one query pass over the full context."""
    p, d_total = w.preamble_len, sum(w.doc_lengths())
    plan = CostPlan()
    plan.serial(
        SegmentEval(p, _causal(p), cached=True),
        SegmentEval(d_total, _causal(d_total, p), cached=True),
        SegmentEval(w.query_len, _causal(w.query_len, p + d_total)),
    )
    ctx = p + d_total + w.query_len
    plan.serial(SegmentEval(w.postamble_len, _causal(w.postamble_len, ctx)))
    _decode(plan, ctx + w.postamble_len, w.response_len)
    return plan


def attention_sort_plan(w: WorkloadSpec, repeats: int = 3) -> CostPlan:
    """Reorder-by-attention baselines pay repeated full-prompt forwards."""
    prompt = w.preamble_len + sum(w.doc_lengths()) + w.query_len + w.postamble_len
    plan = CostPlan()
    for _ in range(repeats):
        plan.serial(SegmentEval(prompt, _causal(prompt)))
    _decode(plan, prompt, w.response_len)
    return plan


def ranked_chain_plan(w: WorkloadSpec, k: int = 1) -> CostPlan:
    """External ranker keeps top-k documents, then a classical chain.

    Document KV caching is credited where ancestry permits: the preamble and
    the first document are reusable, but later documents attend to earlier
    ones and must be recomputed.  The ranker itself is treated as free.
    """
    lengths = w.doc_lengths()[: min(k, w.doc_count)]
    p, q, t = w.preamble_len, w.query_len, w.postamble_len
    plan = CostPlan()
    plan.serial(SegmentEval(p, _causal(p), cached=True))
    ctx = float(p)
    for j, d in enumerate(lengths):
        plan.serial(SegmentEval(d, _causal(d, ctx), cached=(j == 0)))
        ctx += d
    plan.serial(SegmentEval(q, _causal(q, ctx)))
    ctx += q
    plan.serial(SegmentEval(t, _causal(t, ctx)))
    _decode(plan, ctx + t, w.response_len)
    return plan


# --- report ----------------------------------------------------------------

@dataclass
class VariantRow:
    name: str
    cycles: float
    speedup: float


def standard_variants(k: int = 1) -> list[dict]:
    """Naive, the eight optimization-flag combinations, and the baselines."""
    rows: list[dict] = [{"method": "naive"}]
    for prune in (False, True):
        for cache in (False, True):
            for parallel in (False, True):
                rows.append(
                    {
                        "method": "superposition",
                        "prune": prune,
                        "cache": cache,
                        "parallel": parallel,
                        "k": k,
                    }
                )
    rows.append({"method": "prompt_cache"})
    rows.append({"method": "attention_sort"})
    for kk in (1, 2, 4, 8):
        rows.append({"method": "ranked_chain", "k": kk})
    return rows


def build_plan(w: WorkloadSpec, variant: dict) -> CostPlan:
    method = variant["method"]
    if method == "naive":
        return naive_plan(w)
    if method == "superposition":
        return superposition_plan(
            w,
            prune=variant.get("prune", False),
            cache=variant.get("cache", False),
            parallel=variant.get("parallel", False),
            k=variant.get("k", 1),
            factor=variant.get("factor"),
        )
    if method == "prompt_cache":
        return prompt_cache_plan(w)
    if method == "attention_sort":
        return attention_sort_plan(w, variant.get("repeats", 3))
    if method == "ranked_chain":
        return ranked_chain_plan(w, variant.get("k", 1))
    raise ValueError(f"unknown cost variant {method!r}")


def variant_name(variant: dict) -> str:
    method = variant["method"]
    if method == "superposition":
        flags = "".join(
            ch if variant.get(key, False) else "-"
            for ch, key in (("P", "prune"), ("C", "cache"), ("L", "parallel"))
        )
        name = f"superposition[{flags}]"
        if variant.get("prune"):
            name += f" k={variant.get('k', 1)}"
        if variant.get("factor") is not None:
            name += f" factor={variant['factor']}"
        return name
    if method == "ranked_chain":
        return f"ranked_chain k={variant.get('k', 1)}"
    return method


def speedup_report(
    workload: WorkloadSpec,
    shape: ModelShape,
    variants: list[dict] | None = None,
) -> list[VariantRow]:
    """Cycles and speedup-vs-naive for each requested serving variant."""
    variants = standard_variants() if variants is None else variants
    if not any(v["method"] == "naive" for v in variants):
        variants = [{"method": "naive"}] + list(variants)
    baseline = compute_cycles(naive_plan(workload), shape)
    rows = []
    for variant in variants:
        cycles = compute_cycles(build_plan(workload, variant), shape)
        rows.append(VariantRow(variant_name(variant), cycles, baseline / cycles))
    return rows


def report_csv(rows: list[VariantRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["variant", "compute_cycles", "speedup"])
    for row in rows:
        writer.writerow([row.name, f"{row.cycles:.6g}", f"{row.speedup:.3f}"])
    return buf.getvalue()


def report_table(rows: list[VariantRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'variant'.ljust(width)}  {'cycles':>12}  {'speedup':>8}"]
    for row in rows:
        lines.append(f"{row.name.ljust(width)}  {row.cycles:12.4g}  {row.speedup:8.2f}")
    return "\n".join(lines)


def breakdown_table(workload: WorkloadSpec, shape: ModelShape, variant: dict) -> str:
    """Stage-by-stage cycle listing for one variant."""
    plan = build_plan(workload, variant)
    lines = [f"{variant_name(variant)}: stage breakdown"]
    for i, stage in enumerate(plan.stages):
        costs = [
            sum(0.0 if ev.cached else segment_macs(shape, ev.n_new, ev.n_ctx)
                for ev in branch)
            for branch in stage
        ]
        tokens = sum(ev.n_new for branch in stage for ev in branch)
        cached = all(ev.cached for branch in stage for ev in branch)
        tag = " (cached)" if cached else ""
        lines.append(
            f"  stage {i:3d}: branches={len(stage):3d} new_tokens={tokens:6.0f} "
            f"cycles={max(costs):12.4g}{tag}"
        )
    return "\n".join(lines)


# --- presets ----------------------------------------------------------------

def _load_data(name: str) -> dict:
    return json.loads(resources.files("superprompt.data").joinpath(name).read_text())


def load_shape(name_or_path: str) -> ModelShape:
    """Model shape from the bundled presets or a JSON file on disk."""
    presets = _load_data("shapes.json")
    if name_or_path in presets:
        rec = presets[name_or_path]
    else:
        rec = json.loads(Path(name_or_path).read_text())
    return ModelShape(
        param_count=rec["param_count"],
        layers=rec["layers"],
        d_model=rec["d_model"],
        heads=rec["heads"],
        head_dim=rec["head_dim"],
        vocab=rec["vocab"],
        position_scheme=rec["position_scheme"],
        kv_bytes=rec["kv_bytes"],
    )


def load_workload(name_or_path: str) -> WorkloadSpec:
    presets = _load_data("workloads.json")
    if name_or_path in presets:
        rec = presets[name_or_path]
    else:
        rec = json.loads(Path(name_or_path).read_text())
    return WorkloadSpec(
        preamble_len=rec["preamble_len"],
        doc_count=rec["doc_count"],
        doc_len_mean=rec.get("doc_len_mean", 0.0),
        doc_lens=rec.get("doc_lens"),
        doc_len_std=rec.get("doc_len_std", 0.0),
        query_len=rec["query_len"],
        postamble_len=rec["postamble_len"],
        response_len=rec.get("response_len", 0),
    )


def shape_preset_names() -> list[str]:
    return sorted(k for k in _load_data("shapes.json") if not k.startswith("_"))


def workload_preset_names() -> list[str]:
    return sorted(k for k in _load_data("workloads.json") if not k.startswith("_"))
