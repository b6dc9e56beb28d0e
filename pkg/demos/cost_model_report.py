"""Walkthrough: the analytical compute-cycles model.

Reproduces the serving-cost structure for a 20-document QA workload on a
7B-class model: what caching, parallelism, and pruning each buy, and how
the superposition factor interpolates toward the classical chain.
"""

from superprompt import WorkloadSpec, compute_cycles, load_shape, load_workload
from superprompt.costmodel import (
    naive_plan,
    report_table,
    speedup_report,
    standard_variants,
    superposition_plan,
)

shape = load_shape("mpt-7b")
workload = load_workload("nq_like")

print("workload: 20 docs x ~143 tokens, preamble 30, query 20, postamble 5")
print(f"model   : {shape.param_count:.2g} params, {shape.layers} layers, "
      f"d_model {shape.d_model}\n")

rows = speedup_report(workload, shape, standard_variants(k=1))
print(report_table(rows))

naive = compute_cycles(naive_plan(workload), shape)
print("\nsuperposition factor sweep (parallelism on, no pruning):")
print(f"  {'factor':>6} {'paths':>5} {'cycles':>12} {'speedup':>8}")
for factor in (1, 2, 4, 5, 10, 20):
    cycles = compute_cycles(superposition_plan(workload, parallel=True, factor=factor),
                            shape)
    paths = -(-workload.doc_count // max(1, round(workload.doc_count / factor)))
    print(f"  {factor:6.0f} {paths:5d} {cycles:12.4g} {naive / cycles:8.2f}")

print("\nper-token KV memory (what offline caching costs):")
from superprompt import memory_estimate
for name in ("bloomz-3b", "bloomz-7b1", "mpt-7b", "openelm-3b"):
    per_tok = memory_estimate(load_shape(name), 1)
    print(f"  {name:12s} {per_tok / 1000:8.1f} KB/token")

print("\nscaling to a bigger corpus (100 docs) keeps the shape of the story:")
big = WorkloadSpec(preamble_len=30, doc_count=100, doc_len_mean=143,
                   query_len=20, postamble_len=5, response_len=5)
for label, kwargs in [("naive", None),
                      ("all optimizations (k=1)",
                       dict(prune=True, cache=True, parallel=True, k=1))]:
    plan = naive_plan(big) if kwargs is None else superposition_plan(big, **kwargs)
    print(f"  {label:24s} {compute_cycles(plan, shape):12.4g}")
