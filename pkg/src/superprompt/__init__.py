"""Superposition prompting engine for retrieval-augmented generation.

Prompts are DAGs of token segments with real-valued positions; serving
scores and prunes document paths, reuses cached KV state, and decodes from
the surviving paths.  A deterministic in-process reference transformer makes
every optimization checkable against a monolithic dense forward.
"""

from .backends import make_backend
from .cachestore import CacheRecord, CacheStore, cache_key, memory_estimate
from .costmodel import (
    CostPlan,
    SegmentEval,
    WorkloadSpec,
    compute_cycles,
    load_shape,
    load_workload,
    segment_macs,
    speedup_report,
)
from .graph import (
    ForkJoinLayout,
    PromptGraph,
    TokenSegment,
    build_chain,
    build_fork_join,
    group_documents,
    longest_path_tokens,
)
from .metrics import answer_em_f1, best_em_subspan, normalize_answer
from .model import (
    KVCacheHandle,
    ModelShape,
    ReferenceModel,
    concat_caches,
    decode_tokens,
    encode_text,
)
from .positioning import (
    PositionedGraph,
    arange_positions,
    assign_equilibrium,
    assign_left_aligned,
    assign_positions,
    harmonic_span,
    position_gap_stats,
)
from .runtime import (
    PreprocessResult,
    ServingPlan,
    ServingResult,
    preprocess,
    serve,
    serve_iterative,
)
from .saliency import (
    PathScore,
    attention_path_scores,
    bayesian_path_scores,
    shifted_cross_entropy,
    threshold_paths,
    top_k_paths,
)

__version__ = "0.1.0"

__all__ = [
    "CacheRecord", "CacheStore", "CostPlan", "ForkJoinLayout", "KVCacheHandle",
    "ModelShape", "PathScore", "PositionedGraph", "PreprocessResult",
    "PromptGraph", "ReferenceModel", "SegmentEval", "ServingPlan",
    "ServingResult", "TokenSegment", "WorkloadSpec", "answer_em_f1",
    "arange_positions", "assign_equilibrium", "assign_left_aligned",
    "assign_positions", "attention_path_scores", "bayesian_path_scores",
    "best_em_subspan", "build_chain", "build_fork_join", "cache_key",
    "compute_cycles", "concat_caches", "decode_tokens", "encode_text",
    "group_documents", "harmonic_span", "load_shape", "load_workload",
    "longest_path_tokens", "make_backend", "memory_estimate",
    "normalize_answer", "position_gap_stats", "preprocess", "segment_macs",
    "serve", "serve_iterative", "shifted_cross_entropy", "speedup_report",
    "threshold_paths", "top_k_paths",
]
