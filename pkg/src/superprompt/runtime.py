"""Offline preprocessing and online serving over prompt graphs.

Preprocessing computes and persists the query-independent KV state: the
preamble cache, then one cache per document conditioned on the preamble.
Serving fans the query across all paths in one batched call, scores and
prunes paths, stitches the surviving caches together, and greedily decodes
the response.  Iterative serving repeats the superpose-score-prune cycle to
build a chain of selected documents for multi-hop questions.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import saliency as sal
from .cachestore import CacheRecord, CacheStore, cache_key
from .costmodel import segment_macs
from .errors import IterationBudgetExceeded, NoPathsSelected
from .graph import TokenSegment, build_fork_join, group_documents
from .model import KVCacheHandle, decode_tokens
from .positioning import arange_positions, fork_positions

SALIENCY_METRICS = ("bayesian", "attention", "none")


@dataclass
class ServingPlan:
    """Serving configuration; mirrors the JSON schema used by the CLI."""

    positioning: str = "equilibrium"
    saliency: str = "bayesian"
    top_k: int = 1
    factor: float | None = None  # None: fully split, one document per path
    iterations: int = 1
    use_cache: bool = True
    parallel_paths: bool = True
    prune: bool = True
    include_prior: bool = True
    posterior_threshold: float | None = None  # alternative to top-k
    max_new_tokens: int = 64

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.saliency not in SALIENCY_METRICS:
            raise ValueError(f"unknown saliency metric {self.saliency!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ServingPlan":
        return cls(**json.loads(text))


@dataclass
class ServingResult:
    response_tokens: tuple[int, ...]
    response_text: str
    scores: list[sal.PathScore]
    selected: list[int]  # concatenation order (ascending path index)
    selection_order: list[int]  # descending score order
    ledger: list[dict]
    cycles: float
    macs_total: float
    backend_calls: int
    elapsed_s: float
    sample_logits: np.ndarray | None = None  # (response, vocab), for oracles

    def to_json(self) -> str:
        doc = {
            "response_tokens": list(self.response_tokens),
            "response_text": self.response_text,
            "scores": [
                {
                    "path": s.path,
                    "query_term": s.query_term,
                    "prior_term": s.prior_term,
                    "score": s.score,
                    "posterior": s.posterior,
                }
                for s in self.scores
            ],
            "selected": self.selected,
            "selection_order": self.selection_order,
            "ledger": self.ledger,
            "cycles": self.cycles,
            "macs_total": self.macs_total,
            "backend_calls": self.backend_calls,
        }
        return json.dumps(doc, sort_keys=True)


@dataclass
class PreprocessResult:
    """Query-independent state: caches, positions, and per-document priors."""

    preamble: TokenSegment
    documents: list[TokenSegment]
    positioning: str
    preamble_cache: KVCacheHandle
    doc_caches: list[KVCacheHandle]
    doc_prior_terms: list[float]
    preamble_positions: np.ndarray
    doc_positions: list[np.ndarray]
    query_start: float
    backend_calls: int
    doc_logits: list[np.ndarray | None] = field(default_factory=list)


def _doc_prior(logits: np.ndarray, tokens: tuple[int, ...]) -> float:
    if len(tokens) < 2:
        return 0.0
    return -sal.shifted_cross_entropy(logits, tokens)


def _lookup(backend, store, ancestors, tokens, positions):
    """Store lookup; returns (record-or-None, key-or-None)."""
    if store is None:
        return None, None
    key = cache_key(backend.model_id, ancestors, tokens, positions)
    return store.get(key), key


def preprocess(
    backend,
    preamble: TokenSegment,
    documents: list[TokenSegment],
    positioning: str = "equilibrium",
    factor: float | None = None,
    store: CacheStore | None = None,
) -> PreprocessResult:
    """Compute (or restore) the preamble cache and per-document caches.

    Documents are first merged into superposition groups when ``factor`` is
    below the document count.  Each document cache is conditioned on the
    preamble cache; its prior term (mean log-likelihood per token) is kept in
    the record metadata so warm serving never recomputes document logits.
    """
    docs = group_documents(documents, len(documents) if factor is None else factor)
    fork = fork_positions(len(preamble), [len(d) for d in docs], positioning)

    calls = 0
    record, key = _lookup(backend, store, [], preamble.tokens, fork.preamble)
    if record is not None:
        p_handle = record.to_handle(record.metadata["fingerprint"])
    else:
        result = backend.extend([], preamble.tokens, fork.preamble)
        calls += 1
        p_handle = result.cache
        if store is not None and p_handle.keys is not None:
            store.put(key, CacheRecord.from_handle(
                p_handle, {"kind": "preamble", "fingerprint": p_handle.fingerprint}))

    p_stream = (preamble.tokens, fork.preamble)
    doc_caches: list[KVCacheHandle] = []
    doc_priors: list[float] = []
    doc_logits: list[np.ndarray | None] = []
    for doc, dpos in zip(docs, fork.docs):
        record, key = _lookup(backend, store, [p_stream], doc.tokens, dpos)
        if record is not None:
            handle = record.to_handle(record.metadata["fingerprint"])
            prior = record.metadata["prior_nats_per_token"]
            logits = None
        else:
            result = backend.extend([p_handle], doc.tokens, dpos)
            calls += 1
            handle, logits = result.cache, result.logits
            prior = _doc_prior(logits, doc.tokens)
            if store is not None and handle.keys is not None:
                store.put(key, CacheRecord.from_handle(handle, {
                    "kind": "document",
                    "fingerprint": handle.fingerprint,
                    "prior_nats_per_token": prior,
                }))
        doc_caches.append(handle)
        doc_priors.append(prior)
        doc_logits.append(logits)

    return PreprocessResult(
        preamble=preamble,
        documents=docs,
        positioning=positioning,
        preamble_cache=p_handle,
        doc_caches=doc_caches,
        doc_prior_terms=doc_priors,
        preamble_positions=fork.preamble,
        doc_positions=fork.docs,
        query_start=fork.query_start,
        backend_calls=calls,
        doc_logits=doc_logits,
    )


def _score_paths(plan: ServingPlan, query_results, query_tokens, prior_terms):
    if plan.saliency == "none":
        return sal.uniform_path_scores(len(query_results))
    if plan.saliency == "attention":
        # prefix parts are [preamble, document]; index 1 is the document mass
        summaries = [
            None if r.summary is None else float(r.summary[1]) for r in query_results
        ]
        return sal.attention_path_scores(summaries)
    return sal.bayesian_path_scores(
        doc_logits=[],
        doc_tokens=[],
        query_logits=[r.logits for r in query_results],
        query_tokens=query_tokens,
        include_prior=plan.include_prior,
        doc_prior_terms=prior_terms,
    )


def _select(plan: ServingPlan, scores) -> list[int]:
    if not plan.prune:
        return list(range(len(scores)))
    if plan.posterior_threshold is not None:
        return sal.threshold_paths(scores, plan.posterior_threshold)
    return sal.top_k_paths(scores, plan.top_k)


def _evaluate_query(backend, plan, prefixes, tokens, positions):
    want_summary = plan.saliency == "attention"
    if plan.parallel_paths:
        return backend.extend_batch(prefixes, tokens, positions, want_summary), 1
    results = [backend.extend(p, tokens, positions, want_summary) for p in prefixes]
    return results, len(prefixes)


class _Ledger:
    """Token/MAC accounting of the online stages of one serve call.

    Work done offline (preamble and step-1 document caches) appears as
    cached entries costing zero cycles.  A parallel stage contributes the
    max over its branches to ``cycles`` but the sum to ``macs_total``.
    """

    def __init__(self, shape):
        self.shape = shape
        self.entries: list[dict] = []
        self.cycles = 0.0
        self.macs_total = 0.0

    def serial(self, stage: str, n_new: int, n_ctx: float, cached: bool = False):
        macs = 0.0 if cached else segment_macs(self.shape, n_new, n_ctx)
        self.entries.append({
            "stage": stage, "n_new": n_new, "avg_ctx": round(n_ctx, 3),
            "branches": 1, "cached": cached, "macs": macs,
        })
        self.cycles += macs
        self.macs_total += macs

    def parallel(self, stage: str, branches: list[list[tuple[int, float]]]):
        """branches: per path, a list of (n_new, avg_ctx) evals run in series."""
        costs = [
            sum(segment_macs(self.shape, n, c) for n, c in branch)
            for branch in branches
        ]
        self.entries.append({
            "stage": stage,
            "n_new": sum(n for branch in branches for n, _ in branch),
            "avg_ctx": round(max(c for branch in branches for _, c in branch), 3),
            "branches": len(branches), "cached": False, "macs": sum(costs),
        })
        self.cycles += max(costs)
        self.macs_total += sum(costs)


def _ctx_avg(prefix_tokens: float, n_new: int) -> float:
    return prefix_tokens + (n_new + 1) / 2.0


def _decode_loop(backend, plan, prefix_parts, first_logits, next_pos, ledger, ctx_tokens):
    """Greedy decoding: argmax (ties to the lowest id), extend, repeat."""
    response: list[int] = []
    rows: list[np.ndarray] = []
    parts = list(prefix_parts)
    logits_row = first_logits[-1]
    calls = 0
    for step in range(plan.max_new_tokens):
        token = int(np.argmax(logits_row))
        response.append(token)
        rows.append(logits_row.copy())
        result = backend.extend(parts, (token,), arange_positions(next_pos + step, 1.0, 1))
        calls += 1
        ledger.serial("decode", 1, ctx_tokens + step + 1)
        parts.append(result.cache)
        logits_row = result.logits[-1]
        if token == backend.eos_token_id:
            break
    return tuple(response), np.asarray(rows), calls


def serve(
    backend,
    prep: PreprocessResult,
    query: TokenSegment,
    postamble: TokenSegment,
    plan: ServingPlan | None = None,
) -> ServingResult:
    """Answer one query over a preprocessed corpus.

    The query is evaluated over every path in one batched call (or a
    sequential sweep; the results are identical bit for bit), paths are
    scored and pruned, and the response is decoded from the surviving
    caches concatenated in ascending path order.
    """
    plan = plan or ServingPlan()
    t0 = time.perf_counter()
    graph, layout = build_fork_join(prep.preamble, prep.documents, query, postamble)
    ledger = _Ledger(backend.shape)

    p_len = len(prep.preamble)
    ledger.serial("preamble", p_len, _ctx_avg(0, p_len), cached=True)
    for doc in prep.documents:
        ledger.serial("document", len(doc), _ctx_avg(p_len, len(doc)), cached=True)

    q_pos = arange_positions(prep.query_start, 1.0, len(query))
    prefixes = [[prep.preamble_cache, d] for d in prep.doc_caches]
    query_results, calls = _evaluate_query(backend, plan, prefixes, query.tokens, q_pos)
    query_evals = [
        [(len(query), _ctx_avg(p_len + len(d), len(query)))] for d in prep.documents
    ]
    if plan.parallel_paths:
        ledger.parallel("query", query_evals)
    else:
        for (ev,) in query_evals:
            ledger.serial("query", *ev)

    scores = _score_paths(plan, query_results, query.tokens, prep.doc_prior_terms)
    selection_order = _select(plan, scores)
    if not selection_order:
        raise NoPathsSelected("selector returned no paths")
    selected = sorted(selection_order)

    parts: list[KVCacheHandle] = [prep.preamble_cache]
    for i in selected:
        parts.append(prep.doc_caches[i])
        parts.append(query_results[i].cache)

    t_start = q_pos[-1] + 1.0
    t_pos = arange_positions(t_start, 1.0, len(postamble))
    ctx_tokens = p_len + sum(len(prep.documents[i]) + len(query) for i in selected)
    post_result = backend.extend(parts, postamble.tokens, t_pos)
    calls += 1
    ledger.serial("postamble", len(postamble), _ctx_avg(ctx_tokens, len(postamble)))
    parts.append(post_result.cache)

    response, rows, decode_calls = _decode_loop(
        backend, plan, parts, post_result.logits,
        t_pos[-1] + 1.0, ledger, ctx_tokens + len(postamble),
    )
    return ServingResult(
        response_tokens=response,
        response_text=decode_tokens(response),
        scores=scores,
        selected=selected,
        selection_order=selection_order,
        ledger=ledger.entries,
        cycles=ledger.cycles,
        macs_total=ledger.macs_total,
        backend_calls=calls + decode_calls,
        elapsed_s=time.perf_counter() - t0,
        sample_logits=rows,
    )


def serve_iterative(
    backend,
    prep: PreprocessResult,
    query: TokenSegment,
    postamble: TokenSegment,
    plan: ServingPlan,
) -> ServingResult:
    """Multi-hop serving: superpose, prune to top-k, prepend, repeat.

    Each step evaluates the query against every document remaining in the
    pool (conditioned on the running prefix), keeps the top-k paths, and
    welds their document+query caches onto the prefix.  Selected documents
    leave the pool, so the t*k chosen documents are distinct.  Only step-1
    document caches can come from the offline store; later steps depend on
    dynamically chosen ancestors and are computed live.
    """
    t_steps, k = plan.iterations, plan.top_k
    n_docs = len(prep.documents)
    if t_steps * k > n_docs:
        raise IterationBudgetExceeded(f"t*k = {t_steps * k} exceeds {n_docs} documents")

    t0 = time.perf_counter()
    ledger = _Ledger(backend.shape)
    p_len = len(prep.preamble)
    ledger.serial("preamble", p_len, _ctx_avg(0, p_len), cached=True)

    pool = list(range(n_docs))
    parts: list[KVCacheHandle] = [prep.preamble_cache]
    prefix_end = float(prep.preamble_positions[-1])
    prefix_tokens = p_len
    calls = 0
    all_scores: list[sal.PathScore] = []
    chain: list[int] = []

    for step in range(t_steps):
        if step == 0:
            handles = {i: prep.doc_caches[i] for i in pool}
            priors = {i: prep.doc_prior_terms[i] for i in pool}
            query_start = prep.query_start
            for i in pool:
                ledger.serial("document", len(prep.documents[i]),
                              _ctx_avg(p_len, len(prep.documents[i])), cached=True)
        else:
            # a one-slot stub stands in for the prefix so branches start
            # at prefix_end + 1 with the usual span arithmetic
            fork = fork_positions(1, [len(prep.documents[i]) for i in pool],
                                  prep.positioning, start=prefix_end)
            handles, priors = {}, {}
            doc_evals = []
            for i, dpos in zip(pool, fork.docs):
                doc = prep.documents[i]
                result = backend.extend(parts, doc.tokens, dpos)
                calls += 1
                handles[i] = result.cache
                priors[i] = _doc_prior(result.logits, doc.tokens)
                doc_evals.append([(len(doc), _ctx_avg(prefix_tokens, len(doc)))])
            if plan.parallel_paths:
                ledger.parallel("document", doc_evals)
            else:
                for (ev,) in doc_evals:
                    ledger.serial("document", *ev)
            query_start = fork.query_start

        q_pos = arange_positions(query_start, 1.0, len(query))
        prefixes = [parts + [handles[i]] for i in pool]
        results, c = _evaluate_query(backend, plan, prefixes, query.tokens, q_pos)
        calls += c
        query_evals = [
            [(len(query), _ctx_avg(prefix_tokens + len(prep.documents[i]), len(query)))]
            for i in pool
        ]
        if plan.parallel_paths:
            ledger.parallel("query", query_evals)
        else:
            for (ev,) in query_evals:
                ledger.serial("query", *ev)

        scores = _score_paths(plan, results, query.tokens, [priors[i] for i in pool])
        # rebase local path indices onto document ids
        for ps, doc_id in zip(scores, pool):
            ps.path = doc_id
        all_scores.extend(scores)
        ranked = sorted(scores, key=lambda s: (-s.score, s.path))[: min(k, len(pool))]
        step_pick = sorted(s.path for s in ranked)

        for i in step_pick:
            parts.append(handles[i])
            parts.append(results[pool.index(i)].cache)
            prefix_tokens += len(prep.documents[i]) + len(query)
        chain.extend(step_pick)
        pool = [i for i in pool if i not in step_pick]
        prefix_end = float(q_pos[-1])

    t_pos = arange_positions(prefix_end + 1.0, 1.0, len(postamble))
    post_result = backend.extend(parts, postamble.tokens, t_pos)
    calls += 1
    ledger.serial("postamble", len(postamble), _ctx_avg(prefix_tokens, len(postamble)))
    parts.append(post_result.cache)

    response, rows, decode_calls = _decode_loop(
        backend, plan, parts, post_result.logits,
        t_pos[-1] + 1.0, ledger, prefix_tokens + len(postamble),
    )
    return ServingResult(
        response_tokens=response,
        response_text=decode_tokens(response),
        scores=all_scores,
        selected=chain,
        selection_order=chain,
        ledger=ledger.entries,
        cycles=ledger.cycles,
        macs_total=ledger.macs_total,
        backend_calls=calls + decode_calls,
        elapsed_s=time.perf_counter() - t0,
        sample_logits=rows,
    )
