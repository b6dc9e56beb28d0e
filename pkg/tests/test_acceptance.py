"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one [PASS]/[FAIL] line (run with ``pytest -s`` to see them
inline).  All criteria run against the in-process reference model only.
"""

import random
import time
from contextlib import contextmanager

import numpy as np
import pytest

from superprompt.cachestore import CacheRecord, CacheStore, memory_estimate
from superprompt.costmodel import (
    compute_cycles,
    load_shape,
    load_workload,
    naive_plan,
    superposition_plan,
)
from superprompt.graph import TokenSegment, group_documents
from superprompt.metrics import answer_em_f1, best_em_subspan
from superprompt.model import CountingBackend, ReferenceModel
from superprompt.positioning import fork_positions, harmonic_span
from superprompt.runtime import ServingPlan, preprocess, serve, serve_iterative
from superprompt.saliency import PathScore, shifted_cross_entropy, top_k_paths

from conftest import random_fork_inputs, unit_positions


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {number}: {description}")
        raise
    print(f"[PASS] criterion {number}: {description}")


@pytest.fixture(scope="module")
def models():
    return {"alibi": ReferenceModel("alibi"), "rotary": ReferenceModel("rotary")}


def dense_greedy(model, tokens, positions, max_new):
    """Independent decoder: full recompute over the whole stream each step."""
    toks, pos = list(tokens), list(positions)
    out, rows = [], []
    for _ in range(max_new):
        res = model.extend([], tuple(toks), np.asarray(pos, dtype=np.float64))
        row = res.logits[-1]
        token = int(np.argmax(row))
        out.append(token)
        rows.append(row)
        toks.append(token)
        pos.append(pos[-1] + 1.0)
        if token == model.eos_token_id:
            break
    return tuple(out), np.asarray(rows)


def test_c1_chain_equivalence(models):
    with criterion(1, "segment-wise evaluation matches monolithic dense forward "
                      "(50 chains x 2 variants, <= 1e-5)"):
        start = time.perf_counter()
        rng = np.random.default_rng(101)
        for trial in range(50):
            total = int(rng.integers(8, 65))
            n_segments = int(rng.integers(2, 6))
            cuts = sorted(rng.choice(np.arange(1, total), size=n_segments - 1,
                                     replace=False).tolist())
            bounds = [0, *cuts, total]
            toks = tuple(int(t) for t in rng.integers(0, 256, total))
            for model in models.values():
                parts, blocks = [], []
                for lo, hi in zip(bounds, bounds[1:]):
                    res = model.extend(parts, toks[lo:hi], unit_positions(lo, hi - lo))
                    parts.append(res.cache)
                    blocks.append(res.logits)
                mono = model.extend([], toks, unit_positions(0, total))
                err = np.abs(np.concatenate(blocks) - mono.logits).max()
                assert err <= 1e-5, f"trial {trial}: max abs logit error {err}"
        assert time.perf_counter() - start < 60.0


def test_c2_classical_reduction(models):
    with criterion(2, "factor=1 + saliency=none reproduces the naive dense chain "
                      "(20 instances, <= 1e-5)"):
        rng = np.random.default_rng(202)
        for trial in range(20):
            model = models["alibi"] if trial % 2 == 0 else models["rotary"]
            p, docs, q, t = random_fork_inputs(rng, int(rng.integers(1, 7)), max_len=16)
            prep = preprocess(model, p, docs, factor=1)
            plan = ServingPlan(saliency="none", prune=False, max_new_tokens=4)
            result = serve(model, prep, q, t, plan)

            merged = group_documents(docs, 1)[0]
            stream = p.tokens + merged.tokens + q.tokens + t.tokens
            oracle_toks, oracle_rows = dense_greedy(
                model, stream, unit_positions(0, len(stream)), 4)
            assert result.response_tokens == oracle_toks
            err = np.abs(result.sample_logits[: len(oracle_toks)] - oracle_rows).max()
            assert err <= 1e-5, f"trial {trial}: decode logit error {err}"


def test_c3_equilibrium_positioning():
    with criterion(3, "equilibrium span and position vectors exact; equal lengths "
                      "give unit steps (100 instances)"):
        fork = fork_positions(4, [2, 3, 6], "equilibrium")
        assert harmonic_span([2, 3, 6]) == pytest.approx(3.0, abs=1e-12)
        assert fork.docs[0].tolist() == [4.0, 5.5]
        assert fork.docs[1].tolist() == [4.0, 5.0, 6.0]
        assert fork.docs[2].tolist() == [4.0, 4.5, 5.0, 5.5, 6.0, 6.5]
        assert fork.query_start == pytest.approx(7.5)

        rng = np.random.default_rng(303)
        for _ in range(100):
            length = int(rng.integers(1, 40))
            count = int(rng.integers(1, 10))
            p_len = int(rng.integers(1, 20))
            eq = fork_positions(p_len, [length] * count, "equilibrium")
            for pos in eq.docs:
                if len(pos) > 1:
                    assert np.allclose(np.diff(pos), 1.0, atol=1e-12)


def test_c4_bayesian_score_oracle(models):
    with criterion(4, "path scores match dense per-path forwards (20 instances, "
                      "<= 1e-5); posteriors normalized; shift-invariant top-k"):
        rng = np.random.default_rng(404)
        shift_rng = np.random.default_rng(405)
        for trial in range(20):
            model = models["alibi"] if trial % 2 == 0 else models["rotary"]
            p, docs, q, t = random_fork_inputs(rng, 3)
            prep = preprocess(model, p, docs)
            result = serve(model, prep, q, t, ServingPlan(top_k=1, max_new_tokens=1))

            fork = fork_positions(len(p), [len(d) for d in docs], "equilibrium")
            q_pos = unit_positions(fork.query_start, len(q))
            for i, doc in enumerate(docs):
                stream = p.tokens + doc.tokens + q.tokens
                pos = np.concatenate([fork.preamble, fork.docs[i], q_pos])
                dense = model.extend([], stream, pos)
                d_rows = dense.logits[len(p): len(p) + len(doc)]
                q_rows = dense.logits[len(p) + len(doc):]
                brute = -shifted_cross_entropy(q_rows, q.tokens) \
                    - shifted_cross_entropy(d_rows, doc.tokens)
                got = result.scores[i].score
                assert abs(got - brute) <= 1e-5, f"trial {trial} path {i}"

            assert abs(sum(s.posterior for s in result.scores) - 1.0) <= 1e-9
            base_top = top_k_paths(result.scores, 2)
            for _ in range(10):
                c = float(shift_rng.standard_normal() * 100)
                shifted = [PathScore(s.path, 0, 0, s.score + c) for s in result.scores]
                assert top_k_paths(shifted, 2) == base_top


def test_c5_cache_and_parallel_transparency(models, tmp_path):
    with criterion(5, "warm/cold cache and parallel/sequential evaluation yield "
                      "identical responses (20 instances); records byte-exact"):
        rng = np.random.default_rng(505)
        for trial in range(20):
            model = models["alibi"] if trial % 2 == 0 else models["rotary"]
            p, docs, q, t = random_fork_inputs(rng, int(rng.integers(2, 5)))
            store = CacheStore(tmp_path / f"case{trial}")
            plan = ServingPlan(top_k=2, max_new_tokens=5)

            cold = serve(model, preprocess(model, p, docs, store=store), q, t, plan)
            warm = serve(model, preprocess(model, p, docs, store=store), q, t, plan)
            assert cold.response_tokens == warm.response_tokens
            assert np.abs(warm.sample_logits - cold.sample_logits).max() <= 1e-6

            seq_plan = ServingPlan(top_k=2, max_new_tokens=5, parallel_paths=False)
            seq = serve(model, preprocess(model, p, docs), q, t, seq_plan)
            assert seq.response_tokens == cold.response_tokens

            for path in sorted((tmp_path / f"case{trial}").iterdir()):
                rec = CacheRecord.from_bytes(path.read_bytes())
                assert rec.to_bytes() == path.read_bytes()


def test_c6_cost_model_magnitudes():
    with criterion(6, "naive cycles ~2.16e13 (+-20%); caching 10.3x and parallelism "
                      "14.8x (+-30%); full k=1 in [50,150]; ordering exact"):
        start = time.perf_counter()
        shape = load_shape("mpt-7b")
        w = load_workload("nq_like")
        naive = compute_cycles(naive_plan(w), shape)
        assert abs(naive - 2.16e13) / 2.16e13 <= 0.20

        cache_only = compute_cycles(superposition_plan(w, cache=True), shape)
        par_only = compute_cycles(superposition_plan(w, parallel=True), shape)
        both = compute_cycles(superposition_plan(w, cache=True, parallel=True), shape)
        all3 = compute_cycles(
            superposition_plan(w, prune=True, cache=True, parallel=True, k=1), shape)

        assert abs(naive / cache_only - 10.3) / 10.3 <= 0.30
        assert abs(naive / par_only - 14.8) / 14.8 <= 0.30
        assert 50 <= naive / all3 <= 150
        assert naive > cache_only > par_only > both > all3
        assert time.perf_counter() - start < 1.0


def test_c7_memory_formula():
    with criterion(7, "KV bytes per token: bloomz-7b1-like preset gives 491,520 "
                      "(within 0.2% of 492 KB)"):
        per_token = memory_estimate(load_shape("bloomz-7b1"), 1)
        assert per_token == 491_520
        assert abs(per_token - 492_000) / 492_000 <= 0.002


def test_c8_metrics():
    with criterion(8, "15 pinned metric vectors pass; EM => subspan => F1>0 over "
                      "1,000 fuzzed pairs"):
        vectors = [
            ("It was filmed in British Columbia, Canada.", ["British Columbia"],
             1, 0, 4 / 9),
            ("unknown", ["Paris"], 0, 0, 0.0),
            ("The answer is PARIS!", ["paris"], 1, 0, 0.5),
            ("new york city", ["york city"], 1, 0, 0.8),
            ("Paris", ["Paris"], 1, 1, 1.0),
            ("paris.", ["Paris"], 1, 1, 1.0),
            ("The Paris", ["paris"], 1, 1, 1.0),
            ("an apple a day", ["apple day"], 1, 1, 1.0),
            ("", ["anything"], 0, 0, 0.0),
            ("completely disjoint words", ["other tokens"], 0, 0, 0.0),
            ("Edgar Allan Poe wrote it", ["Poe", "Edgar Allan Poe"], 1, 0, 0.75),
            ("poe", ["Poe", "Edgar Allan Poe"], 1, 1, 1.0),
            ("a b c d", ["b c"], 1, 0, 0.8),
            ("answer: 42", ["42"], 1, 0, 2 / 3),
            ("forty two", ["forty-two"], 0, 0, 0.0),
        ]
        assert len(vectors) == 15
        for response, golds, subspan, em, f1 in vectors:
            assert best_em_subspan(response, golds) == subspan, (response, golds)
            got_em, got_f1 = answer_em_f1(response, golds)
            assert got_em == em, (response, golds)
            assert got_f1 == pytest.approx(f1, abs=1e-9), (response, golds)

        # fixed-width words keep substring matches on token boundaries, the
        # regime where the implication chain is a theorem
        rng = random.Random(808)
        words = ["".join(rng.choice("abcdefgh") for _ in range(3)) for _ in range(60)]

        def phrase(k):
            out = []
            for _ in range(k):
                w = rng.choice(words)
                if rng.random() < 0.3:
                    w = w.upper()
                if rng.random() < 0.2:
                    w += ","
                if rng.random() < 0.1:
                    out.append(rng.choice(["the", "a", "an"]))
                out.append(w)
            return " ".join(out)

        for _ in range(1000):
            resp_words = [rng.choice(words) for _ in range(rng.randint(0, 8))]
            response = " ".join(resp_words)
            if resp_words and rng.random() < 0.5:
                lo = rng.randrange(len(resp_words))
                hi = rng.randint(lo + 1, len(resp_words))
                golds = [" ".join(resp_words[lo:hi])]
            else:
                golds = [phrase(rng.randint(1, 4)) or "xyz"]
            if rng.random() < 0.3:
                golds.append(phrase(rng.randint(1, 3)) or "xyz")
            em, f1 = answer_em_f1(response, golds)
            subspan = best_em_subspan(response, golds)
            if em == 1:
                assert subspan == 1, (response, golds)
            if subspan == 1:
                assert f1 > 0, (response, golds)


def test_c9_iterative_superposition(models, tmp_path):
    with criterion(9, "iterative serving: t=1 equals plain serve (10 instances); "
                      "selections distinct; call counts match the pool formula"):
        rng = np.random.default_rng(909)
        for trial in range(10):
            model = models["alibi"] if trial % 2 == 0 else models["rotary"]
            p, docs, q, t = random_fork_inputs(rng, int(rng.integers(2, 6)))
            prep = preprocess(model, p, docs)
            plan = ServingPlan(top_k=1, iterations=1, max_new_tokens=4)
            a = serve(model, prep, q, t, plan)
            b = serve_iterative(model, prep, q, t, plan)
            assert a.response_tokens == b.response_tokens
            assert sorted(a.selected) == sorted(b.selected)

        model = models["alibi"]
        rng2 = np.random.default_rng(910)
        p, docs, q, t = random_fork_inputs(rng2, 6)
        store = CacheStore(tmp_path / "iter")
        preprocess(model, p, docs, store=store)
        backend = CountingBackend(model)
        prep = preprocess(backend, p, docs, store=store)
        assert backend.counter.calls == 0

        t_steps, k, n = 3, 2, 6
        plan = ServingPlan(top_k=k, iterations=t_steps, max_new_tokens=4)
        result = serve_iterative(backend, prep, q, t, plan)

        assert len(result.selected) == t_steps * k
        assert len(set(result.selected)) == t_steps * k

        pool_sizes = [n - s * k for s in range(t_steps)]
        expected_calls = (
            t_steps                      # one batched query call per step
            + sum(pool_sizes[1:])        # live document extends after step 1
            + 1                          # postamble
            + len(result.response_tokens)
        )
        assert backend.counter.calls == expected_calls
        expected_path_evals = (
            sum(pool_sizes)              # query fan-out per step
            + sum(pool_sizes[1:])
            + 1
            + len(result.response_tokens)
        )
        assert backend.counter.path_evals == expected_path_evals
