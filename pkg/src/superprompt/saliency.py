"""Per-path saliency scores, softmax posteriors, and path selection.

A path's saliency estimates how relevant its document is to the query.  The
default score applies Bayes' rule to language-model likelihoods: the log
probability of the query given the document (plus, optionally, a document
prior), each normalized to nats per predicted token so short documents are
not favored.  The normalizing constant of the posterior never needs to be
materialized because scores are only compared after a softmax.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from .errors import SegmentTooShort, SummariesUnavailable

METRICS = ("bayesian", "attention", "none")


@dataclass
class PathScore:
    path: int
    query_term: float  # nats per predicted query token
    prior_term: float  # nats per predicted document token (0 when disabled)
    score: float
    posterior: float = 0.0


def shifted_cross_entropy(logits: np.ndarray, tokens) -> float:
    """Mean nats per predicted token under next-token prediction.

    Row t-1 of the logit block predicts token t, so the first token and the
    last logit row are discarded.
    """
    tokens = [int(t) for t in tokens]
    n = len(tokens)
    if logits.shape[0] != n:
        raise ValueError("logit rows must equal token count")
    if n < 2:
        raise SegmentTooShort("need at least 2 tokens for a shifted prediction")
    logp = log_softmax(np.asarray(logits, dtype=np.float64), axis=-1)
    picked = logp[np.arange(n - 1), tokens[1:]]
    return float(-picked.mean())


def _softmax_posteriors(scores: list[float]) -> list[float]:
    arr = np.asarray(scores, dtype=np.float64)
    arr = arr - arr.max()
    w = np.exp(arr)
    return list(w / w.sum())


def bayesian_path_scores(
    doc_logits: list[np.ndarray],
    doc_tokens: list,
    query_logits: list[np.ndarray],
    query_tokens,
    include_prior: bool = True,
    doc_prior_terms: list[float] | None = None,
) -> list[PathScore]:
    """Bayes-rule path saliency from per-path logit blocks.

    score_i = -H(query logits_i, query) [+ -H(doc logits_i, doc_i)] with H
    the shifted cross-entropy in nats per predicted token.  The preamble
    likelihood is identical across paths and is dropped: it cannot move the
    softmax posterior or any top-k decision.

    ``doc_prior_terms`` supplies precomputed -H(doc)/len values (e.g. from a
    warm cache) in place of ``doc_logits``.
    """
    n = len(query_logits)
    query_scorable = len(query_tokens) >= 2
    if not query_scorable:
        warnings.warn("query too short for a shifted prediction; scoring with prior only")
    scores: list[PathScore] = []
    for i in range(n):
        if not query_scorable:
            qterm = 0.0
        else:
            qterm = -shifted_cross_entropy(query_logits[i], query_tokens)
        pterm = 0.0
        if include_prior:
            if doc_prior_terms is not None:
                pterm = doc_prior_terms[i]
            else:
                pterm = -shifted_cross_entropy(doc_logits[i], doc_tokens[i])
        scores.append(PathScore(i, qterm, pterm, qterm + pterm))
    for ps, post in zip(scores, _softmax_posteriors([s.score for s in scores])):
        ps.posterior = post
    return scores


def printed_form_path_scores(
    doc_logits: list[np.ndarray],
    doc_tokens: list,
    preamble_logits: np.ndarray,
    preamble_tokens,
) -> list[PathScore]:
    """The literal printed scoring variant (document and preamble terms,
    each wrapped in an extra log), kept behind this separate entry point for
    comparison.  The default ``bayesian_path_scores`` is the Bayes-faithful
    form; this one ranks by log of the document perplexity instead and is
    not shift-invariant.
    """
    n_p = len(preamble_tokens)
    pre_sum = shifted_cross_entropy(preamble_logits, preamble_tokens) * (n_p - 1)
    scores: list[PathScore] = []
    for i, (dl, dt) in enumerate(zip(doc_logits, doc_tokens)):
        doc_sum = shifted_cross_entropy(dl, dt) * (len(dt) - 1)
        s = math.log(doc_sum) / len(dt) + math.log(pre_sum) / n_p
        scores.append(PathScore(i, 0.0, s, s))
    for ps, post in zip(scores, _softmax_posteriors([s.score for s in scores])):
        ps.posterior = post
    return scores


def attention_path_scores(summaries: list[float | None]) -> list[PathScore]:
    """Saliency from attention mass: mean attention the query tokens put on
    each path's document keys, averaged over layers and heads.  Mass on the
    shared preamble is common-mode and excluded.
    """
    if any(s is None for s in summaries):
        raise SummariesUnavailable("backend did not expose attention summaries")
    scores = [PathScore(i, 0.0, 0.0, float(s)) for i, s in enumerate(summaries)]
    for ps, post in zip(scores, _softmax_posteriors([s.score for s in scores])):
        ps.posterior = post
    return scores


def uniform_path_scores(n_paths: int) -> list[PathScore]:
    """The no-pruning control: every path equally salient."""
    scores = [PathScore(i, 0.0, 0.0, 0.0, 1.0 / n_paths) for i in range(n_paths)]
    return scores


def top_k_paths(scores: list[PathScore], k: int) -> list[int]:
    """Indices of the min(k, n) highest scores, in descending score order.

    Ties break toward the lower path index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(scores, key=lambda s: (-s.score, s.path))
    return [s.path for s in ranked[: min(k, len(scores))]]


def threshold_paths(scores: list[PathScore], tau: float) -> list[int]:
    """Paths with posterior >= tau, descending score; never empty."""
    kept = [s for s in scores if s.posterior >= tau]
    if not kept:
        kept = [max(scores, key=lambda s: (s.posterior, -s.path))]
    kept.sort(key=lambda s: (-s.score, s.path))
    return [s.path for s in kept]
