"""Open-QA answer metrics: normalized subspan match, exact match, token F1."""

from __future__ import annotations

import re
import string
from collections import Counter

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = text.lower()
    text = text.translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def best_em_subspan(response: str, golds: list[str]) -> int:
    """1 iff any normalized gold answer appears inside the normalized response.

    A gold that normalizes to the empty string only matches an empty
    response (so an exact match always implies a subspan match).
    """
    norm = normalize_answer(response)
    for gold in golds:
        ng = normalize_answer(gold)
        if ng == norm or (ng and ng in norm):
            return 1
    return 0


def _token_f1(pred: str, gold: str) -> float:
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def answer_em_f1(response: str, golds: list[str]) -> tuple[int, float]:
    """Exact match against any gold, and the max token-overlap F1."""
    norm = normalize_answer(response)
    em = int(any(normalize_answer(g) == norm for g in golds))
    f1 = max((_token_f1(response, g) for g in golds), default=0.0)
    return em, f1
