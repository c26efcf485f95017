"""Answer metrics: ANLS, SQuAD-style exact match and token F1, accuracy."""

from __future__ import annotations

import re
import string
from collections import Counter
from typing import Callable, Iterable, Sequence

ANLS_THRESHOLD = 0.5


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over code points (two-row dynamic program)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _anls_norm(s: str) -> str:
    return " ".join(s.lower().split())


def nls(prediction: str, gold: str) -> float:
    """Normalized Levenshtein similarity of the ANLS-normalized strings."""
    p, g = _anls_norm(prediction), _anls_norm(gold)
    if not p and not g:
        return 1.0
    return 1.0 - levenshtein(p, g) / max(len(p), len(g))


def anls(prediction: str, golds: Sequence[str], threshold: float = ANLS_THRESHOLD) -> float:
    if not golds:
        raise ValueError("golds must be non-empty")
    best = 0.0
    for g in golds:
        s = nls(prediction, g)
        best = max(best, s if s >= threshold else 0.0)
    return best


_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(prediction: str, golds: Sequence[str]) -> float:
    if not golds:
        raise ValueError("golds must be non-empty")
    p = normalize_answer(prediction)
    return float(any(p == normalize_answer(g) for g in golds))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(prediction: str, golds: Sequence[str]) -> float:
    if not golds:
        raise ValueError("golds must be non-empty")
    p = normalize_answer(prediction).split()
    return max(_f1(p, normalize_answer(g).split()) for g in golds)


def accuracy(prediction: str, golds: Sequence[str]) -> float:
    """Case- and whitespace-insensitive string equality with any gold."""
    if not golds:
        raise ValueError("golds must be non-empty")
    p = _anls_norm(prediction)
    return float(any(p == _anls_norm(g) for g in golds))


METRICS: dict[str, Callable[[str, Sequence[str]], float]] = {
    "anls": anls,
    "em": exact_match,
    "f1": token_f1,
    "accuracy": accuracy,
}


def evaluate_dataset(records: Iterable[tuple[str, Sequence[str]]], metric_names: Sequence[str] = ("anls", "em", "f1")) -> dict:
    """Mean of each metric over ``(prediction, golds)`` records: ``{name: {mean, n}}``."""
    unknown = [m for m in metric_names if m not in METRICS]
    if unknown:
        raise KeyError(f"unknown metrics: {', '.join(unknown)}")
    sums = {m: 0.0 for m in metric_names}
    n = 0
    for prediction, golds in records:
        for m in metric_names:
            sums[m] += METRICS[m](prediction, golds)
        n += 1
    if n == 0:
        raise ValueError("cannot evaluate an empty record stream")
    return {m: {"mean": sums[m] / n, "n": n} for m in metric_names}
