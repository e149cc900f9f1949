"""ROUGE-1/2/L and novel n-gram proportions over token lists.

Tokens are compared as-is (callers case-fold); no stemming or stopword
removal.  ROUGE-L runs over the whole token list with a plain LCS.
"""
from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence


@dataclass
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "RougeScore":
        denom = precision + recall
        f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
        return cls(precision, recall, f1)


def ngram_counts(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[Hashable], reference: Sequence[Hashable], n: int) -> RougeScore:
    """Clipped n-gram overlap; empty n-gram sets zero the affected component."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand = ngram_counts(candidate, n)
    ref = ngram_counts(reference, n)
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    n_cand = sum(cand.values())
    n_ref = sum(ref.values())
    precision = overlap / n_cand if n_cand else 0.0
    recall = overlap / n_ref if n_ref else 0.0
    return RougeScore.from_pr(precision, recall)


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[Hashable], reference: Sequence[Hashable]) -> RougeScore:
    ell = lcs_length(candidate, reference)
    precision = ell / len(candidate) if candidate else 0.0
    recall = ell / len(reference) if reference else 0.0
    return RougeScore.from_pr(precision, recall)


def rouge_limited_recall(
    candidate: Sequence[Hashable], reference: Sequence[Hashable], variant: int | str
) -> RougeScore:
    """Truncate the candidate to the reference length, then score.

    ``variant`` is an n-gram order (1, 2, ...) or "L".  Candidates shorter
    than the reference are left as they are.  The recall field is the
    headline number under this protocol.
    """
    truncated = list(candidate[: len(reference)])
    if isinstance(variant, str):
        if variant.lower() != "l":
            raise ValueError(f"variant must be an integer order or 'L', got {variant!r}")
        return rouge_l(truncated, reference)
    return rouge_n(truncated, reference, variant)


def novel_ngram_proportion(summary: Sequence[Hashable], document: Sequence[Hashable], n: int) -> float:
    """Fraction of the summary's n-gram occurrences absent from the document."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    total = len(summary) - n + 1
    if total < 1:
        warnings.warn(f"summary shorter than n={n}; novel proportion reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    doc_grams = set(ngram_counts(document, n))
    novel = sum(1 for i in range(total) if tuple(summary[i : i + n]) not in doc_grams)
    return novel / total
