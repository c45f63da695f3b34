"""Corpus-level BLEU, ROUGE-L and CIDEr over tokenised captions."""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence, Union

from .tokenizer import normalize

Tokens = Sequence[str]
Item = tuple[Union[str, Tokens], Sequence[Union[str, Tokens]]]


def _toks(x) -> list[str]:
    return normalize(x) if isinstance(x, str) else list(x)


def as_corpus(corpus: Sequence[Item]) -> list[tuple[list[str], list[list[str]]]]:
    """Normalise ``(hypothesis, references)`` pairs to token lists, validating shape."""
    out = []
    for hyp, refs in corpus:
        if isinstance(refs, str):
            refs = [refs]
        refs = [_toks(r) for r in refs]
        if not refs:
            raise ValueError("every example needs at least one reference")
        out.append((_toks(hyp), refs))
    if not out:
        raise ValueError("empty corpus")
    return out


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ----------------------------------------------------------------------------
# BLEU


def modified_precision(hyp: Tokens, refs: Sequence[Tokens], n: int) -> tuple[int, int]:
    """(clipped matches, total hypothesis n-grams)."""
    counts = ngrams(hyp, n)
    max_ref: Counter = Counter()
    for r in refs:
        for g, c in ngrams(r, n).items():
            max_ref[g] = max(max_ref[g], c)
    return sum(min(c, max_ref[g]) for g, c in counts.items()), sum(counts.values())


def closest_ref_length(hyp_len: int, refs: Sequence[Tokens]) -> int:
    return min((abs(len(r) - hyp_len), len(r)) for r in refs)[1]


def bleu(corpus: Sequence[Item], n: int = 4) -> float:
    if n < 1:
        raise ValueError("BLEU order must be >= 1")
    data = as_corpus(corpus)
    matches, totals = [0] * n, [0] * n
    c = r = 0
    for hyp, refs in data:
        c += len(hyp)
        r += closest_ref_length(len(hyp), refs)
        for k in range(1, n + 1):
            m, t = modified_precision(hyp, refs, k)
            matches[k - 1] += m
            totals[k - 1] += t
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / n
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


# ----------------------------------------------------------------------------
# ROUGE-L


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_single(hyp: Tokens, refs: Sequence[Tokens], beta: float = 1.2) -> float:
    best = 0.0
    for ref in refs:
        lcs = lcs_length(hyp, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(hyp), lcs / len(ref)
        best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
    return best


def rouge_l(corpus: Sequence[Item], beta: float = 1.2) -> float:
    if beta <= 0:
        raise ValueError("beta must be positive")
    data = as_corpus(corpus)
    return sum(rouge_l_single(h, refs, beta) for h, refs in data) / len(data)


# ----------------------------------------------------------------------------
# CIDEr


def document_frequency(data, n: int = 4) -> Counter:
    """Number of examples whose reference set contains each 1..n-gram."""
    df: Counter = Counter()
    for _, refs in data:
        seen = set()
        for r in refs:
            for k in range(1, n + 1):
                seen.update(ngrams(r, k))
        df.update(seen)
    return df


def _tfidf(tokens: Tokens, k: int, df: Counter, n_docs: int) -> dict:
    counts = ngrams(tokens, k)
    total = sum(counts.values())
    return {g: (c / total) * math.log(n_docs / max(1.0, df[g])) for g, c in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    if a == b:
        return 1.0  # exact, where dot / (na * nb) can round below 1
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider_single(hyp: Tokens, refs: Sequence[Tokens], df: Counter, n_docs: int, n: int = 4) -> float:
    """CIDEr of one example given corpus document frequencies (range [0, 10])."""
    per_order = []
    for k in range(1, n + 1):
        hv = _tfidf(hyp, k, df, n_docs)
        per_order.append(sum(_cosine(hv, _tfidf(r, k, df, n_docs)) for r in refs) / len(refs))
    return 10.0 * sum(per_order) / n


def cider(corpus: Sequence[Item], n: int = 4) -> float:
    """Mean over examples of 10 x (mean over orders of mean reference cosine of TF-IDF vectors).

    IDF is ``log(N / df)`` with ``df`` floored at 1 for n-grams absent from
    every reference set. No length penalty.
    """
    data = as_corpus(corpus)
    if len(data) < 2:
        raise ValueError("CIDEr needs a corpus of at least two examples")
    df = document_frequency(data, n)
    return sum(cider_single(h, refs, df, len(data), n) for h, refs in data) / len(data)


def report(corpus: Sequence[Item]) -> dict[str, float]:
    """The metric set printed by the eval command."""
    out = {"BLEU-1": bleu(corpus, 1), "BLEU-4": bleu(corpus, 4), "ROUGE-L": rouge_l(corpus)}
    out["CIDEr"] = cider(corpus) if len(corpus) >= 2 else float("nan")
    return out
