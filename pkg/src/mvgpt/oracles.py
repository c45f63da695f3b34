"""Slow reference implementations used to cross-check the fast paths.

Nothing here shares code with :mod:`mvgpt.metrics` or the beam search.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def _grams(tokens, k):
    return [tuple(tokens[i : i + k]) for i in range(len(tokens) - k + 1)]


def _count(seq, item):
    return sum(1 for x in seq if x == item)


def bleu_bruteforce(corpus, n=4):
    """Corpus BLEU by explicit scanning, no hashing of n-gram counts."""
    match = [0] * n
    total = [0] * n
    c = r = 0
    for hyp, refs in corpus:
        c += len(hyp)
        best = None
        for ref in refs:
            key = (abs(len(ref) - len(hyp)), len(ref))
            if best is None or key < best:
                best = key
        r += best[1]
        for k in range(1, n + 1):
            hg = _grams(hyp, k)
            total[k - 1] += len(hg)
            for g in set(hg):
                cap = max(_count(_grams(ref, k), g) for ref in refs)
                match[k - 1] += min(_count(hg, g), cap)
    if c == 0 or 0 in match:
        return 0.0
    geo = math.exp(sum(math.log(m / t) for m, t in zip(match, total)) / n)
    return geo * (1.0 if c >= r else math.exp(1 - r / c))


def _is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def lcs_bruteforce(a, b):
    """Longest common subsequence by enumerating every subsequence of ``a``."""
    best = 0
    for mask in range(1 << len(a)):
        sub = [a[i] for i in range(len(a)) if mask >> i & 1]
        if len(sub) > best and _is_subsequence(sub, b):
            best = len(sub)
    return best


def rouge_l_bruteforce(corpus, beta=1.2):
    scores = []
    for hyp, refs in corpus:
        best = 0.0
        for ref in refs:
            lcs = lcs_bruteforce(hyp, ref)
            if lcs:
                p, r = lcs / len(hyp), lcs / len(ref)
                best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
        scores.append(best)
    return sum(scores) / len(scores)


def cider_dense(corpus, n=4):
    """CIDEr with dense numpy TF-IDF vectors over the full n-gram vocabulary."""
    N = len(corpus)
    total = 0.0
    per_example = np.zeros(N)
    for k in range(1, n + 1):
        vocab = sorted(
            {g for hyp, refs in corpus for s in [hyp, *refs] for g in _grams(s, k)}
        )
        index = {g: i for i, g in enumerate(vocab)}
        df = np.zeros(len(vocab))
        for _, refs in corpus:
            present = np.zeros(len(vocab), bool)
            for ref in refs:
                for g in _grams(ref, k):
                    present[index[g]] = True
            df += present
        idf = np.log(N / np.maximum(df, 1.0))

        def vec(s):
            v = np.zeros(len(vocab))
            grams = _grams(s, k)
            for g in grams:
                v[index[g]] += 1.0
            return v / max(len(grams), 1) * idf

        for e, (hyp, refs) in enumerate(corpus):
            hv = vec(hyp)
            sims = []
            for ref in refs:
                rv = vec(ref)
                denom = np.linalg.norm(hv) * np.linalg.norm(rv)
                sims.append(float(hv @ rv / denom) if denom > 0 else 0.0)
            per_example[e] += np.mean(sims)
    total = float(np.mean(per_example * 10.0 / n))
    return total


def exhaustive_best(step, bos, eos, vocab, max_len, length_alpha):
    """Best EOS-terminated sequence (BOS excluded) by enumerating all of them."""
    best_key, best_seq = None, None
    for length in range(1, max_len + 1):
        for body in itertools.product([t for t in range(vocab) if t != eos], repeat=length - 1):
            seq = (bos, *body, eos)
            score = 0.0
            for i in range(1, len(seq)):
                score += float(step([list(seq[:i])])[0][seq[i]])
            key = (-score / (length**length_alpha), seq)
            if best_key is None or key < best_key:
                best_key, best_seq = key, seq
    return list(best_seq[1:])
