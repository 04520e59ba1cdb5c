"""Brute-force BLEU reference, independent of the library internals.

Plain dicts and explicit loops; geometric mean taken as a product root rather
than exp-of-mean-logs, so agreement with the library is evidence, not
tautology.
"""

import math


def _count(grams):
    d = {}
    for g in grams:
        d[g] = d.get(g, 0) + 1
    return d


def _grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def oracle_bleu(hyp_text, ref_texts, max_n=4):
    hyp = hyp_text.lower().split()
    refs = [r.lower().split() for r in ref_texts]
    c = len(hyp)
    if c == 0:
        return 0.0
    precisions = []
    for n in range(1, max_n + 1):
        hyp_counts = _count(_grams(hyp, n))
        total = sum(hyp_counts.values())
        if total == 0:
            continue
        clipped = 0
        for gram, count in hyp_counts.items():
            best = 0
            for ref in refs:
                best = max(best, _count(_grams(ref, n)).get(gram, 0))
            clipped += min(count, best)
        if clipped == 0 and n == 1:
            return 0.0
        precisions.append((clipped if clipped else 1e-9) / total)
    if not precisions:
        return 0.0
    geo = math.prod(precisions) ** (1.0 / len(precisions))
    best_r = None
    for ref in refs:
        L = len(ref)
        if best_r is None or (abs(L - c), L) < (abs(best_r - c), best_r):
            best_r = L
    brevity = 1.0 if c >= best_r else math.exp(1.0 - best_r / c)
    return 100.0 * brevity * geo


def oracle_self_bleu(completions, max_n=4):
    scores = []
    for i, hyp in enumerate(completions):
        refs = [r for j, r in enumerate(completions) if j != i]
        scores.append(oracle_bleu(hyp, refs, max_n))
    return sum(scores) / len(scores)
