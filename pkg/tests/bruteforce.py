"""Independent brute-force reimplementations of the caption metrics.

Deliberately written from scratch with different data structures and
evaluation order than the package code, so agreement between the two is
meaningful.  Used as oracles by the metric tests; kept free of any imports
from ``seqx``.
"""

import math


def ngram_list(tokens, n):
    out = []
    for start in range(0, len(tokens) - n + 1):
        out.append(tuple(tokens[start : start + n]))
    return out


def bleu_bruteforce(candidate, references, max_order):
    candidate = list(candidate)
    if len(candidate) == 0:
        return 0.0
    product = 1.0
    for n in range(1, max_order + 1):
        cand_grams = ngram_list(candidate, n)
        matched = 0
        for gram in set(cand_grams):
            best = 0
            for ref in references:
                count = ngram_list(list(ref), n).count(gram)
                if count > best:
                    best = count
            matched += min(cand_grams.count(gram), best)
        total = len(cand_grams)
        if n >= 2:
            matched += 1
            total += 1
        if matched == 0:
            return 0.0
        product *= matched / total
    length = len(candidate)
    closest = None
    for ref in references:
        r = len(ref)
        if (
            closest is None
            or abs(r - length) < abs(closest - length)
            or (abs(r - length) == abs(closest - length) and r < closest)
        ):
            closest = r
    if length >= closest:
        brevity = 1.0
    else:
        brevity = math.exp(1.0 - closest / length)
    return brevity * product ** (1.0 / max_order)


def doc_freq_bruteforce(corpus):
    """Per n-gram (n = 1..4), the number of reference sets containing it."""
    table = {}
    for reference_set in corpus:
        grams_here = set()
        for sentence in reference_set:
            for n in (1, 2, 3, 4):
                grams_here.update(ngram_list(list(sentence), n))
        for gram in grams_here:
            table[gram] = table.get(gram, 0) + 1
    return table


def cider_d_bruteforce(candidate, references, corpus):
    """CIDEr-D on a unit scale, document frequencies recounted from scratch."""
    table = doc_freq_bruteforce(corpus)
    num_sets = len(corpus)

    def tfidf(tokens, n):
        counts = {}
        for gram in ngram_list(list(tokens), n):
            counts[gram] = counts.get(gram, 0) + 1
        return {
            gram: tf * (math.log(num_sets) - math.log(max(1, table.get(gram, 0))))
            for gram, tf in counts.items()
        }

    candidate = list(candidate)
    total = 0.0
    for ref in references:
        penalty = math.exp(-((len(candidate) - len(ref)) ** 2) / (2.0 * 6.0**2))
        for n in (1, 2, 3, 4):
            cand_vec = tfidf(candidate, n)
            ref_vec = tfidf(list(ref), n)
            cand_norm = math.sqrt(sum(v * v for v in cand_vec.values()))
            ref_norm = math.sqrt(sum(v * v for v in ref_vec.values()))
            if cand_norm == 0.0 or ref_norm == 0.0:
                continue
            dot = 0.0
            for gram, value in cand_vec.items():
                other = ref_vec.get(gram, 0.0)
                dot += min(value, other) * other
            total += dot / (cand_norm * ref_norm) * penalty
    score = total / (4 * len(references))
    return min(1.0, max(0.0, score))


def edit_distance_bruteforce(a, b):
    """Full-matrix Levenshtein dynamic program."""
    rows, cols = len(a) + 1, len(b) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        table[i][0] = i
    for j in range(cols):
        table[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            substitute = table[i - 1][j - 1] + (a[i - 1] != b[j - 1])
            table[i][j] = min(substitute, table[i - 1][j] + 1, table[i][j - 1] + 1)
    return table[-1][-1]


def div_n_bruteforce(captions, n):
    seen = set()
    words = 0
    for caption in captions:
        words += len(caption)
        for gram in ngram_list(list(caption), n):
            seen.add(gram)
    return len(seen) / words


def mbleu_bruteforce(captions, order):
    total = 0.0
    for i in range(len(captions)):
        rest = [captions[j] for j in range(len(captions)) if j != i]
        total += bleu_bruteforce(captions[i], rest, order)
    return total / len(captions)
