"""Pairwise caption scoring.

All scorers operate on captions represented as tuples of integer token ids
(markers such as BOS/EOS are never part of a caption).  Provided here:

* smoothed sentence-level BLEU-n,
* CIDEr-D on a unit scale with corpus document-frequency statistics,
* token-level Levenshtein distance,
* the semantic score ``semantic_delta`` (caption vs. reference set) and the
  syntactic dissimilarity ``syntactic_distance_d`` (caption vs. caption)
  consumed by the sequence-level training objectives.

Every function is pure and safe to call from multiple threads.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

Caption = tuple[int, ...]

MAX_NGRAM_ORDER = 4

# Width of the Gaussian length penalty in CIDEr-D.
CIDER_SIGMA = 6.0


def extract_ngrams(caption: Sequence[int], n: int) -> Counter:
    """Multiset of contiguous n-token windows of ``caption``.

    Returns an empty Counter when the caption is shorter than ``n``.
    """
    if not 1 <= n <= MAX_NGRAM_ORDER:
        raise ValueError(f"ngram order must be in 1..{MAX_NGRAM_ORDER}, got {n}")
    return Counter(tuple(caption[i : i + n]) for i in range(len(caption) - n + 1))


def sentence_bleu(candidate: Sequence[int], references: Sequence[Caption], max_order: int = 4) -> float:
    """Sentence-level BLEU of ``candidate`` against a multi-reference set.

    Geometric mean of the clipped modified n-gram precisions for
    n = 1..max_order, times the brevity penalty ``min(1, exp(1 - r/c))``
    where ``r`` is the reference length closest to the candidate length
    (ties broken toward the shorter reference).  Orders n >= 2 use add-one
    smoothing on both the match count and the candidate n-gram count, so a
    missing high-order match degrades the score instead of zeroing it.
    An empty candidate scores 0.
    """
    if not 1 <= max_order <= MAX_NGRAM_ORDER:
        raise ValueError(f"max_order must be in 1..{MAX_NGRAM_ORDER}, got {max_order}")
    if not references:
        raise ValueError("sentence_bleu needs at least one reference")
    cand = tuple(candidate)
    if not cand:
        return 0.0

    log_prec_sum = 0.0
    for n in range(1, max_order + 1):
        cand_counts = extract_ngrams(cand, n)
        max_ref_counts: Counter = Counter()
        for ref in references:
            for gram, count in extract_ngrams(ref, n).items():
                if count > max_ref_counts[gram]:
                    max_ref_counts[gram] = count
        matches = sum(min(count, max_ref_counts[gram]) for gram, count in cand_counts.items())
        total = sum(cand_counts.values())
        if n >= 2:
            matches += 1
            total += 1
        if matches == 0:
            return 0.0
        log_prec_sum += math.log(matches / total)

    c = len(cand)
    r = min((len(ref) for ref in references), key=lambda length: (abs(length - c), length))
    brevity = min(1.0, math.exp(1.0 - r / c))
    return brevity * math.exp(log_prec_sum / max_order)


@dataclass(frozen=True)
class DocFreqTable:
    """Corpus n-gram document frequencies backing CIDEr's TF-IDF weights.

    ``doc_freq[gram]`` counts the reference sets in which ``gram`` occurs at
    least once; absent n-grams have frequency 0.  Built once with
    :func:`build_doc_freq` and read-only afterwards.
    """

    doc_freq: Mapping[Caption, int]
    corpus_size: int

    def idf(self, gram: Caption) -> float:
        return math.log(self.corpus_size / max(1, self.doc_freq.get(gram, 0)))


def build_doc_freq(reference_corpus: Sequence[Sequence[Caption]]) -> DocFreqTable:
    """Count, per n-gram, the number of reference sets containing it."""
    if not reference_corpus:
        raise ValueError("reference corpus must be non-empty")
    doc_freq: Counter = Counter()
    for reference_set in reference_corpus:
        present = set()
        for ref in reference_set:
            for n in range(1, MAX_NGRAM_ORDER + 1):
                present.update(extract_ngrams(ref, n))
        doc_freq.update(present)
    return DocFreqTable(dict(doc_freq), len(reference_corpus))


def _tfidf_vectors(caption: Caption, df: DocFreqTable):
    """Per-order TF-IDF vectors (sparse dicts) and their Euclidean norms."""
    vectors = []
    norms = []
    for n in range(1, MAX_NGRAM_ORDER + 1):
        vec = {gram: count * df.idf(gram) for gram, count in extract_ngrams(caption, n).items()}
        vectors.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vectors, norms


def cider_d(candidate: Sequence[int], references: Sequence[Caption], df: DocFreqTable) -> float:
    """CIDEr-D similarity of a candidate to a reference set, on a unit scale.

    For each order n = 1..4 and each reference: cosine similarity between
    TF-IDF n-gram vectors with the candidate counts clipped at the reference
    counts, multiplied by the Gaussian length penalty
    ``exp(-(len(c) - len(r))^2 / (2 * sigma^2))`` with sigma = 6.  The result
    is the mean over orders of the mean over references; no x10 rescaling is
    applied, so a candidate identical to a reference scores 1 whenever every
    order contributes n-grams with positive IDF.
    """
    if not references:
        raise ValueError("cider_d needs at least one reference")
    cand = tuple(candidate)
    cand_vecs, cand_norms = _tfidf_vectors(cand, df)

    score = 0.0
    for ref in references:
        ref_vecs, ref_norms = _tfidf_vectors(tuple(ref), df)
        length_penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2.0 * CIDER_SIGMA**2))
        for n in range(MAX_NGRAM_ORDER):
            if cand_norms[n] == 0.0 or ref_norms[n] == 0.0:
                continue
            num = 0.0
            for gram, value in cand_vecs[n].items():
                ref_value = ref_vecs[n].get(gram, 0.0)
                num += min(value, ref_value) * ref_value
            score += (num / (cand_norms[n] * ref_norms[n])) * length_penalty
    score /= MAX_NGRAM_ORDER * len(references)
    return min(1.0, max(0.0, score))


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Token-level Levenshtein distance (unit-cost insert/delete/substitute)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, token_a in enumerate(a, start=1):
        current = [i]
        for j, token_b in enumerate(b, start=1):
            cost = previous[j - 1] + (token_a != token_b)
            current.append(min(cost, previous[j] + 1, current[j - 1] + 1))
        previous = current
    return previous[-1]


def syntactic_distance_d(y: Caption, y2: Caption) -> float:
    """Syntactic dissimilarity between two captions, in [0, 1].

    One minus the mean of the symmetrized BLEU-3 and BLEU-4 scores between
    the pair.  Symmetric by construction and exactly zero for identical
    captions.
    """
    # Pairwise grouping keeps the float sum bit-identical under argument swap.
    bleu3 = sentence_bleu(y, (y2,), 3) + sentence_bleu(y2, (y,), 3)
    bleu4 = sentence_bleu(y, (y2,), 4) + sentence_bleu(y2, (y,), 4)
    return 1.0 - (bleu3 + bleu4) / 4.0


def semantic_delta(y: Caption, refs: Sequence[Caption], df: DocFreqTable) -> float:
    """Semantic agreement of a caption with its ground-truth set (CIDEr-D)."""
    return cider_d(y, refs, df)
