"""Set-level diversity metrics over captions generated for one input.

Div-1 and Div-2 count distinct n-grams relative to the total word count of
the set (higher means more diverse); mBleu scores each caption against the
remaining ones (lower means more diverse).  Together they act as a proxy for
how much of the space of plausible captions a model covers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .metrics import Caption, extract_ngrams, sentence_bleu


@dataclass(frozen=True)
class DiversityReport:
    div1: float
    div2: float
    mbleu4: float


def _check_set(captions: Sequence[Caption]) -> None:
    if len(captions) < 2:
        raise ValueError("diversity metrics need at least 2 captions")


def div_n(captions: Sequence[Caption], n: int) -> float:
    """Distinct n-grams across the set divided by its total word count."""
    _check_set(captions)
    if n not in (1, 2):
        raise ValueError(f"div_n is defined for n in (1, 2), got {n}")
    distinct = set()
    total_words = 0
    for caption in captions:
        distinct.update(extract_ngrams(caption, n))
        total_words += len(caption)
    return len(distinct) / total_words


def mbleu(captions: Sequence[Caption], order: int = 4) -> float:
    """Mean BLEU of each caption against the other members of the set."""
    _check_set(captions)
    scores = []
    for i, caption in enumerate(captions):
        rest = [c for j, c in enumerate(captions) if j != i]
        scores.append(sentence_bleu(caption, rest, order))
    return sum(scores) / len(scores)


def diversity_report(captions: Sequence[Caption]) -> DiversityReport:
    """Bundle Div-1, Div-2 and mBleu-4 for one caption set."""
    return DiversityReport(
        div1=div_n(captions, 1),
        div2=div_n(captions, 2),
        mbleu4=mbleu(captions, 4),
    )
