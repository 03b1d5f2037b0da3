"""Exhaustive enumeration over tiny caption spaces.

On a vocabulary small enough to enumerate, every expectation the training
machinery estimates by sampling can be computed exactly: the expected caption
score, the expected pairwise distance between two independent samples, and
the exact gradients of both.  These functions are the ground truth against
which the Monte-Carlo estimators and their variance-reduction baselines are
checked.  They are test fixtures, not a training path: cost grows as the
square of the caption-space size.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .metrics import Caption, DocFreqTable, semantic_delta, syntactic_distance_d
from .model import ModelParams, Vocab, sequence_log_prob, weighted_nll_grad, zero_params

# Refuse to enumerate spaces whose longest slice alone exceeds this.
MAX_SPACE = 10**6


@dataclass(frozen=True)
class EnumeratedSpace:
    """Every caption of length 1..max_len with its exact model probability."""

    captions: list[Caption]
    log_probs: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class SpaceTables:
    """Parameter-independent scores over an enumerated space.

    ``deltas[i]`` is the semantic score of caption i against the reference
    set; ``dist[i, j]`` the pairwise syntactic distance.  Computing these
    once makes repeated objective evaluations (finite differencing, Monte-
    Carlo sweeps) cheap: only the probabilities depend on the parameters.
    """

    captions: list[Caption]
    deltas: np.ndarray
    dist: np.ndarray


def enumerate_captions(vocab: Vocab, max_len: int) -> list[Caption]:
    """All content-token sequences of length 1..max_len, lexicographic."""
    content = list(vocab.content_ids)
    if len(content) ** max_len > MAX_SPACE:
        raise ValueError(
            f"caption space too large to enumerate: {len(content)}^{max_len} > {MAX_SPACE}"
        )
    captions = []
    for length in range(1, max_len + 1):
        captions.extend(itertools.product(content, repeat=length))
    return sorted(captions)


def enumerate_space(
    features: np.ndarray,
    params: ModelParams,
    vocab: Vocab,
    max_len: int,
    forced_eos: bool = True,
) -> EnumeratedSpace:
    captions = enumerate_captions(vocab, max_len)
    log_probs = np.array(
        [
            sequence_log_prob(features, caption, params, max_len, forced_eos).total_logprob
            for caption in captions
        ]
    )
    return EnumeratedSpace(captions, log_probs)


def space_tables(refs: list[Caption], df: DocFreqTable, vocab: Vocab, max_len: int) -> SpaceTables:
    captions = enumerate_captions(vocab, max_len)
    deltas = np.array([semantic_delta(c, refs, df) for c in captions])
    n = len(captions)
    dist = np.zeros((n, n))
    for j in range(n):
        for k in range(j + 1, n):
            dist[j, k] = dist[k, j] = syntactic_distance_d(captions[j], captions[k])
    return SpaceTables(captions, deltas, dist)


def exact_gp(
    features: np.ndarray,
    refs: list[Caption],
    params: ModelParams,
    df: DocFreqTable,
    vocab: Vocab,
    max_len: int,
    tables: SpaceTables | None = None,
) -> float:
    """Exact expected caption score: sum over the space of delta(y) * p(y)."""
    if tables is None:
        tables = space_tables(refs, df, vocab, max_len)
    space = enumerate_space(features, params, vocab, max_len)
    return float(tables.deltas @ space.probabilities)


def exact_diversity(
    features: np.ndarray,
    params: ModelParams,
    vocab: Vocab,
    max_len: int,
    dist: np.ndarray | None = None,
) -> float:
    """Exact expected distance between two independent samples."""
    space = enumerate_space(features, params, vocab, max_len)
    if dist is None:
        captions = space.captions
        n = len(captions)
        dist = np.zeros((n, n))
        for j in range(n):
            for k in range(j + 1, n):
                dist[j, k] = dist[k, j] = syntactic_distance_d(captions[j], captions[k])
    probs = space.probabilities
    return float(probs @ dist @ probs)


def exact_objective(
    features: np.ndarray,
    refs: list[Caption],
    params: ModelParams,
    df: DocFreqTable,
    vocab: Vocab,
    max_len: int,
    alpha: float,
    tables: SpaceTables | None = None,
) -> float:
    """alpha-weighted sum of the exact score and diversity expectations.

    At alpha = 1 this is bit-for-bit equal to :func:`exact_gp`: the identical
    precision sum is formed and the diversity term vanishes exactly.
    """
    if tables is None:
        tables = space_tables(refs, df, vocab, max_len)
    probs = enumerate_space(features, params, vocab, max_len).probabilities
    precision = float(tables.deltas @ probs)
    diversity = float(probs @ tables.dist @ probs)
    return alpha * precision + (1.0 - alpha) * diversity


def exact_gradient(
    features: np.ndarray,
    refs: list[Caption],
    params: ModelParams,
    df: DocFreqTable,
    vocab: Vocab,
    max_len: int,
    alpha: float,
    tables: SpaceTables | None = None,
) -> ModelParams:
    """Exact gradient of the negated objective (the quantity training descends).

    Differentiating the two expectations turns each caption's contribution
    into a weight on grad(-log p(y)): alpha * delta(y) * p(y) for the score
    term and, for the diversity term, 2 * (1-alpha) * p(y) * sum_y' d(y, y')
    p(y') - the factor 2 collecting both occurrences of y in the symmetric
    double sum.
    """
    if tables is None:
        tables = space_tables(refs, df, vocab, max_len)
    probs = enumerate_space(features, params, vocab, max_len).probabilities
    weights = alpha * tables.deltas * probs + 2.0 * (1.0 - alpha) * probs * (tables.dist @ probs)
    items = [(features, caption, float(w)) for caption, w in zip(tables.captions, weights)]
    return weighted_nll_grad(items, params, max_len)


def score_function_identity_check(
    features: np.ndarray,
    params: ModelParams,
    vocab: Vocab,
    max_len: int,
    forced_eos: bool = True,
) -> float:
    """Max-norm of sum_y p(y) grad(log p(y)) over the enumerated space.

    Zero whenever the caption probabilities sum to one (the derivative of a
    constant), which is what makes any constant reward baseline gradient-
    neutral.  Disabling ``forced_eos`` breaks normalization and makes the
    returned value visibly non-zero.
    """
    space = enumerate_space(features, params, vocab, max_len, forced_eos)
    items = [
        (features, caption, float(p))
        for caption, p in zip(space.captions, space.probabilities)
    ]
    grads = weighted_nll_grad(items, params, max_len, forced_eos)
    return max(float(np.abs(array).max()) for _, array in grads.arrays())


def numeric_gradient(scalar_fn, params: ModelParams, step: float = 1e-5) -> ModelParams:
    """Central finite differences of ``scalar_fn`` over every parameter entry.

    The independent check for every analytic gradient in the package; only
    usable on models small enough that 2 * |params| evaluations are cheap.
    """
    grads = zero_params(params.dims)
    probe = params.copy()
    for name, array in probe.arrays():
        flat = array.reshape(-1)
        grad_flat = getattr(grads, name).reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            high = scalar_fn(probe)
            flat[i] = original - step
            low = scalar_fn(probe)
            flat[i] = original
            grad_flat[i] = (high - low) / (2.0 * step)
    return grads


def gradient_relative_errors(analytic: ModelParams, numeric: ModelParams) -> dict[str, float]:
    """Per parameter group: ||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    errors = {}
    for name, a in analytic.arrays():
        n = getattr(numeric, name)
        scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)))
        if scale < 1e-12:
            errors[name] = 0.0
        else:
            errors[name] = float(np.linalg.norm(a - n)) / scale
    return errors
