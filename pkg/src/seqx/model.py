"""Encoder-decoder captioning policy with exact gradients, in plain numpy.

The policy maps an input feature vector to a distribution over captions: a
fully connected projection initializes the hidden state of an LSTM decoder,
which emits one token per step through a softmax output layer.  The caption
space is kept finite and exactly normalized by construction:

* the BOS marker can never be emitted (its logit is masked),
* EOS is masked at the first step, so captions have length >= 1,
* after ``max_len`` content tokens EOS is forced with probability 1.

Under these rules the probabilities of all captions of length 1..max_len sum
to exactly 1, which makes exhaustive enumeration a usable ground truth for
the Monte-Carlo machinery built on top.

Everything runs in float64.  Parameters are immutable during decoding and
scoring; gradient computation builds fresh accumulators, so any number of
threads may decode concurrently against one parameter snapshot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .metrics import Caption

BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
BOS_ID = 0
EOS_ID = 1

MODEL_FORMAT = "seqx-model"
MODEL_VERSION = 1


class Vocab:
    """Token vocabulary with reserved BOS/EOS markers at indices 0 and 1."""

    def __init__(self, content_tokens: Sequence[str]):
        tokens = (BOS_TOKEN, EOS_TOKEN, *content_tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = tokens
        self._ids = {token: i for i, token in enumerate(tokens)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocab":
        """Build a vocabulary from whitespace-tokenized, lowercased text."""
        words = sorted({word for text in texts for word in text.lower().split()})
        return cls(words)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def content_ids(self) -> range:
        return range(2, len(self.tokens))

    def token_id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def encode(self, text: str) -> Caption:
        return tuple(self.token_id(word) for word in text.lower().split())

    def decode(self, caption: Sequence[int]) -> str:
        return " ".join(self.tokens[token] for token in caption)


@dataclass(frozen=True)
class ModelDims:
    feature_dim: int
    emb_dim: int
    hidden_dim: int
    vocab_size: int

    def __post_init__(self):
        for name, value in vars(self).items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.vocab_size < 3:
            raise ValueError("vocab must hold BOS, EOS and at least one content token")


PARAM_FIELDS = ("enc_w", "enc_b", "embed", "lstm_wx", "lstm_wh", "lstm_b", "out_w", "out_b")


@dataclass
class ModelParams:
    """All learnable parameters; also reused as the gradient container.

    Shapes (h = hidden_dim, e = emb_dim, f = feature_dim, V = vocab_size):
    enc_w (h, f), enc_b (h,), embed (V, e), lstm_wx (4h, e), lstm_wh (4h, h),
    lstm_b (4h,), out_w (V, h), out_b (V,).  LSTM gate rows are packed in the
    order input, forget, cell, output.
    """

    dims: ModelDims
    enc_w: np.ndarray
    enc_b: np.ndarray
    embed: np.ndarray
    lstm_wx: np.ndarray
    lstm_wh: np.ndarray
    lstm_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_FIELDS:
            yield name, getattr(self, name)

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, *(getattr(self, name).copy() for name in PARAM_FIELDS))


def init_params(dims: ModelDims, seed: int) -> ModelParams:
    """Seeded uniform initialization in [-0.08, 0.08]; biases start at zero."""
    rng = np.random.default_rng(seed)
    h, e, f, v = dims.hidden_dim, dims.emb_dim, dims.feature_dim, dims.vocab_size

    def weight(*shape):
        return rng.uniform(-0.08, 0.08, shape)

    return ModelParams(
        dims=dims,
        enc_w=weight(h, f),
        enc_b=np.zeros(h),
        embed=weight(v, e),
        lstm_wx=weight(4 * h, e),
        lstm_wh=weight(4 * h, h),
        lstm_b=np.zeros(4 * h),
        out_w=weight(v, h),
        out_b=np.zeros(v),
    )


def zero_params(dims: ModelDims) -> ModelParams:
    h, e, f, v = dims.hidden_dim, dims.emb_dim, dims.feature_dim, dims.vocab_size
    return ModelParams(
        dims=dims,
        enc_w=np.zeros((h, f)),
        enc_b=np.zeros(h),
        embed=np.zeros((v, e)),
        lstm_wx=np.zeros((4 * h, e)),
        lstm_wh=np.zeros((4 * h, h)),
        lstm_b=np.zeros(4 * h),
        out_w=np.zeros((v, h)),
        out_b=np.zeros(v),
    )


@dataclass
class DecoderState:
    hidden: np.ndarray
    cell: np.ndarray


@dataclass(frozen=True)
class Trace:
    """One caption with the log-probability of every emitted token.

    ``step_logprobs`` covers each content token and the terminal EOS; a
    forced EOS (caption already at max_len) contributes exactly 0.0.
    """

    caption: Caption
    step_logprobs: np.ndarray
    total_logprob: float


def _make_trace(caption: Caption, step_logprobs: list) -> Trace:
    array = np.asarray(step_logprobs, dtype=float)
    return Trace(caption, array, float(array.sum()))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Clipped for stability; |x| beyond 500 saturates in float64 anyway.
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def encode(features: np.ndarray, params: ModelParams) -> DecoderState:
    """Project input features into the decoder's initial state."""
    features = np.asarray(features, dtype=float)
    if features.shape != (params.dims.feature_dim,):
        raise ValueError(
            f"features must have shape ({params.dims.feature_dim},), got {features.shape}"
        )
    hidden = np.tanh(params.enc_w @ features + params.enc_b)
    return DecoderState(hidden=hidden, cell=np.zeros(params.dims.hidden_dim))


def decode_step(
    state: DecoderState, token_id: int, params: ModelParams
) -> tuple[np.ndarray, DecoderState]:
    """One LSTM step on the embedding of ``token_id``; returns raw logits."""
    if not 0 <= token_id < params.dims.vocab_size:
        raise ValueError(f"token id {token_id} outside vocabulary of size {params.dims.vocab_size}")
    cache = _lstm_step(params, token_id, state.hidden, state.cell)
    logits = params.out_w @ cache.h + params.out_b
    return logits, DecoderState(hidden=cache.h, cell=cache.c)


@dataclass
class _StepCache:
    x_id: int
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


def _lstm_step(params: ModelParams, x_id: int, h_prev: np.ndarray, c_prev: np.ndarray) -> _StepCache:
    hd = params.dims.hidden_dim
    z = params.lstm_wx @ params.embed[x_id] + params.lstm_wh @ h_prev + params.lstm_b
    i = _sigmoid(z[:hd])
    f = _sigmoid(z[hd : 2 * hd])
    g = np.tanh(z[2 * hd : 3 * hd])
    o = _sigmoid(z[3 * hd :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return _StepCache(x_id, h_prev, c_prev, i, f, g, o, c, tanh_c, h)


def _masked_log_probs(logits: np.ndarray, allow_eos: bool) -> np.ndarray:
    """Log-softmax over the emittable tokens; masked entries are -inf.

    BOS is never emittable; EOS only from the second step on.
    """
    masked = logits.astype(float, copy=True)
    masked[BOS_ID] = -np.inf
    if not allow_eos:
        masked[EOS_ID] = -np.inf
    top = masked.max()
    log_norm = top + np.log(np.exp(masked - top).sum())
    return masked - log_norm


def _validate_caption(caption: Sequence[int], dims: ModelDims, max_len: int) -> None:
    if not 1 <= len(caption) <= max_len:
        raise ValueError(f"caption length must be in 1..{max_len}, got {len(caption)}")
    for token in caption:
        if not 2 <= token < dims.vocab_size:
            raise ValueError(f"caption token {token} is not a content token id")


def _teacher_forced_steps(
    features: np.ndarray,
    caption: Caption,
    params: ModelParams,
    max_len: int,
    forced_eos: bool,
):
    """Roll the decoder along ``caption``; yields h0, step caches, targets.

    The terminal EOS step is included unless it is forced (caption already
    at max_len under the forced-EOS rule), in which case it costs nothing
    and produces no step.
    """
    _validate_caption(caption, params.dims, max_len)
    compute_eos = len(caption) < max_len or not forced_eos
    targets = list(caption) + ([EOS_ID] if compute_eos else [])
    inputs = [BOS_ID] + targets[:-1]

    h0 = encode(features, params).hidden
    h, c = h0, np.zeros(params.dims.hidden_dim)
    caches = []
    log_probs = []
    for t, (x_id, target) in enumerate(zip(inputs, targets)):
        cache = _lstm_step(params, x_id, h, c)
        logits = params.out_w @ cache.h + params.out_b
        step_lp = _masked_log_probs(logits, allow_eos=t >= 1)
        caches.append(cache)
        log_probs.append(step_lp)
        h, c = cache.h, cache.c
    return h0, caches, targets, log_probs, compute_eos


def sequence_log_prob(
    features: np.ndarray,
    caption: Caption,
    params: ModelParams,
    max_len: int,
    forced_eos: bool = True,
) -> Trace:
    """Exact log-probability of ``caption`` (terminal EOS included).

    With ``forced_eos`` (the normalized default) a caption of length max_len
    ends with a forced EOS whose log-probability is exactly 0.  Disabling it
    scores that EOS through the softmax instead, which deliberately breaks
    the sum-to-one property of the caption space.
    """
    _, _, targets, log_probs, compute_eos = _teacher_forced_steps(
        features, tuple(caption), params, max_len, forced_eos
    )
    steps = [float(lp[target]) for lp, target in zip(log_probs, targets)]
    if not compute_eos:
        steps.append(0.0)
    return _make_trace(tuple(caption), steps)


def sample_caption(
    features: np.ndarray, params: ModelParams, rng: np.random.Generator, max_len: int
) -> Trace:
    """Ancestral sample from the per-step softmax until EOS or max_len.

    The returned trace reproduces ``sequence_log_prob`` on the sampled
    caption bit for bit: both paths share the same step arithmetic.
    """
    state = encode(features, params)
    tokens: list[int] = []
    steps: list[float] = []
    x_id = BOS_ID
    for t in range(max_len):
        logits, state = decode_step(state, x_id, params)
        step_lp = _masked_log_probs(logits, allow_eos=t >= 1)
        probs = np.exp(step_lp)
        token = int(rng.choice(len(probs), p=probs / probs.sum()))
        steps.append(float(step_lp[token]))
        if token == EOS_ID:
            return _make_trace(tuple(tokens), steps)
        tokens.append(token)
        x_id = token
    steps.append(0.0)  # forced EOS at max_len
    return _make_trace(tuple(tokens), steps)


def greedy_decode(features: np.ndarray, params: ModelParams, max_len: int) -> Caption:
    """Argmax decoding; ties resolve to the lowest token id."""
    state = encode(features, params)
    tokens: list[int] = []
    x_id = BOS_ID
    for t in range(max_len):
        logits, state = decode_step(state, x_id, params)
        step_lp = _masked_log_probs(logits, allow_eos=t >= 1)
        token = int(np.argmax(step_lp))
        if token == EOS_ID:
            break
        tokens.append(token)
        x_id = token
    return tuple(tokens)


def beam_search(
    features: np.ndarray, params: ModelParams, width: int, max_len: int
) -> list[tuple[Caption, float]]:
    """Beam search over EOS-terminated captions, no length normalization.

    Finished hypotheses compete with live ones for the ``width`` beam slots,
    so width 1 reproduces greedy decoding exactly.  Returns up to ``width``
    completed captions with their total log-probabilities, best first; ties
    break lexicographically on the token sequence.
    """
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    # Hypothesis: (logprob, caption, decoder state or None, finished).
    beams: list[tuple[float, Caption, DecoderState | None, bool]] = [
        (0.0, (), encode(features, params), False)
    ]
    for t in range(max_len):
        candidates: list[tuple[float, Caption, DecoderState | None, bool]] = []
        for logprob, caption, state, finished in beams:
            if finished:
                candidates.append((logprob, caption, None, True))
                continue
            assert state is not None
            logits, next_state = decode_step(state, caption[-1] if caption else BOS_ID, params)
            step_lp = _masked_log_probs(logits, allow_eos=t >= 1)
            for token in np.flatnonzero(np.isfinite(step_lp)):
                token = int(token)
                if token == EOS_ID:
                    candidates.append((logprob + float(step_lp[token]), caption, None, True))
                else:
                    candidates.append(
                        (logprob + float(step_lp[token]), caption + (token,), next_state, False)
                    )
        candidates.sort(key=lambda hyp: (-hyp[0], hyp[1]))
        beams = candidates[:width]
        if all(finished for _, _, _, finished in beams):
            break
    # Any hypothesis still live carries max_len tokens; its EOS is forced at
    # zero cost, so it is complete as-is.
    return [(caption, logprob) for logprob, caption, _, _ in beams]


def weighted_nll_grad(
    items: Sequence[tuple[np.ndarray, Caption, float]],
    params: ModelParams,
    max_len: int,
    forced_eos: bool = True,
) -> ModelParams:
    """Exact gradient of ``sum_j w_j * (-log p(caption_j | features_j))``.

    Weights are treated as constants: no gradient flows through them.  Items
    with weight exactly 0 contribute nothing and are skipped.
    """
    grads = zero_params(params.dims)
    for features, caption, weight in items:
        if weight == 0.0:
            continue
        features = np.asarray(features, dtype=float)
        h0, caches, targets, log_probs, _ = _teacher_forced_steps(
            features, tuple(caption), params, max_len, forced_eos
        )
        dlogits_seq = []
        for step_lp, target in zip(log_probs, targets):
            dlogits = weight * np.exp(step_lp)  # exp(-inf) = 0 on masked entries
            dlogits[target] -= weight
            dlogits_seq.append(dlogits)
        _backward_steps(features, h0, caches, dlogits_seq, params, grads)
    return grads


def step_entropy(
    features: np.ndarray, prefix: Caption, params: ModelParams, max_len: int
) -> tuple[np.ndarray, ModelParams]:
    """Per-step softmax entropies along a teacher-forced prefix.

    Covers every stochastic decision the policy makes while emitting
    ``prefix``: the step producing each token plus the step that could emit
    the terminal EOS (absent when that EOS is forced at max_len).  Returns
    the entropies and the exact gradient of their sum.
    """
    features = np.asarray(features, dtype=float)
    h0, caches, _, log_probs, _ = _teacher_forced_steps(
        features, tuple(prefix), params, max_len, forced_eos=True
    )
    entropies = []
    dlogits_seq = []
    for step_lp in log_probs:
        probs = np.exp(step_lp)
        emittable = probs > 0.0
        entropy = -float(probs[emittable] @ step_lp[emittable])
        dlogits = np.zeros_like(probs)
        dlogits[emittable] = -probs[emittable] * (step_lp[emittable] + entropy)
        entropies.append(entropy)
        dlogits_seq.append(dlogits)
    grads = zero_params(params.dims)
    _backward_steps(features, h0, caches, dlogits_seq, params, grads)
    return np.asarray(entropies), grads


def _backward_steps(
    features: np.ndarray,
    h0: np.ndarray,
    caches: Sequence[_StepCache],
    dlogits_seq: Sequence[np.ndarray],
    params: ModelParams,
    grads: ModelParams,
) -> None:
    """Backpropagate per-step logit gradients through the LSTM and encoder."""
    hd = params.dims.hidden_dim
    dh_next = np.zeros(hd)
    dc_next = np.zeros(hd)
    for cache, dlogits in zip(reversed(caches), reversed(dlogits_seq)):
        grads.out_w += np.outer(dlogits, cache.h)
        grads.out_b += dlogits
        dh = params.out_w.T @ dlogits + dh_next

        do = dh * cache.tanh_c
        dc = dc_next + dh * cache.o * (1.0 - cache.tanh_c**2)
        di = dc * cache.g
        dg = dc * cache.i
        df = dc * cache.c_prev
        dc_next = dc * cache.f

        dz = np.concatenate(
            [
                di * cache.i * (1.0 - cache.i),
                df * cache.f * (1.0 - cache.f),
                dg * (1.0 - cache.g**2),
                do * cache.o * (1.0 - cache.o),
            ]
        )
        grads.lstm_wx += np.outer(dz, params.embed[cache.x_id])
        grads.lstm_wh += np.outer(dz, cache.h_prev)
        grads.lstm_b += dz
        grads.embed[cache.x_id] += params.lstm_wx.T @ dz
        dh_next = params.lstm_wh.T @ dz
    # The first step consumed the encoder state: h0 = tanh(enc_w @ x + enc_b).
    # The initial cell is a constant zero vector, so dc_next stops here.
    dpre = dh_next * (1.0 - h0**2)
    grads.enc_w += np.outer(dpre, features)
    grads.enc_b += dpre


def save_model(params: ModelParams, vocab: Vocab, path: str | Path) -> None:
    """Serialize parameters and vocabulary as JSON (full float precision)."""
    document = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dims": {
            "feature_dim": params.dims.feature_dim,
            "emb_dim": params.dims.emb_dim,
            "hidden_dim": params.dims.hidden_dim,
            "vocab_size": params.dims.vocab_size,
        },
        "vocab": list(vocab.tokens),
        "params": {name: array.tolist() for name, array in params.arrays()},
    }
    Path(path).write_text(json.dumps(document))


def load_model(path: str | Path) -> tuple[ModelParams, Vocab]:
    """Load a model saved by :func:`save_model`; round trip is bit-exact."""
    document = json.loads(Path(path).read_text())
    if document.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    if document.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {document.get('version')}")
    dims = ModelDims(**document["dims"])
    tokens = document["vocab"]
    if tokens[:2] != [BOS_TOKEN, EOS_TOKEN] or len(tokens) != dims.vocab_size:
        raise ValueError(f"{path}: vocabulary does not match dims header")
    vocab = Vocab(tokens[2:])
    arrays = {name: np.asarray(values, dtype=float) for name, values in document["params"].items()}
    params = ModelParams(dims=dims, **{name: arrays[name] for name in PARAM_FIELDS})
    expected_shapes = {name: array.shape for name, array in zero_params(dims).arrays()}
    for name, array in params.arrays():
        if array.shape != expected_shapes[name]:
            raise ValueError(
                f"{path}: parameter {name} has shape {array.shape}, expected {expected_shapes[name]}"
            )
    return params, vocab
