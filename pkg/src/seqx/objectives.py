"""Training objectives and the two-phase training loop.

Four objectives are supported:

* ``xe``      word-level cross entropy against reference captions,
* ``sll``     sequence-level reward training (REINFORCE on the caption score
              with a greedy-decode baseline),
* ``sll-me``  ``sll`` plus per-step maximum-entropy regularization,
* ``sll-sle`` ``sll`` plus a sequence-level exploration term rewarding the
              pairwise syntactic distance between the sampled captions.

Sequence-level training minimizes a surrogate loss whose gradient, with the
per-sample weights held constant, equals the policy-gradient estimator: each
sampled caption contributes weight (1/s) * (alpha * a_prec + (1-alpha) *
a_div) on its negative log-likelihood, where a_prec is the caption score
minus the greedy-decode score and a_div is the (2/s)-scaled pairwise-distance
row sum centered by its batch mean.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import Caption, DocFreqTable, build_doc_freq, semantic_delta, syntactic_distance_d
from .model import (
    ModelDims,
    ModelParams,
    PARAM_FIELDS,
    Trace,
    Vocab,
    greedy_decode,
    init_params,
    sample_caption,
    sequence_log_prob,
    step_entropy,
    weighted_nll_grad,
    zero_params,
)

OBJECTIVES = ("xe", "sll", "sll-me", "sll-sle")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 5.0


class TrainingDivergedError(RuntimeError):
    """Raised when a non-finite loss or gradient shows up during training."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class TrainConfig:
    """Hyper-parameters of the training run; JSON keys match field names."""

    objective: str = "sll-sle"
    alpha: float = 0.75
    s: int = 5
    M: int = 6
    N: int = 10
    lr_xe: float = 5e-4
    lr_sll: float = 5e-5
    beta_me: float = 1e-2
    max_len: int = 12
    beam_width: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.objective == "sll-sle" and self.s < 2:
            raise ValueError("sll-sle needs at least 2 samples per input")
        if self.s < 1:
            raise ValueError(f"s must be >= 1, got {self.s}")
        if self.M > self.N:
            raise ValueError(f"M ({self.M}) must not exceed N ({self.N})")
        if self.M < 0:
            raise ValueError(f"M must be >= 0, got {self.M}")
        if self.lr_xe <= 0 or self.lr_sll <= 0:
            raise ValueError("learning rates must be positive")
        if self.beta_me < 0:
            raise ValueError(f"beta_me must be >= 0, got {self.beta_me}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("config document must be a JSON object")
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_json(Path(path).read_text())


@dataclass
class SampleBatch:
    """Everything the surrogate loss needs for one input.

    ``dist`` is the s x s matrix of pairwise syntactic distances between the
    sampled captions (symmetric, zero diagonal); ``deltas`` holds each
    sample's semantic score against the reference set and ``greedy_delta``
    the score of the greedily decoded caption.
    """

    input_id: str
    features: np.ndarray
    traces: list[Trace]
    deltas: np.ndarray
    dist: np.ndarray
    greedy_delta: float

    @property
    def s(self) -> int:
        return len(self.traces)


def make_sample_batch(
    input_id: str,
    features: np.ndarray,
    refs: Sequence[Caption],
    params: ModelParams,
    df: DocFreqTable,
    rng: np.random.Generator,
    s: int,
    max_len: int,
) -> SampleBatch:
    """Sample ``s`` captions for one input and score them for training."""
    traces = [sample_caption(features, params, rng, max_len) for _ in range(s)]
    deltas = np.array([semantic_delta(t.caption, refs, df) for t in traces])
    dist = np.zeros((s, s))
    for j in range(s):
        for k in range(j + 1, s):
            dist[j, k] = dist[k, j] = syntactic_distance_d(traces[j].caption, traces[k].caption)
    greedy = greedy_decode(features, params, max_len)
    greedy_delta = semantic_delta(greedy, refs, df) if greedy else 0.0
    return SampleBatch(input_id, features, traces, deltas, dist, greedy_delta)


def precision_advantage(batch: SampleBatch) -> np.ndarray:
    """Per-sample semantic score minus the greedy-decode baseline."""
    return batch.deltas - batch.greedy_delta


def diversity_advantage(batch: SampleBatch) -> np.ndarray:
    """Centered pairwise-distance reward, (2/s) * (row_sum - mean row_sum)."""
    row_sums = batch.dist.sum(axis=1)
    return (2.0 / batch.s) * (row_sums - row_sums.mean())


def gp_estimate(batch: SampleBatch) -> float:
    """Monte-Carlo estimate of the expected caption score (mean delta)."""
    return float(batch.deltas.mean())


def diversity_estimate(batch: SampleBatch) -> float:
    """Unbiased estimate of the expected pairwise distance.

    Off-diagonal mean of the distance matrix: the diagonal is structurally
    zero, so averaging over all s^2 entries would shrink the estimate by
    (s-1)/s.
    """
    s = batch.s
    if s < 2:
        raise ValueError("diversity estimate needs at least 2 samples")
    return float(batch.dist.sum() / (s * (s - 1)))


def surrogate_weights(batch: SampleBatch, config: TrainConfig, use_baseline: bool = True) -> np.ndarray:
    """Per-sample weights on -log p for the surrogate loss.

    With baselines, sample j carries (1/s) * (alpha * a_prec_j + (1-alpha) *
    a_div_j).  Without baselines the weights revert to the raw unbiased
    estimator: (alpha/s) * delta_j for the precision part and (1-alpha) *
    2/(s*(s-1)) * row_sum_j for the diversity part (the off-diagonal pair
    count replaces s^2 for the same reason as in :func:`diversity_estimate`).
    """
    alpha = 1.0 if config.objective in ("sll", "sll-me") else config.alpha
    s = batch.s
    if use_baseline:
        combined = alpha * precision_advantage(batch) + (1.0 - alpha) * diversity_advantage(batch)
        return combined / s
    precision = alpha * batch.deltas / s
    if alpha == 1.0:
        return precision
    diversity = (1.0 - alpha) * 2.0 * batch.dist.sum(axis=1) / (s * (s - 1))
    return precision + diversity


def surrogate_loss_grad(
    batch: SampleBatch,
    params: ModelParams,
    config: TrainConfig,
    use_baseline: bool = True,
) -> tuple[float, ModelParams]:
    """Surrogate loss and its exact gradient for one sampled batch.

    The loss is sum_j w_j * (-log p(caption_j)); its gradient is exactly
    ``weighted_nll_grad`` with the same constant weights.
    """
    weights = surrogate_weights(batch, config, use_baseline)
    loss = float(np.dot(weights, [-t.total_logprob for t in batch.traces]))
    items = [(batch.features, t.caption, w) for t, w in zip(batch.traces, weights)]
    grads = weighted_nll_grad(items, params, config.max_len)
    return loss, grads


def entropy_reg_grad(
    batch: SampleBatch, params: ModelParams, config: TrainConfig
) -> tuple[float, ModelParams]:
    """Maximum-entropy regularizer: loss term and gradient contribution.

    Adds -beta * (mean per-step entropy along each sampled caption),
    averaged over the batch, so minimizing the loss raises the policy's
    step-wise uncertainty.
    """
    beta = config.beta_me
    grads = zero_params(params.dims)
    loss = 0.0
    if beta == 0.0:
        return loss, grads
    scale_batch = 1.0 / batch.s
    for trace in batch.traces:
        entropies, entropy_grads = step_entropy(batch.features, trace.caption, params, config.max_len)
        per_step = 1.0 / len(entropies)
        loss += -beta * scale_batch * per_step * float(entropies.sum())
        _add_scaled(grads, entropy_grads, -beta * scale_batch * per_step)
    return loss, grads


def xe_loss_grad(
    features: np.ndarray, reference: Caption, params: ModelParams, max_len: int
) -> tuple[float, ModelParams]:
    """Teacher-forced negative log-likelihood of a reference and its gradient."""
    trace = sequence_log_prob(features, reference, params, max_len)
    grads = weighted_nll_grad([(features, reference, 1.0)], params, max_len)
    return -trace.total_logprob, grads


# ---------------------------------------------------------------------------
# Parameter-space helpers and the ADAM optimizer.


def _add_scaled(dst: ModelParams, src: ModelParams, scale: float) -> None:
    for name in PARAM_FIELDS:
        array = getattr(dst, name)
        array += scale * getattr(src, name)


def global_grad_norm(grads: ModelParams) -> float:
    total = 0.0
    for _, array in grads.arrays():
        total += float((array * array).sum())
    return float(np.sqrt(total))


def clip_grads(grads: ModelParams, max_norm: float = GRAD_CLIP_NORM) -> float:
    """Scale gradients in place to a global norm of at most ``max_norm``."""
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for _, array in grads.arrays():
            array *= scale
    return norm


@dataclass
class AdamState:
    """First/second-moment accumulators shaped like the parameters."""

    m: ModelParams
    v: ModelParams
    step: int = 0


def adam_init(dims: ModelDims) -> AdamState:
    return AdamState(m=zero_params(dims), v=zero_params(dims))


def adam_step(
    params: ModelParams, grads: ModelParams, state: AdamState, lr: float
) -> tuple[ModelParams, AdamState]:
    """One ADAM update with bias correction; rejects non-finite gradients."""
    for name, array in grads.arrays():
        if not np.isfinite(array).all():
            raise TrainingDivergedError(f"non-finite gradient in parameter group {name!r}")
    t = state.step + 1
    new_params = params.copy()
    new_m = state.m.copy()
    new_v = state.v.copy()
    correction1 = 1.0 - ADAM_BETA1**t
    correction2 = 1.0 - ADAM_BETA2**t
    for name in PARAM_FIELDS:
        g = getattr(grads, name)
        m = getattr(new_m, name)
        v = getattr(new_v, name)
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
        target = getattr(new_params, name)
        target -= lr * update
    return new_params, AdamState(m=new_m, v=new_v, step=t)


# ---------------------------------------------------------------------------
# The training loop.


@dataclass
class TrainInstance:
    """One training example: input features plus its reference caption set."""

    input_id: str
    features: np.ndarray
    refs: list[Caption]


@dataclass
class EpochLog:
    epoch: int
    phase: str
    mean_loss: float
    eval_cider: float
    wallclock_s: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _instance_rng(seed: int, epoch: int, input_id: str) -> np.random.Generator:
    # Independent, reproducible stream per (seed, input, epoch).
    return np.random.default_rng((seed, epoch, zlib.crc32(input_id.encode())))


def _update(
    params: ModelParams, grads: ModelParams, state: AdamState, lr: float, epoch: int
) -> tuple[ModelParams, AdamState]:
    try:
        return adam_step(params, grads, state, lr)
    except TrainingDivergedError as exc:
        raise TrainingDivergedError(f"{exc} at epoch {epoch}", epoch=epoch) from exc


def _mean_greedy_delta(
    instances: Sequence[TrainInstance], params: ModelParams, df: DocFreqTable, max_len: int
) -> float:
    scores = []
    for inst in instances:
        caption = greedy_decode(inst.features, params, max_len)
        scores.append(semantic_delta(caption, inst.refs, df) if caption else 0.0)
    return float(np.mean(scores)) if scores else float("nan")


def train(
    instances: Sequence[TrainInstance],
    vocab: Vocab,
    dims: ModelDims,
    config: TrainConfig,
    eval_instances: Sequence[TrainInstance] | None = None,
) -> tuple[ModelParams, list[EpochLog]]:
    """Run the two-phase schedule: cross-entropy warmup, then the
    sequence-level phase of the configured objective.

    Epochs [0, M) train on every (input, reference) pair with the XE loss;
    epochs [M, N) sample ``s`` captions per input, score them, and apply the
    surrogate loss (plus the entropy regularizer for ``sll-me``).  With
    objective ``xe`` every epoch stays in the XE phase.  When no evaluation
    split is supplied, the last ~10% of the dataset is held out for the
    per-epoch greedy-score figure and excluded from training.

    Fully deterministic for a fixed config: rng streams are derived from
    (seed, epoch, input id) and updates run in a seeded shuffled order.
    """
    config.validate()
    if not instances:
        raise ValueError("training set must be non-empty")
    if dims.vocab_size != vocab.size:
        raise ValueError(f"dims.vocab_size {dims.vocab_size} != vocabulary size {vocab.size}")

    if eval_instances is None:
        held_out = max(1, len(instances) // 10)
        if len(instances) > held_out:
            eval_instances = instances[-held_out:]
            instances = instances[:-held_out]
        else:
            eval_instances = instances

    for inst in instances:
        for ref in inst.refs:
            if len(ref) > config.max_len:
                raise ValueError(
                    f"reference of length {len(ref)} for input {inst.input_id!r} "
                    f"exceeds max_len {config.max_len}"
                )

    # CIDEr statistics for the whole run, frozen before any reward is computed.
    df = build_doc_freq([inst.refs for inst in instances])

    params = init_params(dims, config.seed)
    adam = adam_init(dims)
    logs: list[EpochLog] = []

    for epoch in range(config.N):
        start = time.perf_counter()
        xe_phase = epoch < config.M or config.objective == "xe"
        order_rng = np.random.default_rng((config.seed, epoch))
        order = order_rng.permutation(len(instances))
        losses: list[float] = []

        if xe_phase:
            for idx in order:
                inst = instances[idx]
                for ref in inst.refs:
                    loss, grads = xe_loss_grad(inst.features, ref, params, config.max_len)
                    if not np.isfinite(loss):
                        raise TrainingDivergedError(
                            f"non-finite XE loss at epoch {epoch}", epoch=epoch
                        )
                    clip_grads(grads)
                    params, adam = _update(params, grads, adam, config.lr_xe, epoch)
                    losses.append(loss)
        else:
            if epoch == config.M:
                adam = adam_init(dims)  # fresh optimizer for the new objective
            for idx in order:
                inst = instances[idx]
                rng = _instance_rng(config.seed, epoch, inst.input_id)
                batch = make_sample_batch(
                    inst.input_id, inst.features, inst.refs, params, df, rng, config.s, config.max_len
                )
                loss, grads = surrogate_loss_grad(batch, params, config)
                if config.objective == "sll-me":
                    ent_loss, ent_grads = entropy_reg_grad(batch, params, config)
                    loss += ent_loss
                    _add_scaled(grads, ent_grads, 1.0)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite surrogate loss at epoch {epoch}", epoch=epoch
                    )
                clip_grads(grads)
                params, adam = _update(params, grads, adam, config.lr_sll, epoch)
                losses.append(loss)

        logs.append(
            EpochLog(
                epoch=epoch,
                phase="xe" if xe_phase else config.objective,
                mean_loss=float(np.mean(losses)) if losses else 0.0,
                eval_cider=_mean_greedy_delta(eval_instances, params, df, config.max_len),
                wallclock_s=time.perf_counter() - start,
            )
        )
    return params, logs
