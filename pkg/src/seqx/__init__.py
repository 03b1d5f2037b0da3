"""Desk-scale training and evaluation for diverse caption generation.

The package trains an encoder-decoder captioning policy with sequence-level
rewards and an optional sequence-level exploration term that rewards
syntactic spread between sampled captions, alongside plain cross-entropy and
maximum-entropy-regularized variants.  Caption metrics (BLEU, CIDEr-D, edit
distance), set-level diversity metrics (Div-1/Div-2/mBleu), an exact
enumeration oracle for verifying the Monte-Carlo estimators, and a synthetic
multi-reference benchmark with a CLI round out the toolkit.
"""

from .diversity import DiversityReport, div_n, diversity_report, mbleu
from .metrics import (
    Caption,
    DocFreqTable,
    build_doc_freq,
    cider_d,
    edit_distance,
    extract_ngrams,
    semantic_delta,
    sentence_bleu,
    syntactic_distance_d,
)
from .model import (
    BOS_ID,
    EOS_ID,
    DecoderState,
    ModelDims,
    ModelParams,
    Trace,
    Vocab,
    beam_search,
    decode_step,
    encode,
    greedy_decode,
    init_params,
    load_model,
    sample_caption,
    save_model,
    sequence_log_prob,
    step_entropy,
    weighted_nll_grad,
    zero_params,
)
from .objectives import (
    AdamState,
    EpochLog,
    SampleBatch,
    TrainConfig,
    TrainInstance,
    TrainingDivergedError,
    adam_init,
    adam_step,
    clip_grads,
    diversity_advantage,
    diversity_estimate,
    entropy_reg_grad,
    gp_estimate,
    make_sample_batch,
    precision_advantage,
    surrogate_loss_grad,
    surrogate_weights,
    train,
    xe_loss_grad,
)

__version__ = "0.1.0"
