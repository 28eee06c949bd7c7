"""Segmented sequence-to-sequence modeling with anchor synchronization.

The package splits long inputs into question-prefixed segments, encodes
them in parallel, and lets designated anchor positions exchange
information inside each encoder layer. Baseline encoders (fusion
without sync, single truncated sequence, per-segment pseudo tokens),
synthetic diagnostic tasks, answer metrics, and an attention cost
model round out the toolkit.
"""

from .tensor import (
    AttentionOpCounter,
    AttentionParams,
    Tensor,
    count_attention_ops,
    cross_entropy,
    grad_check,
    layer_norm,
    multi_head_attention,
    softmax,
)
from .segmentation import (
    AnchorGroup,
    AnchorPlan,
    SegmentedInput,
    SyncSchema,
    Vocab,
    build_anchor_plan,
    build_pseudo_plan,
    build_segmented_input,
    split_context,
)
from .encoder import EncoderParams, FusedContext, encode, fuse
from .decoder import Seq2SeqModel, generate, train_step
from .optim import SGD, Adam, clip_grad_norm, warmup_cosine_lr
from .checkpoint import load_model, save_model
from .tasks import (
    MultihopConfig,
    NeighborConfig,
    QASample,
    audit_multihop,
    audit_neighbor,
    evaluate_answers,
    exact_match,
    gen_multihop_task,
    gen_neighbor_task,
    load_dataset,
    rouge_l,
    save_dataset,
    token_f1,
)
from .harness import (
    CostModel,
    ExperimentConfig,
    analytic_attention_entries,
    attention_cost,
    benchmark_time_per_token,
    compare_encoder_speed,
    count_attention_flops,
    prepare_input,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorGroup",
    "AnchorPlan",
    "AttentionOpCounter",
    "AttentionParams",
    "Adam",
    "CostModel",
    "EncoderParams",
    "ExperimentConfig",
    "FusedContext",
    "MultihopConfig",
    "NeighborConfig",
    "QASample",
    "SGD",
    "SegmentedInput",
    "Seq2SeqModel",
    "SyncSchema",
    "Tensor",
    "Vocab",
    "analytic_attention_entries",
    "attention_cost",
    "audit_multihop",
    "audit_neighbor",
    "benchmark_time_per_token",
    "build_anchor_plan",
    "build_pseudo_plan",
    "build_segmented_input",
    "clip_grad_norm",
    "compare_encoder_speed",
    "count_attention_flops",
    "count_attention_ops",
    "cross_entropy",
    "encode",
    "evaluate_answers",
    "exact_match",
    "fuse",
    "gen_multihop_task",
    "gen_neighbor_task",
    "generate",
    "grad_check",
    "layer_norm",
    "load_dataset",
    "load_model",
    "multi_head_attention",
    "prepare_input",
    "rouge_l",
    "run_experiment",
    "save_dataset",
    "save_model",
    "softmax",
    "split_context",
    "token_f1",
    "train_step",
    "warmup_cosine_lr",
    "__version__",
]
