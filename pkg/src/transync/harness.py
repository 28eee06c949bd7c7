"""Experiment driver: cost model, benchmarks, training runs, reports.

The analytic cost model mirrors the quadratic attention arithmetic of
segmented versus concatenated encoding and is kept in exact rational
form. Instrumented counters from the attention kernels validate it
integer-for-integer. The experiment runner trains one configuration,
evaluates greedy decoding on held-out data, and writes deterministic
JSON artifacts; wall-clock numbers live in a sidecar so the main
report stays byte-stable for identical config and seed.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .decoder import Seq2SeqModel, generate, train_step
from .encoder import EncoderParams, encode, fuse
from .optim import Adam, warmup_cosine_lr
from .segmentation import (
    AnchorPlan,
    SegmentedInput,
    Sentence,
    SyncSchema,
    Vocab,
    build_anchor_plan,
    build_pseudo_plan,
    build_segmented_input,
    split_context,
    tokenize,
)
from .tasks import (
    NeighborConfig,
    PRESETS,
    QASample,
    audit_multihop,
    audit_neighbor,
    evaluate_answers,
    gen_multihop_task,
    gen_neighbor_task,
)
from .tensor import count_attention_ops

__all__ = [
    "BASELINES",
    "CostModel",
    "ExperimentConfig",
    "analytic_attention_entries",
    "attention_cost",
    "benchmark_time_per_token",
    "build_bench_input",
    "compare_encoder_speed",
    "count_attention_flops",
    "hardware_descriptor",
    "prepare_input",
    "run_experiment",
    "sync_groups_per_layer",
]

BASELINES = ("TranSync", "FiD", "LongConcat", "FiDPseudoToken")


# -- analytic cost model -------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Question length (separator included), context length, segments."""

    l_q: int
    l_c: int
    n: int

    def __post_init__(self):
        if self.l_q <= 0 or self.l_c <= 0 or self.n <= 0:
            raise ValueError("l_q, l_c, n must all be positive")
        if self.n > self.l_c:
            raise ValueError("cannot split l_c tokens into more than l_c segments")


def sync_groups_per_layer(schema: Optional[SyncSchema],
                          pseudo: bool = False) -> int:
    """Anchor groups a sync layer runs; each scores an n-by-n matrix."""
    if pseudo:
        return 1
    if schema is None or schema.is_none:
        return 0
    if schema.variant == "title_anchors":
        return 2 if schema.include_sep_group else 1
    return 1


def attention_cost(cost: CostModel, sync_groups: int = 0,
                   sync_layers: int = 0) -> dict:
    """Per-layer attention score entries, exact rational arithmetic.

    baseline runs one sequence of l_q + l_c tokens; the segmented
    encoder runs n sequences of l_q + l_c/n tokens. Anchor-group
    synchronization adds sync_groups * n^2 entries on each of the
    sync_layers layers and is reported separately because the headline
    formula covers only segment-local attention.
    """
    l_q, l_c, n = Fraction(cost.l_q), Fraction(cost.l_c), Fraction(cost.n)
    baseline = (l_q + l_c) ** 2
    transync = (l_q + l_c / n) ** 2 * n
    return {
        "baseline_ops": baseline,
        "transync_ops": transync,
        "ratio": baseline / transync,
        "sync_ops_per_layer": Fraction(sync_groups) * n ** 2,
        "sync_ops_total": Fraction(sync_groups * sync_layers) * n ** 2,
    }


def analytic_attention_entries(cost: CostModel, n_layers: int,
                               schema: Optional[SyncSchema] = None,
                               pseudo: bool = False,
                               concat: bool = False) -> dict:
    """Expected score-matrix entries for a full encoder forward."""
    per_layer = attention_cost(cost, sync_groups_per_layer(schema, pseudo),
                               sync_layers=n_layers)
    local = (per_layer["baseline_ops"] if concat
             else per_layer["transync_ops"]) * n_layers
    sync = per_layer["sync_ops_total"]
    if local.denominator != 1 or sync.denominator != 1:
        raise ValueError("non-integer entry count; pick n dividing l_c")
    return {"local": int(local), "sync": int(sync)}


def count_attention_flops(params: EncoderParams, inp: SegmentedInput,
                          plan: AnchorPlan) -> dict:
    """Run one encoder forward under instrumentation.

    Returns score-matrix entry and multiply-accumulate counts by kernel
    tag, for integer comparison against `analytic_attention_entries`.
    """
    with count_attention_ops() as counter:
        encode(inp, plan, params)
    tags = sorted({rec.tag for rec in counter.records})
    return {
        "entries": {t: counter.score_entries(tag=t) for t in tags},
        "macs": {t: counter.score_macs(tag=t) for t in tags},
    }


# -- wall-clock benchmark ------------------------------------------------------


def hardware_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "cpus": os.cpu_count(),
    }


def _single_thread_limit():
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:
        import contextlib

        return contextlib.nullcontext()


def build_bench_input(l_q: int, l_c: int, n: int, seed: int = 0,
                      concat: bool = False,
                      token_pool: int = 120) -> tuple[SegmentedInput, Vocab]:
    """Synthetic input with exact (l_q, l_c, n) token counts.

    The question contributes l_q - 1 word tokens (the separator makes
    up the difference) and the context splits into n equal segments,
    so each segment is l_q + l_c/n tokens long.
    """
    if l_q < 2:
        raise ValueError("l_q counts the separator, needs >= 2")
    if l_c % n != 0:
        raise ValueError("benchmark shapes require n to divide l_c")
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(token_pool)]
    vocab = Vocab.from_texts([" ".join(words)])
    question = " ".join(words[int(i)] for i in rng.integers(token_pool, size=l_q - 1))
    context = [words[int(i)] for i in rng.integers(token_pool, size=l_c)]
    if concat:
        texts = [" ".join(context)]
    else:
        step = l_c // n
        texts = [" ".join(context[i * step:(i + 1) * step]) for i in range(n)]
    return build_segmented_input(question, texts, vocab), vocab


def benchmark_time_per_token(params: EncoderParams, inp: SegmentedInput,
                             plan: AnchorPlan, repeats: int = 100,
                             groups: int = 10) -> dict:
    """Median-of-means encoder forward time, single worker thread."""
    if repeats < 100:
        raise ValueError("benchmark protocol averages over at least 100 samples")
    with _single_thread_limit():
        for _ in range(3):
            encode(inp, plan, params)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            encode(inp, plan, params)
            times.append(time.perf_counter() - t0)
    chunk = max(1, repeats // groups)
    means = [float(np.mean(times[i:i + chunk]))
             for i in range(0, len(times), chunk)]
    per_forward = float(np.median(means))
    return {
        "seconds_per_forward": per_forward,
        "us_per_token": per_forward / inp.total_len() * 1e6,
        "tokens": inp.total_len(),
        "repeats": repeats,
        "hardware": hardware_descriptor(),
    }


def compare_encoder_speed(l_q: int = 20, l_c: int = 1000, n: int = 10,
                          d: int = 64, n_layers: int = 2, heads: int = 4,
                          repeats: int = 100, seed: int = 0) -> dict:
    """Time LongConcat against the segmented encoder on one shape."""
    inp_seg, vocab = build_bench_input(l_q, l_c, n, seed=seed)
    inp_cat, _ = build_bench_input(l_q, l_c, n, seed=seed, concat=True)
    rng = np.random.default_rng(seed)
    params_seg = EncoderParams.init(len(vocab), d, heads, n_layers, rng,
                                    with_sync=True,
                                    max_len=inp_seg.max_len() + 1)
    rng = np.random.default_rng(seed)
    params_cat = EncoderParams.init(len(vocab), d, heads, n_layers, rng,
                                    with_sync=False,
                                    max_len=inp_cat.max_len() + 1)
    for p in (*params_seg.tensors().values(), *params_cat.tensors().values()):
        p.requires_grad = False
    plan_seg = build_anchor_plan(inp_seg, SyncSchema.all_to_all())
    plan_cat = build_anchor_plan(inp_cat, SyncSchema.none())
    seg = benchmark_time_per_token(params_seg, inp_seg, plan_seg, repeats)
    cat = benchmark_time_per_token(params_cat, inp_cat, plan_cat, repeats)
    return {
        "longconcat": cat,
        "transync": seg,
        "ratio_us_per_token": cat["us_per_token"] / seg["us_per_token"],
        "shape": {"l_q": l_q, "l_c": l_c, "n": n, "d": d,
                  "layers": n_layers, "heads": heads},
    }


# -- experiment configuration ---------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    baseline: str = "TranSync"
    schema: SyncSchema = field(default_factory=SyncSchema.all_to_all)
    task: str = "multihop"
    preset: str = "multihop-6"
    n_train: int = 5000
    n_test: int = 500
    sentences_per_doc: int = 8
    d: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 1
    sync_heads: int = 1
    steps: int = 600
    lr: float = 1e-3
    warmup_frac: float = 0.1
    grad_clip: float = 1.0
    prompt_loss_weight: float = 0.0
    tied_readout: bool = False
    batch_size: int = 8
    seed: int = 0
    segment_policy: str = "auto"
    max_input_len: int = 4096
    max_answer_len: int = 8

    def __post_init__(self):
        if self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.task not in ("multihop", "neighbor"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.segment_policy not in ("auto", "sentence", "document", "concat"):
            raise ValueError(f"unknown segment_policy {self.segment_policy!r}")
        if self.task == "multihop" and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0 (0 disables clipping)")
        if self.prompt_loss_weight < 0:
            raise ValueError("prompt_loss_weight must be >= 0")

    def effective_schema(self) -> SyncSchema:
        # LongConcat has one unsegmented sequence, so its schema field
        # is ignored; FiD is the no-synchronization baseline by
        # definition; the pseudo-token baseline gets its plan from
        # build_pseudo_plan rather than a schema.
        if self.baseline in ("FiD", "LongConcat", "FiDPseudoToken"):
            return SyncSchema.none()
        return self.schema

    def effective_policy(self) -> str:
        if self.baseline == "LongConcat":
            return "concat"
        if self.segment_policy != "auto":
            return self.segment_policy
        return "document" if self.task == "multihop" else "sentence"

    def with_sync(self) -> bool:
        if self.baseline == "FiDPseudoToken":
            return True
        return not self.effective_schema().is_none

    def to_json_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        s = self.schema
        d["schema"] = {"variant": s.variant, "window": s.window,
                       "include_sep_group": s.include_sep_group}
        return d

    @classmethod
    def from_json_dict(cls, rec: dict) -> "ExperimentConfig":
        rec = dict(rec)
        rec.pop("version", None)
        s = rec.get("schema")
        if isinstance(s, dict):
            rec["schema"] = SyncSchema(variant=s["variant"],
                                       window=s.get("window", 1),
                                       include_sep_group=s.get(
                                           "include_sep_group", True))
        elif isinstance(s, str):
            rec["schema"] = _schema_from_name(s)
        unknown = set(rec) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**rec)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _schema_from_name(name: str, window: int = 1,
                      include_sep_group: bool = True) -> SyncSchema:
    table = {
        "neighbor": lambda: SyncSchema.neighbor_chain(window),
        "neighbor_chain": lambda: SyncSchema.neighbor_chain(window),
        "all_to_all": lambda: SyncSchema.all_to_all(),
        "all-to-all": lambda: SyncSchema.all_to_all(),
        "title": lambda: SyncSchema.title_anchors(include_sep_group),
        "title_anchors": lambda: SyncSchema.title_anchors(include_sep_group),
        "none": SyncSchema.none,
    }
    if name not in table:
        raise ValueError(f"unknown schema name {name!r}")
    return table[name]()


# -- data pipeline ---------------------------------------------------------------


def generate_task_data(cfg: ExperimentConfig) -> list[QASample]:
    total = cfg.n_train + cfg.n_test
    if cfg.task == "multihop":
        task_cfg = replace(PRESETS[cfg.preset], n_samples=total)
        samples = gen_multihop_task(cfg.seed, task_cfg)
        audit_multihop(samples)
    else:
        task_cfg = NeighborConfig(n_samples=total,
                                  sentences_per_doc=cfg.sentences_per_doc)
        samples = gen_neighbor_task(cfg.seed, task_cfg)
        audit_neighbor(samples)
    return samples


def _render_parts(sample: QASample) -> list[tuple[str, Optional[str]]]:
    if isinstance(sample.context, str):
        return [(sample.context, None)]
    return [(text, title) for title, text in sample.context]


def render_for_vocab(sample: QASample) -> str:
    parts = [f"{title} : {text}" if title else text
             for text, title in _render_parts(sample)]
    return " ".join([sample.question, *parts, sample.answer])


def build_experiment_vocab(samples: Sequence[QASample]) -> Vocab:
    return Vocab.from_texts(render_for_vocab(s) for s in samples)


def prepare_input(sample: QASample, cfg: ExperimentConfig,
                  vocab: Vocab) -> tuple[SegmentedInput, AnchorPlan]:
    policy = cfg.effective_policy()
    parts = _render_parts(sample)
    if policy == "concat":
        joined = " ".join(f"{title} : {text}" if title else text
                          for text, title in parts)
        tokens = tokenize(joined)[: cfg.max_input_len]
        segments: list = [" ".join(tokens)]
    elif policy == "document":
        if any(title is None for _, title in parts):
            raise ValueError("document policy needs titled context")
        segments = [(text, title) for text, title in parts]
    else:
        if len(parts) != 1 or parts[0][1] is not None:
            raise ValueError("sentence policy expects one untitled context")
        segments = split_context(parts[0][0], Sentence())
    pseudo = cfg.baseline == "FiDPseudoToken"
    inp = build_segmented_input(sample.question, segments, vocab,
                                prepend_pseudo=pseudo)
    plan = build_pseudo_plan(inp) if pseudo else build_anchor_plan(
        inp, cfg.effective_schema())
    return inp, plan


def build_model(cfg: ExperimentConfig, vocab: Vocab,
                max_seg_len: int) -> Seq2SeqModel:
    rng = np.random.default_rng([cfg.seed, 1])
    model = Seq2SeqModel.init(
        vocab, d=cfg.d, heads=cfg.heads, enc_layers=cfg.enc_layers,
        dec_layers=cfg.dec_layers, rng=rng, with_sync=cfg.with_sync(),
        max_len=max(max_seg_len, cfg.max_answer_len + 2) + 1,
        sync_heads=cfg.sync_heads)
    if cfg.tied_readout:
        # Start the readout as the transpose of the embedding table so
        # that attending a context row whose token identity survived the
        # stack immediately scores that token highest. The readout stays
        # a free parameter; only its starting point is tied.
        model.decoder.out_proj.data = model.encoder.embedding.data.T.copy()
    return model


# -- experiment run ---------------------------------------------------------------


def _train(cfg: ExperimentConfig, model: Seq2SeqModel,
           train_items: Sequence[tuple], log: Optional[Callable] = None) -> list[float]:
    opt = Adam(model.parameters(), lr=cfg.lr)
    warmup = int(round(cfg.warmup_frac * cfg.steps))
    rng = np.random.default_rng([cfg.seed, 2])
    order: list[int] = []
    losses = []
    for step in range(cfg.steps):
        opt.lr = warmup_cosine_lr(step, cfg.steps, cfg.lr, warmup)
        if len(order) < cfg.batch_size:
            order.extend(rng.permutation(len(train_items)).tolist())
        picks, order = order[: cfg.batch_size], order[cfg.batch_size:]
        batch = [train_items[i] for i in picks]
        losses.append(train_step(batch, model, opt,
                                 max_grad_norm=cfg.grad_clip,
                                 prompt_loss_weight=cfg.prompt_loss_weight))
        if log is not None and (step + 1) % 50 == 0:
            log(step + 1, losses[-1])
    return losses


def _evaluate(cfg: ExperimentConfig, model: Seq2SeqModel, vocab: Vocab,
              test_inputs: Sequence[tuple], prompts: Sequence[Sequence[int]],
              references: Sequence[str]):
    hyps = []
    for (inp, plan), prompt in zip(test_inputs, prompts):
        ids = generate(model, inp, plan, max_len=cfg.max_answer_len,
                       prompt_ids=prompt)
        hyps.append(vocab.decode(ids))
    return evaluate_answers(hyps, references), hyps


def _dataset_cost_model(inputs: Sequence[tuple[SegmentedInput, AnchorPlan]]) -> CostModel:
    inp, _ = inputs[0]
    n = inp.n
    l_q = len(inp.question_ids) + 1
    return CostModel(l_q=l_q, l_c=inp.total_len() - n * l_q, n=n)


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Train one configuration, evaluate it, write artifacts.

    Writes report.json (byte-stable for identical config and seed),
    predictions.jsonl, model.tsyn, and a timing.json sidecar carrying
    wall-clock and hardware details that must not perturb report
    determinism. On failure the partial loss curve is preserved in
    report.partial.json before the exception propagates.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timing: dict = {"phases_s": {}}
    t0 = time.perf_counter()
    samples = generate_task_data(cfg)
    train_samples = samples[: cfg.n_train]
    test_samples = samples[cfg.n_train:]
    vocab = build_experiment_vocab(samples)
    train_prep = [prepare_input(s, cfg, vocab) for s in train_samples]
    test_prep = [prepare_input(s, cfg, vocab) for s in test_samples]
    max_seg_len = max(inp.max_len() for inp, _ in (*train_prep, *test_prep))
    train_prompts = [vocab.encode(s.question) for s in train_samples]
    test_prompts = [vocab.encode(s.question) for s in test_samples]
    max_prompt = max(len(p) for p in (*train_prompts, *test_prompts))
    model = build_model(cfg, vocab,
                        max(max_seg_len, max_prompt + cfg.max_answer_len + 2))
    train_items = [
        (inp, plan, vocab.encode(s.answer), prompt)
        for (inp, plan), s, prompt
        in zip(train_prep, train_samples, train_prompts)]
    timing["phases_s"]["prepare"] = round(time.perf_counter() - t0, 3)

    losses: list[float] = []
    try:
        t0 = time.perf_counter()
        losses = _train(cfg, model, train_items)
        timing["phases_s"]["train"] = round(time.perf_counter() - t0, 3)
        t0 = time.perf_counter()
        report_eval, hyps = _evaluate(
            cfg, model, vocab, test_prep, test_prompts,
            [s.answer for s in test_samples])
        timing["phases_s"]["eval"] = round(time.perf_counter() - t0, 3)
    except Exception as err:
        partial = {"config": cfg.to_json_dict(), "error": repr(err),
                   "loss_curve": losses}
        (out / "report.partial.json").write_text(
            json.dumps(partial, sort_keys=True, indent=1))
        raise

    cost = _dataset_cost_model(test_prep)
    groups = sync_groups_per_layer(cfg.effective_schema(),
                                   pseudo=cfg.baseline == "FiDPseudoToken")
    cost_report = attention_cost(cost, groups, cfg.enc_layers)
    report = {
        "config": cfg.to_json_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "metrics": {"em": report_eval.em, "f1": report_eval.f1,
                    "rouge_l": report_eval.rouge_l, "n": report_eval.n},
        "loss_curve": losses,
        "final_loss": losses[-1] if losses else None,
        "cost_model": {
            "l_q": cost.l_q, "l_c": cost.l_c, "n": cost.n,
            **{k: str(v) for k, v in cost_report.items()},
            "ratio_float": float(cost_report["ratio"]),
        },
        "n_parameters": int(sum(t.data.size for t in model.parameters())),
    }
    (out / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=1))
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for rec, hyp in zip(report_eval.per_sample, hyps):
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    from .checkpoint import save_model

    save_model(out / "model.tsyn", model, extra={"config_hash": cfg.config_hash()})
    timing["hardware"] = hardware_descriptor()
    (out / "timing.json").write_text(json.dumps(timing, sort_keys=True, indent=1))
    return report
