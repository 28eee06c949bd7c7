"""Autoregressive decoder over a fused segment context, plus the
training step and greedy generation.

The decoder is deliberately ordinary: causal self-attention over the
generated prefix, cross-attention over every valid fused row, a gelu
feed-forward block, post-norm layer norms. All cross-segment modeling
lives in the encoder; the decoder sees one flat memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .encoder import (
    EncoderParams,
    FeedForwardParams,
    FusedContext,
    LayerNormParams,
    encode,
    fuse,
)
from .optim import clip_grad_norm
from .segmentation import AnchorPlan, SegmentedInput, Vocab
from .tensor import (
    AttentionParams,
    Tensor,
    cross_entropy,
    embedding,
    layer_norm,
    multi_head_attention,
)

__all__ = [
    "DecoderLayerParams",
    "DecoderParams",
    "Seq2SeqModel",
    "decode_step",
    "decoder_logits",
    "generate",
    "train_step",
]


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn: FeedForwardParams
    ln1: LayerNormParams
    ln2: LayerNormParams

    @classmethod
    def init(cls, d: int, heads: int, rng: np.random.Generator,
             identity_scale: float = 0.5) -> "DecoderLayerParams":
        return cls(
            self_attn=AttentionParams.init(d, heads, rng,
                                           identity_scale=identity_scale),
            cross_attn=AttentionParams.init(d, heads, rng,
                                            identity_scale=identity_scale),
            ffn=FeedForwardParams.init(d, rng),
            ln1=LayerNormParams.init(d),
            ln2=LayerNormParams.init(d),
        )

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.self_attn.tensors(f"{prefix}.self"))
        out.update(self.cross_attn.tensors(f"{prefix}.cross"))
        out.update(self.ffn.tensors(f"{prefix}.ffn"))
        out.update(self.ln1.tensors(f"{prefix}.ln1"))
        out.update(self.ln2.tensors(f"{prefix}.ln2"))
        return out


@dataclass
class DecoderParams:
    layers: tuple[DecoderLayerParams, ...]
    out_proj: Tensor  # (d, vocab)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("decoder needs at least one layer")

    @classmethod
    def init(cls, vocab_size: int, d: int, heads: int, n_layers: int,
             rng: np.random.Generator) -> "DecoderParams":
        scale = 1.0 / math.sqrt(d)
        return cls(
            layers=tuple(DecoderLayerParams.init(d, heads, rng)
                         for _ in range(n_layers)),
            out_proj=Tensor(rng.uniform(-scale, scale, size=(d, vocab_size)),
                            requires_grad=True),
        )

    @property
    def d(self) -> int:
        return self.out_proj.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        out = {"out_proj": self.out_proj}
        for i, layer in enumerate(self.layers):
            out.update(layer.tensors(f"dec.{i}"))
        return out


def _decoder_layer(x: Tensor, fused: FusedContext,
                   params: DecoderLayerParams) -> Tensor:
    t = x.shape[0]
    causal = np.tril(np.ones((t, t), dtype=bool))
    x1 = x + multi_head_attention(x, x, params.self_attn, mask=causal,
                                  tag="dec_self")
    if fused.valid.all():
        cross_mask = None
    else:
        cross_mask = np.broadcast_to(fused.valid[None, :], (t, fused.n_rows))
    x2 = x1 + multi_head_attention(x1, fused.rows, params.cross_attn,
                                   mask=cross_mask, tag="cross")
    x3 = layer_norm(x2, params.ln1.gain, params.ln1.bias)
    x4 = x3 + params.ffn(x3)
    return layer_norm(x4, params.ln2.gain, params.ln2.bias)


def decoder_logits(prefix_ids: Sequence[int], fused: FusedContext,
                   params: DecoderParams, embedding_table: Tensor,
                   positions: np.ndarray) -> Tensor:
    """Logits for every prefix position, shape (len(prefix), vocab)."""
    if len(prefix_ids) == 0:
        raise ValueError("decoder prefix must be non-empty")
    if fused.n_rows == 0:
        raise ValueError("fused context is empty")
    ids = np.asarray(prefix_ids, dtype=np.int64)
    if len(ids) > positions.shape[0]:
        raise ValueError("prefix longer than the position table")
    x = embedding(embedding_table, ids) * math.sqrt(
        embedding_table.shape[1]) + Tensor(positions[: len(ids)])
    for layer in params.layers:
        x = _decoder_layer(x, fused, layer)
    return x @ params.out_proj


def decode_step(prefix_ids: Sequence[int], fused: FusedContext,
                params: DecoderParams, embedding_table: Tensor,
                positions: np.ndarray) -> Tensor:
    """Next-token logits given the prefix, shape (vocab,)."""
    return decoder_logits(prefix_ids, fused, params, embedding_table,
                          positions)[-1]


@dataclass
class Seq2SeqModel:
    """Encoder stack plus decoder, sharing one embedding table."""

    encoder: EncoderParams
    decoder: DecoderParams
    vocab: Vocab

    @classmethod
    def init(cls, vocab: Vocab, d: int = 64, heads: int = 4,
             enc_layers: int = 2, dec_layers: int = 1,
             rng: Optional[np.random.Generator] = None,
             with_sync: bool = True, max_len: int = 2048,
             sync_heads: int = 1,
             sync_layers: Optional[Sequence[int]] = None,
             sync_residual: bool = True) -> "Seq2SeqModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        enc = EncoderParams.init(len(vocab), d, heads, enc_layers, rng,
                                 with_sync, max_len=max_len,
                                 sync_heads=sync_heads,
                                 sync_layers=sync_layers,
                                 sync_residual=sync_residual)
        dec = DecoderParams.init(len(vocab), d, heads, dec_layers, rng)
        return cls(encoder=enc, decoder=dec, vocab=vocab)

    @property
    def d(self) -> int:
        return self.encoder.d

    def tensors(self) -> dict[str, Tensor]:
        out = self.encoder.tensors()
        out.update(self.decoder.tensors())
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.tensors().values())

    def encode_and_fuse(self, inp: SegmentedInput, plan: AnchorPlan) -> FusedContext:
        return fuse(encode(inp, plan, self.encoder))

    def answer_logits(self, inp: SegmentedInput, plan: AnchorPlan,
                      decoder_input: Sequence[int]) -> Tensor:
        fused = self.encode_and_fuse(inp, plan)
        return decoder_logits(decoder_input, fused, self.decoder,
                              self.encoder.embedding, self.encoder.positions)


def generate(model: Seq2SeqModel, inp: SegmentedInput, plan: AnchorPlan,
             max_len: int = 16, prompt_ids: Sequence[int] = ()) -> list[int]:
    """Greedy decoding; returns generated ids without <BOS>/<EOS>.

    `prompt_ids` seeds the prefix after <BOS> (typically the question),
    conditioning the cross-attention queries on its content; prompt
    tokens are never part of the returned answer.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    fused = model.encode_and_fuse(inp, plan)
    prefix = [model.vocab.bos_id, *prompt_ids]
    out: list[int] = []
    for _ in range(max_len):
        logits = decode_step(prefix, fused, model.decoder,
                             model.encoder.embedding, model.encoder.positions)
        nxt = int(np.argmax(logits.data))
        if nxt == model.vocab.eos_id:
            break
        out.append(nxt)
        prefix.append(nxt)
    return out


def train_step(batch: Sequence[tuple], model: Seq2SeqModel, optimizer,
               max_grad_norm: float = 0.0,
               prompt_loss_weight: float = 0.0) -> float:
    """One teacher-forced update; returns the pre-update mean token loss.

    Each batch item is (segmented input, anchor plan, answer ids) with an
    optional fourth element of prompt ids. The decoder consumes
    [<BOS>; prompt; answer] and predicts [answer; <EOS>] at the answer
    positions. The returned value is the mean cross-entropy over all
    answer tokens in the batch.

    With `prompt_loss_weight` > 0 the prompt positions also predict the
    next prompt token, adding `weight * mean prompt cross-entropy` to
    the training objective (not to the returned value). The prompt text
    recurs verbatim in the encoder segments, so this term rewards
    cross-attention for locating and copying matching rows long before
    the sparse answer signal alone would. A positive `max_grad_norm`
    clips the global gradient norm before the update.
    """
    if not batch:
        raise ValueError("empty batch")
    if prompt_loss_weight < 0:
        raise ValueError("prompt_loss_weight must be >= 0")
    optimizer.zero_grad()
    total_tokens = sum(len(item[2]) + 1 for item in batch)
    total_prompt = sum(len(item[3]) if len(item) > 3 else 0 for item in batch)
    total_loss = 0.0
    for item in batch:
        inp, plan, answer = item[0], item[1], list(item[2])
        prompt = list(item[3]) if len(item) > 3 else []
        dec_in = [model.vocab.bos_id] + prompt + answer
        targets = np.array([-1] * len(prompt) + answer + [model.vocab.eos_id],
                           dtype=np.int64)
        logits = model.answer_logits(inp, plan, dec_in)
        loss = cross_entropy(logits, targets, reduction="sum")
        value = loss.item()
        if not math.isfinite(value):
            raise RuntimeError(
                f"non-finite loss {value} on answer of {len(answer)} tokens; "
                f"logit range [{logits.data.min():.3e}, {logits.data.max():.3e}]")
        total_loss += value
        objective = loss * (1.0 / total_tokens)
        if prompt_loss_weight > 0 and prompt:
            aux_targets = np.array(prompt + [-1] * (len(answer) + 1),
                                   dtype=np.int64)
            aux = cross_entropy(logits, aux_targets, reduction="sum")
            objective = objective + aux * (prompt_loss_weight / total_prompt)
        objective.backward()
    if max_grad_norm > 0:
        clip_grad_norm(optimizer.params, max_grad_norm)
    optimizer.step()
    return total_loss / total_tokens
