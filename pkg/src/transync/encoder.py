"""Segment-local encoding with in-layer anchor synchronization.

Each segment runs an ordinary post-norm transformer layer over its own
tokens; between the local self-attention and the first normalization,
anchor positions from different segments attend one another and are
written back in place. Stacking layers interleaves local encoding with
cross-segment exchange, and `fuse` concatenates the per-segment
outputs for a decoder to attend over.

Segments are batched as one (n, L_max, d) tensor with right padding;
padded keys are masked out of local attention and padded rows never
reach the fused output, so valid rows are unaffected by padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .segmentation import AnchorPlan, SegmentedInput
from .tensor import (
    AttentionParams,
    Tensor,
    embedding,
    gather_positions,
    gelu,
    layer_norm,
    multi_head_attention,
    scatter_replace,
)

__all__ = [
    "EncoderParams",
    "EncoderState",
    "FeedForwardParams",
    "FusedContext",
    "LayerNormParams",
    "TranSyncLayerParams",
    "embed",
    "encode",
    "fuse",
    "sinusoidal_positions",
    "synchronize",
    "transync_layer",
    "vanilla_encoder_layer",
]


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    """Fixed sin/cos position table of shape (max_len, d)."""
    if d % 2 != 0:
        raise ValueError("model width must be even for sin/cos positions")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.zeros((max_len, d), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int, requires_grad: bool = True) -> "LayerNormParams":
        return cls(gain=Tensor(np.ones(d), requires_grad=requires_grad),
                   bias=Tensor(np.zeros(d), requires_grad=requires_grad))

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


@dataclass
class FeedForwardParams:
    """Two-layer gelu MLP, d -> 4d -> d."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator,
             requires_grad: bool = True) -> "FeedForwardParams":
        hidden = 4 * d
        s1, s2 = 1.0 / math.sqrt(d), 1.0 / math.sqrt(hidden)
        return cls(
            w1=Tensor(rng.uniform(-s1, s1, size=(d, hidden)), requires_grad=requires_grad),
            b1=Tensor(np.zeros(hidden), requires_grad=requires_grad),
            w2=Tensor(rng.uniform(-s2, s2, size=(hidden, d)), requires_grad=requires_grad),
            b2=Tensor(np.zeros(d), requires_grad=requires_grad),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return gelu(x @ self.w1 + self.b1) @ self.w2 + self.b2

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}


@dataclass
class TranSyncLayerParams:
    """One encoder layer: local attention, optional sync attention,
    feed-forward, and the two post-norm layer norms."""

    local: AttentionParams
    ffn: FeedForwardParams
    ln1: LayerNormParams
    ln2: LayerNormParams
    sync: Optional[AttentionParams] = None

    @classmethod
    def init(cls, d: int, heads: int, rng: np.random.Generator,
             with_sync: bool, sync_heads: int = 1,
             identity_scale: float = 0.5) -> "TranSyncLayerParams":
        return cls(
            local=AttentionParams.init(d, heads, rng,
                                       identity_scale=identity_scale),
            ffn=FeedForwardParams.init(d, rng),
            ln1=LayerNormParams.init(d),
            ln2=LayerNormParams.init(d),
            sync=AttentionParams.init(d, sync_heads, rng,
                                      identity_scale=identity_scale)
            if with_sync else None,
        )

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.local.tensors(f"{prefix}.local"))
        out.update(self.ffn.tensors(f"{prefix}.ffn"))
        out.update(self.ln1.tensors(f"{prefix}.ln1"))
        out.update(self.ln2.tensors(f"{prefix}.ln2"))
        if self.sync is not None:
            out.update(self.sync.tensors(f"{prefix}.sync"))
        return out


@dataclass
class EncoderState:
    """Per-segment embeddings, batched to (n, L_max, d) with right padding."""

    x: Tensor
    lengths: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 3:
            raise ValueError("encoder state must be (n, L_max, d)")
        if len(self.lengths) != self.x.shape[0]:
            raise ValueError("one length per segment required")
        if self.lengths.max(initial=0) > self.x.shape[1]:
            raise ValueError("segment length exceeds padded width")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def max_len(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[2]

    @property
    def has_padding(self) -> bool:
        return bool((self.lengths < self.max_len).any())

    def key_mask(self) -> np.ndarray:
        """(n, L_max) True at real token positions."""
        return np.arange(self.max_len)[None, :] < self.lengths[:, None]

    def local_attention_mask(self) -> Optional[np.ndarray]:
        """(n, L_max, L_max) key-padding mask, or None when nothing is padded."""
        if not self.has_padding:
            return None
        keys = self.key_mask()
        return np.broadcast_to(keys[:, None, :], (self.n, self.max_len, self.max_len))

    def segment_matrix(self, i: int) -> Tensor:
        """The l_i x d embedding matrix of segment i (no padding rows)."""
        return self.x[i][: int(self.lengths[i])]

    def replace(self, x: Tensor) -> "EncoderState":
        return EncoderState(x=x, lengths=self.lengths)


def embed(inp: SegmentedInput, embedding_table: Tensor,
          positional_encoding: np.ndarray) -> EncoderState:
    """Token embedding (scaled by sqrt(d)) plus positions.

    Positions restart at 0 per segment. The sqrt(d) factor balances
    the embedding rows against the unit-amplitude sin/cos table, so
    attention at initialization sees token identity, not just position.
    """
    n, max_len = inp.n, inp.max_len()
    d = embedding_table.shape[1]
    if positional_encoding.shape[0] < max_len:
        raise ValueError(
            f"position table covers {positional_encoding.shape[0]} tokens, "
            f"segment needs {max_len}")
    if positional_encoding.shape[1] != d:
        raise ValueError("position table width differs from embedding width")
    ids = np.zeros((n, max_len), dtype=np.int64)  # 0 is <PAD>
    lengths = np.zeros(n, dtype=np.int64)
    for i, seg in enumerate(inp.segments):
        ids[i, : len(seg)] = seg.token_ids
        lengths[i] = len(seg)
    x = embedding(embedding_table, ids) * math.sqrt(d) + Tensor(
        positional_encoding[:max_len])
    return EncoderState(x=x, lengths=lengths)


def synchronize(state: EncoderState, plan: AnchorPlan,
                sync_params: Optional[AttentionParams],
                residual: bool = True) -> EncoderState:
    """Let each anchor group attend among its members, in place.

    Members are gathered member-major into one short sequence, run
    through masked self-attention (full or banded per the group
    topology), and written back. Non-anchor positions of the returned
    state are bit-identical to the input.
    """
    if plan.is_empty:
        return state
    if sync_params is None:
        raise ValueError("synchronization requested but no sync parameters given")
    x = state.x
    for group in plan.groups:
        pairs = group.positions()
        seg_idx = np.array([s for s, _ in pairs], dtype=np.int64)
        pos_idx = np.array([p for _, p in pairs], dtype=np.int64)
        if (pos_idx >= state.lengths[seg_idx]).any():
            raise ValueError("anchor span reaches outside its segment")
        anchors = gather_positions(x, seg_idx, pos_idx)
        mask = None if group.topology == "full" else group.attention_mask()
        attended = multi_head_attention(anchors, anchors, sync_params,
                                        mask=mask, tag="sync")
        updated = anchors + attended if residual else attended
        x = scatter_replace(x, seg_idx, pos_idx, updated)
    return state.replace(x)


def transync_layer(state: EncoderState, plan: AnchorPlan,
                   params: TranSyncLayerParams,
                   sync_residual: bool = True) -> EncoderState:
    """One encoder layer; sync sits between local attention and the
    first layer norm. Local attention never crosses segment boundaries."""
    x = state.x
    local = multi_head_attention(x, x, params.local,
                                 mask=state.local_attention_mask(), tag="local")
    x1 = x + local
    x2 = synchronize(state.replace(x1), plan, params.sync,
                     residual=sync_residual).x
    x3 = layer_norm(x2, params.ln1.gain, params.ln1.bias)
    x4 = x3 + params.ffn(x3)
    out = layer_norm(x4, params.ln2.gain, params.ln2.bias)
    return state.replace(out)


def vanilla_encoder_layer(x: Tensor, params: TranSyncLayerParams) -> Tensor:
    """Reference post-norm transformer layer on one (L, d) sequence.

    Straight-line implementation with no segmentation, masking, or
    sync plumbing; the degenerate-equivalence check compares the
    segmented path against this bit for bit.
    """
    x1 = x + multi_head_attention(x, x, params.local, tag="local")
    x3 = layer_norm(x1, params.ln1.gain, params.ln1.bias)
    x4 = x3 + params.ffn(x3)
    return layer_norm(x4, params.ln2.gain, params.ln2.bias)


@dataclass
class EncoderParams:
    """Embedding table, fixed position table, and the layer stack.

    `sync_layers` selects which layers synchronize (None = all);
    `sync_residual` keeps the anchor's own value in the update.
    """

    embedding: Tensor
    positions: np.ndarray
    layers: tuple[TranSyncLayerParams, ...]
    sync_layers: Optional[tuple[int, ...]] = None
    sync_residual: bool = True

    @classmethod
    def init(cls, vocab_size: int, d: int, heads: int, n_layers: int,
             rng: np.random.Generator, with_sync: bool,
             max_len: int = 2048, sync_heads: int = 1,
             sync_layers: Optional[Sequence[int]] = None,
             sync_residual: bool = True,
             identity_scale: float = 0.5) -> "EncoderParams":
        scale = 1.0 / math.sqrt(d)
        table = Tensor(rng.uniform(-scale, scale, size=(vocab_size, d)),
                       requires_grad=True)
        layers = tuple(
            TranSyncLayerParams.init(d, heads, rng, with_sync, sync_heads,
                                     identity_scale=identity_scale)
            for _ in range(n_layers))
        return cls(embedding=table, positions=sinusoidal_positions(max_len, d),
                   layers=layers,
                   sync_layers=tuple(sync_layers) if sync_layers is not None else None,
                   sync_residual=sync_residual)

    @property
    def d(self) -> int:
        return self.embedding.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def syncs_at(self, layer_index: int) -> bool:
        return self.sync_layers is None or layer_index in self.sync_layers

    def tensors(self) -> dict[str, Tensor]:
        out = {"embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            out.update(layer.tensors(f"enc.{i}"))
        return out


def encode(inp: SegmentedInput, plan: AnchorPlan,
           params: EncoderParams) -> EncoderState:
    """Embed and run the full layer stack."""
    if params.n_layers < 1:
        raise ValueError("encoder needs at least one layer")
    empty = AnchorPlan(())
    state = embed(inp, params.embedding, params.positions)
    for i, layer in enumerate(params.layers):
        layer_plan = plan if params.syncs_at(i) else empty
        state = transync_layer(state, layer_plan, layer,
                               sync_residual=params.sync_residual)
    return state


@dataclass
class FusedContext:
    """All valid segment rows concatenated in segment order.

    `offsets[i]` is the first row of segment i; `valid` flags rows the
    decoder may attend (all True as produced; tests and callers may
    clear entries to exclude rows).
    """

    rows: Tensor
    offsets: np.ndarray
    lengths: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise ValueError("fused context is a 2-D matrix")
        if self.rows.shape[0] != int(self.lengths.sum()):
            raise ValueError("row count must equal the sum of segment lengths")
        if len(self.offsets) and (np.diff(self.offsets) <= 0).any():
            raise ValueError("offsets must be strictly increasing")

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def segment_rows(self, i: int) -> Tensor:
        start = int(self.offsets[i])
        return self.rows[start: start + int(self.lengths[i])]


def fuse(state: EncoderState) -> FusedContext:
    """Concatenate per-segment outputs row-wise, dropping padding."""
    seg_idx = np.concatenate([
        np.full(int(l), i, dtype=np.int64) for i, l in enumerate(state.lengths)])
    pos_idx = np.concatenate([
        np.arange(int(l), dtype=np.int64) for l in state.lengths])
    rows = gather_positions(state.x, seg_idx, pos_idx)
    offsets = np.concatenate([[0], np.cumsum(state.lengths)[:-1]]).astype(np.int64)
    return FusedContext(rows=rows, offsets=offsets,
                        lengths=state.lengths.copy(),
                        valid=np.ones(rows.shape[0], dtype=bool))
