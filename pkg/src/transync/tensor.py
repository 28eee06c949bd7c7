"""Dense tensors with reverse-mode automatic differentiation.

This is the numeric kernel under the whole library: enough ops for
embedding lookups, multi-head attention, layer normalization, gelu
feed-forward blocks, and cross-entropy training, on row-major numpy
arrays. 64-bit floats are the default (and what the test suite runs
in); 32-bit can be selected for training runs via `set_default_dtype`.

Autograd follows the usual tape-free closure scheme: each op attaches
a `_backward` closure to its output, `Tensor.backward()` topologically
sorts the graph and runs the closures in reverse. Values are pure
once created and may be shared read-only across threads; gradient
accumulation during backward is single-writer per tensor.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Tensor",
    "AttentionParams",
    "AttentionOpCounter",
    "as_tensor",
    "count_attention_ops",
    "cross_entropy",
    "dropout",
    "embedding",
    "gather_positions",
    "gelu",
    "get_default_dtype",
    "grad_check",
    "layer_norm",
    "masked_fill_value",
    "multi_head_attention",
    "scatter_replace",
    "set_default_dtype",
    "softmax",
    "using_dtype",
]

_FLOAT_DTYPES = (np.float32, np.float64)

_local = threading.local()


def _coerce_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        alias = {"f32": np.float32, "float32": np.float32,
                 "f64": np.float64, "float64": np.float64}
        if dtype not in alias:
            raise ValueError(f"unknown dtype alias: {dtype!r}")
        return np.dtype(alias[dtype])
    d = np.dtype(dtype)
    if d.type not in _FLOAT_DTYPES:
        raise ValueError(f"tensors are float32/float64 only, got {d}")
    return d


def get_default_dtype() -> np.dtype:
    return getattr(_local, "dtype", np.dtype(np.float64))


def set_default_dtype(dtype) -> None:
    _local.dtype = _coerce_dtype(dtype)


@contextmanager
def using_dtype(dtype) -> Iterator[None]:
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _local.dtype = prev


class Tensor:
    """A dense array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        if dtype is not None:
            arr = np.asarray(data, dtype=_coerce_dtype(dtype))
        elif isinstance(data, np.ndarray) and data.dtype.type in _FLOAT_DTYPES:
            arr = data
        else:
            arr = np.asarray(data, dtype=get_default_dtype())
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._backward: Optional[Callable[[], None]] = None
        self._prev: tuple[Tensor, ...] = ()

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    # -- autograd ------------------------------------------------------

    def _acc(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient requires a scalar output")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        self._acc(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def _attach(self, parents: tuple["Tensor", ...], backward: Callable[[], None]) -> "Tensor":
        if any(p.requires_grad for p in parents):
            self.requires_grad = True
            self._prev = parents
            self._backward = backward
        return self

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.data + other.data, dtype=None)
        a, b = self, other

        def backward():
            if a.requires_grad:
                a._acc(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._acc(_unbroadcast(out.grad, b.shape))

        return out._attach((a, b), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data)
        a = self

        def backward():
            if a.requires_grad:
                a._acc(-out.grad)

        return out._attach((a,), backward)

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.data * other.data)
        a, b = self, other

        def backward():
            if a.requires_grad:
                a._acc(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._acc(_unbroadcast(out.grad * a.data, b.shape))

        return out._attach((a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        return self * (as_tensor(other) ** -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Tensor(self.data ** exponent)
        a, p = self, float(exponent)

        def backward():
            if a.requires_grad:
                a._acc(out.grad * p * a.data ** (p - 1.0))

        return out._attach((a,), backward)

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ValueError("matmul requires tensors with ndim >= 2")
        out = Tensor(np.matmul(self.data, other.data))
        a, b = self, other

        def backward():
            if a.requires_grad:
                ga = np.matmul(out.grad, b.data.swapaxes(-1, -2))
                a._acc(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.matmul(a.data.swapaxes(-1, -2), out.grad)
                b._acc(_unbroadcast(gb, b.shape))

        return out._attach((a, b), backward)

    # -- shape ops -----------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape))
        a = self

        def backward():
            if a.requires_grad:
                a._acc(out.grad.reshape(a.shape))

        return out._attach((a,), backward)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        out = Tensor(self.data.swapaxes(axis1, axis2))
        a = self

        def backward():
            if a.requires_grad:
                a._acc(out.grad.swapaxes(axis1, axis2))

        return out._attach((a,), backward)

    def __getitem__(self, key) -> "Tensor":
        out = Tensor(self.data[key])
        a = self

        def backward():
            if a.requires_grad:
                g = np.zeros_like(a.data)
                np.add.at(g, key, out.grad)
                a._acc(g)

        return out._attach((a,), backward)

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims))
        a = self

        def backward():
            if a.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                a._acc(np.broadcast_to(g, a.shape).copy())

        return out._attach((a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for ax in axes:
                count *= self.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- pointwise nonlinearities ---------------------------------------

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data))
        a = self

        def backward():
            if a.requires_grad:
                a._acc(out.grad * out.data)

        return out._attach((a,), backward)

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data))
        a = self

        def backward():
            if a.requires_grad:
                a._acc(out.grad / a.data)

        return out._attach((a,), backward)

    def tanh(self) -> "Tensor":
        out = Tensor(np.tanh(self.data))
        a = self

        def backward():
            if a.requires_grad:
                a._acc(out.grad * (1.0 - out.data * out.data))

        return out._attach((a,), backward)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._prev:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- structured ops -----------------------------------------------------


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Numerically stabilized softmax along `axis`.

    Non-finite inputs raise rather than propagate. With a boolean
    `mask` (True = attend), masked entries get exactly zero weight;
    a fully masked row is a hard error.
    """
    data = x.data
    if not np.isfinite(data).all():
        raise ValueError("softmax input contains NaN or Inf")
    if data.shape[axis] < 1:
        raise ValueError("softmax over an empty axis")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("attention mask has a fully masked row")
        scores = np.where(mask, data, -np.inf)
    else:
        scores = data
    shifted = scores - scores.max(axis=axis, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=axis, keepdims=True)
    out = Tensor(probs)
    a = x

    def backward():
        if a.requires_grad:
            g = out.grad
            inner = (g * probs).sum(axis=axis, keepdims=True)
            a._acc(probs * (g - inner))

    return out._attach((a,), backward)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation, exact derivative)."""
    c = math.sqrt(2.0 / math.pi)
    d = x.data
    inner = c * (d + 0.044715 * d ** 3)
    t = np.tanh(inner)
    out = Tensor(0.5 * d * (1.0 + t))
    a = x

    def backward():
        if a.requires_grad:
            du = c * (1.0 + 3 * 0.044715 * d ** 2)
            deriv = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du
            a._acc(out.grad * deriv)

    return out._attach((a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row over the last axis, then scale and shift."""
    if x.shape[-1] == 0:
        raise ValueError("layer_norm over zero-width rows")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gain + bias


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep, dtype=x.dtype)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` by integer id; scatter-adds on backward."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError("token id out of range for embedding table")
    out = Tensor(table.data[ids])
    t = table

    def backward():
        if t.requires_grad:
            g = np.zeros_like(t.data)
            np.add.at(g, ids, out.grad)
            t._acc(g)

    return out._attach((t,), backward)


def gather_positions(x: Tensor, seg_idx: np.ndarray, pos_idx: np.ndarray) -> Tensor:
    """Select rows (seg, pos) from a (n, L, d) tensor into a (k, d) sequence."""
    seg_idx = np.asarray(seg_idx)
    pos_idx = np.asarray(pos_idx)
    out = Tensor(x.data[seg_idx, pos_idx])
    a = x

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, (seg_idx, pos_idx), out.grad)
            a._acc(g)

    return out._attach((a,), backward)


def scatter_replace(x: Tensor, seg_idx: np.ndarray, pos_idx: np.ndarray,
                    values: Tensor) -> Tensor:
    """Copy of `x` with rows (seg, pos) replaced by `values` rows.

    Untouched rows are bit-identical to the input. The (seg, pos)
    pairs must be unique, which anchor-plan disjointness guarantees.
    """
    seg_idx = np.asarray(seg_idx)
    pos_idx = np.asarray(pos_idx)
    if len({(int(s), int(p)) for s, p in zip(seg_idx, pos_idx)}) != len(seg_idx):
        raise ValueError("scatter_replace positions must be unique")
    data = x.data.copy()
    data[seg_idx, pos_idx] = values.data
    out = Tensor(data)
    a, v = x, values

    def backward():
        if a.requires_grad:
            g = out.grad.copy()
            g[seg_idx, pos_idx] = 0.0
            a._acc(g)
        if v.requires_grad:
            v._acc(out.grad[seg_idx, pos_idx])

    return out._attach((a, v), backward)


def masked_fill_value(shape: tuple[int, ...], dtype=None) -> np.ndarray:
    """All-True attention mask helper."""
    return np.ones(shape, dtype=bool)


def cross_entropy(logits: Tensor, targets: np.ndarray, reduction: str = "mean") -> Tensor:
    """Token cross-entropy from raw logits.

    `targets` holds class indices; entries < 0 are ignored (padding).
    `reduction` is "mean" over the non-ignored positions or "sum".
    """
    if reduction not in ("mean", "sum"):
        raise ValueError("reduction must be 'mean' or 'sum'")
    targets = np.asarray(targets)
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tgt = targets.reshape(-1)
    if flat.shape[0] != tgt.shape[0]:
        raise ValueError("logits/targets length mismatch")
    if not np.isfinite(flat).all():
        raise ValueError("cross_entropy got non-finite logits")
    valid = tgt >= 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy with no valid target positions")
    if tgt[valid].max() >= vocab:
        raise ValueError("target id out of range")
    shifted = flat - flat.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) - shifted
    safe_tgt = np.where(valid, tgt, 0)
    nll = logsumexp[np.arange(flat.shape[0]), safe_tgt]
    total = float(nll[valid].sum())
    value = total / n_valid if reduction == "mean" else total
    out = Tensor(np.asarray(value, dtype=logits.dtype))
    a = logits

    def backward():
        if a.requires_grad:
            probs = np.exp(shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True)))
            probs[np.arange(flat.shape[0]), safe_tgt] -= 1.0
            probs[~valid] = 0.0
            scale = float(out.grad)
            if reduction == "mean":
                scale /= n_valid
            a._acc((probs * scale).reshape(a.shape))

    return out._attach((a,), backward)


# -- attention ------------------------------------------------------------


@dataclass
class AttentionParams:
    """Projection weights for one attention block.

    All four projections are d x d; `head_count` must divide d.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    head_count: int

    def __post_init__(self):
        d = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            w = getattr(self, name)
            if w.shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}, got {w.shape}")
        if self.head_count < 1 or d % self.head_count != 0:
            raise ValueError("head_count must be a positive divisor of d")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.d // self.head_count

    @classmethod
    def init(cls, d: int, head_count: int, rng: np.random.Generator,
             requires_grad: bool = True,
             identity_scale: float = 0.0) -> "AttentionParams":
        """Uniform init, optionally leaning toward the identity map.

        With a nonzero `identity_scale` every projection starts as
        scaled identity plus the uniform noise, so same-token positions
        attend each other and attended values arrive roughly copied
        from the first step, instead of that structure having to be
        learned from scratch.
        """
        scale = 1.0 / math.sqrt(d)

        def w():
            base = identity_scale * np.eye(d) if identity_scale else 0.0
            return Tensor(base + rng.uniform(-scale, scale, size=(d, d)),
                          requires_grad=requires_grad)

        return cls(wq=w(), wk=w(), wv=w(), wo=w(), head_count=head_count)

    @classmethod
    def identity(cls, d: int, head_count: int = 1) -> "AttentionParams":
        eye = np.eye(d)
        return cls(wq=Tensor(eye), wk=Tensor(eye), wv=Tensor(eye),
                   wo=Tensor(eye), head_count=head_count)

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
                f"{prefix}.wv": self.wv, f"{prefix}.wo": self.wo}


@dataclass
class _AttentionOpRecord:
    tag: str
    batch: int
    queries: int
    keys: int
    heads: int
    head_dim: int


@dataclass
class AttentionOpCounter:
    """Counts score-matrix work done by `multi_head_attention` calls.

    `score_entries` is the number of query/key score pairs computed
    (head-count independent, matching the analytic complexity model);
    `score_macs` multiplies entries by d = heads * head_dim.
    """

    records: list[_AttentionOpRecord] = field(default_factory=list)

    def record(self, tag: str, batch: int, queries: int, keys: int,
               heads: int, head_dim: int) -> None:
        self.records.append(_AttentionOpRecord(tag, batch, queries, keys, heads, head_dim))

    def _select(self, tag: Optional[str]):
        return [r for r in self.records if tag is None or r.tag == tag]

    def score_entries(self, tag: Optional[str] = None) -> int:
        return sum(r.batch * r.queries * r.keys for r in self._select(tag))

    def score_macs(self, tag: Optional[str] = None) -> int:
        return sum(r.batch * r.queries * r.keys * r.heads * r.head_dim
                   for r in self._select(tag))

    def call_count(self, tag: Optional[str] = None) -> int:
        return len(self._select(tag))


@contextmanager
def count_attention_ops() -> Iterator[AttentionOpCounter]:
    counter = AttentionOpCounter()
    prev = getattr(_local, "counter", None)
    _local.counter = counter
    try:
        yield counter
    finally:
        _local.counter = prev


def _active_counter() -> Optional[AttentionOpCounter]:
    return getattr(_local, "counter", None)


def multi_head_attention(q_in: Tensor, kv_in: Tensor, params: AttentionParams,
                         mask: Optional[np.ndarray] = None,
                         tag: str = "attn") -> Tensor:
    """Multi-head scaled dot-product attention.

    `q_in` is (..., L_q, d) and `kv_in` (..., L_kv, d) with matching
    leading batch dims. `mask` is boolean (L_q, L_kv) or broadcastable
    to (..., L_q, L_kv); True means the query may attend the key.
    Masked positions receive exactly zero attention weight; a row with
    no attendable key raises.
    """
    d = params.d
    if q_in.shape[-1] != d or kv_in.shape[-1] != d:
        raise ValueError(
            f"attention expects feature dim {d}, got {q_in.shape[-1]}/{kv_in.shape[-1]}")
    if q_in.ndim != kv_in.ndim:
        raise ValueError("q_in and kv_in must have the same ndim")
    h, hd = params.head_count, params.head_dim
    lq, lkv = q_in.shape[-2], kv_in.shape[-2]
    batch_shape = q_in.shape[:-2]
    if kv_in.shape[:-2] != batch_shape:
        raise ValueError("q_in and kv_in batch shapes differ")

    def split_heads(t: Tensor, length: int) -> Tensor:
        t = t.reshape(batch_shape + (length, h, hd))
        return t.swapaxes(-3, -2)  # (..., h, L, hd)

    q = split_heads(q_in @ params.wq, lq)
    k = split_heads(kv_in @ params.wk, lkv)
    v = split_heads(kv_in @ params.wv, lkv)

    counter = _active_counter()
    if counter is not None:
        batch = 1
        for s in batch_shape:
            batch *= s
        counter.record(tag, batch, lq, lkv, h, hd)

    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(hd))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != (lq, lkv):
            raise ValueError(f"mask trailing shape must be ({lq}, {lkv})")
        if mask.ndim > 2:
            mask = np.expand_dims(mask, -3)  # broadcast over heads
    weights = softmax(scores, axis=-1, mask=mask)
    context = weights @ v  # (..., h, lq, hd)
    merged = context.swapaxes(-3, -2).reshape(batch_shape + (lq, d))
    return merged @ params.wo


# -- verification ----------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must map a tensor to a scalar tensor and build a fresh graph on
    each call. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-6, 1e-4]")
    base = Tensor(np.array(x.data, dtype=np.float64, copy=True), requires_grad=True)
    out = f(base)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = base.grad.copy() if base.grad is not None else np.zeros_like(base.data)

    numeric = np.zeros_like(analytic)
    flat = base.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(base.data, dtype=np.float64)).item()
        flat[i] = orig - h
        lo = f(Tensor(base.data, dtype=np.float64)).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
