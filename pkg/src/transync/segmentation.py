"""Context splitting, question-prefixed segment layout, and anchor plans.

A long input is cut into segments, each segment is laid out as
`[question; <SEP>; (optional <T> title); content]`, and an anchor plan
designates which token positions of which segments exchange
information during encoding, and under what topology.

Everything here is pure construction over immutable values; the
resulting inputs and plans can be shared freely across threads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

__all__ = [
    "AnchorGroup",
    "AnchorPlan",
    "FixedLength",
    "Segment",
    "SegmentedInput",
    "Sentence",
    "SyncSchema",
    "Vocab",
    "build_anchor_plan",
    "build_pseudo_plan",
    "build_segmented_input",
    "detokenize",
    "split_context",
    "tokenize",
    "validate_segment_length",
]

PAD, SEP, TITLE, BOS, EOS, UNK, PSEUDO = (
    "<PAD>", "<SEP>", "<T>", "<BOS>", "<EOS>", "<UNK>", "<PSEUDO>")
RESERVED = (PAD, SEP, TITLE, BOS, EOS, UNK, PSEUDO)


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization over the closed synthetic vocabulary."""
    return text.split()


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


class Vocab:
    """Bidirectional token/id map with fixed reserved specials.

    Reserved tokens occupy ids 0..6 in the order of `RESERVED` and are
    identical in every vocabulary, so serialized datasets and
    checkpoints agree on special-token ids.
    """

    def __init__(self, tokens: Sequence[str] = ()):
        self._token_to_id: dict[str, int] = {}
        self._id_to_token: list[str] = []
        for tok in RESERVED:
            self._add(tok)
        for tok in tokens:
            if tok not in self._token_to_id:
                self._add(tok)

    def _add(self, token: str) -> None:
        self._token_to_id[token] = len(self._id_to_token)
        self._id_to_token.append(token)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocab":
        seen = set()
        for text in texts:
            seen.update(tokenize(text))
        return cls(sorted(seen - set(RESERVED)))

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    @property
    def pad_id(self) -> int:
        return self._token_to_id[PAD]

    @property
    def sep_id(self) -> int:
        return self._token_to_id[SEP]

    @property
    def title_id(self) -> int:
        return self._token_to_id[TITLE]

    @property
    def bos_id(self) -> int:
        return self._token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self._token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self._token_to_id[UNK]

    @property
    def pseudo_id(self) -> int:
        return self._token_to_id[PSEUDO]

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def encode(self, text: str) -> list[int]:
        return [self.id_of(tok) for tok in tokenize(text)]

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        toks = [self._id_to_token[i] for i in ids]
        if skip_special:
            toks = [t for t in toks if t not in RESERVED]
        return detokenize(toks)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx, tok in enumerate(self._id_to_token):
                fh.write(f"{tok}\t{idx}\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        entries: list[tuple[str, int]] = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    tok, idx = line.split("\t")
                    entries.append((tok, int(idx)))
                except ValueError as exc:
                    raise ValueError(f"{path}:{line_no}: malformed vocab line") from exc
        entries.sort(key=lambda e: e[1])
        for expect, (tok, idx) in enumerate(entries):
            if idx != expect:
                raise ValueError(f"vocab ids must be dense from 0, missing {expect}")
        tokens = [tok for tok, _ in entries]
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("reserved tokens moved; vocab file is incompatible")
        return cls(tokens[len(RESERVED):])


# -- context splitting ----------------------------------------------------


@dataclass(frozen=True)
class Sentence:
    """Split on sentence-final punctuation followed by whitespace."""


@dataclass(frozen=True)
class FixedLength:
    """Split into chunks of at most `max_tokens` whole tokens."""

    max_tokens: int

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


def split_context(context: str, policy: Union[Sentence, FixedLength]) -> list[str]:
    """Cut a context into non-empty segments whose tokens concatenate
    back to the original token stream."""
    if not context or not context.strip():
        raise ValueError("cannot split an empty context")
    if isinstance(policy, Sentence):
        segments: list[str] = []
        current: list[str] = []
        for tok in tokenize(context):
            current.append(tok)
            if tok and tok[-1] in ".?!":
                segments.append(detokenize(current))
                current = []
        if current:
            segments.append(detokenize(current))
        return segments
    if isinstance(policy, FixedLength):
        toks = tokenize(context)
        m = policy.max_tokens
        return [detokenize(toks[i:i + m]) for i in range(0, len(toks), m)]
    raise TypeError(f"unknown split policy: {policy!r}")


# -- segmented inputs ------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """One question-prefixed segment, fully tokenized.

    `token_ids` is `[q; <SEP>; (<T> title)?; content]`, optionally with
    a leading `<PSEUDO>` token. `title_span` is (start, length) and
    covers the `<T>` marker plus the title tokens.
    """

    token_ids: tuple[int, ...]
    sep_position: int
    title_span: Optional[tuple[int, int]] = None
    source_title_id: Optional[int] = None
    pseudo_position: Optional[int] = None

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def title_marker_position(self) -> Optional[int]:
        return None if self.title_span is None else self.title_span[0]


@dataclass(frozen=True)
class SegmentedInput:
    question_ids: tuple[int, ...]
    segments: tuple[Segment, ...]

    @property
    def n(self) -> int:
        return len(self.segments)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a segmented input needs at least one segment")

    def max_len(self) -> int:
        return max(len(s) for s in self.segments)

    def total_len(self) -> int:
        return sum(len(s) for s in self.segments)

    def to_json_dict(self) -> dict:
        return {
            "question_ids": list(self.question_ids),
            "segments": [
                {
                    "token_ids": list(s.token_ids),
                    "sep_position": s.sep_position,
                    "title_span": list(s.title_span) if s.title_span else None,
                    "source_title_id": s.source_title_id,
                    "pseudo_position": s.pseudo_position,
                }
                for s in self.segments
            ],
        }


def build_segmented_input(
    question: str,
    segments: Sequence[Union[str, tuple[str, str]]],
    vocab: Vocab,
    prepend_pseudo: bool = False,
) -> SegmentedInput:
    """Lay out each segment as `[q; <SEP>; (<T> title)?; content]`.

    Each entry of `segments` is either the segment text or a
    (text, title) pair. Unknown tokens map to `<UNK>`. With
    `prepend_pseudo`, a `<PSEUDO>` token is placed at position 0 of
    every segment (the per-segment learned token of the pseudo-token
    baseline); all recorded positions account for the shift.
    """
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    if not segments:
        raise ValueError("at least one segment is required")
    q_ids = tuple(vocab.encode(question))
    built: list[Segment] = []
    for entry in segments:
        if isinstance(entry, tuple):
            text, title = entry
        else:
            text, title = entry, None
        offset = 1 if prepend_pseudo else 0
        ids: list[int] = ([vocab.pseudo_id] if prepend_pseudo else [])
        ids.extend(q_ids)
        sep_position = offset + len(q_ids)
        ids.append(vocab.sep_id)
        title_span = None
        source_title_id = None
        if title is not None:
            title_ids = vocab.encode(title)
            title_span = (sep_position + 1, 1 + len(title_ids))
            source_title_id = title_ids[0] if title_ids else None
            ids.append(vocab.title_id)
            ids.extend(title_ids)
        ids.extend(vocab.encode(text))
        built.append(Segment(
            token_ids=tuple(ids),
            sep_position=sep_position,
            title_span=title_span,
            source_title_id=source_title_id,
            pseudo_position=0 if prepend_pseudo else None,
        ))
    return SegmentedInput(question_ids=q_ids, segments=tuple(built))


# -- synchronization schemas and anchor plans ------------------------------


@dataclass(frozen=True)
class SyncSchema:
    """Which positions synchronize across segments, and how widely.

    Variants: "neighbor_chain" (SEP anchors, banded by segment
    distance), "all_to_all" (SEP anchors, full), "title_anchors"
    (<T> markers, full, optionally plus the SEP group), "none".
    """

    variant: str
    window: int = 1
    include_sep_group: bool = True

    _VARIANTS = ("neighbor_chain", "all_to_all", "title_anchors", "none")

    def __post_init__(self):
        if self.variant not in self._VARIANTS:
            raise ValueError(f"unknown schema variant {self.variant!r}")
        if self.variant == "neighbor_chain" and self.window < 1:
            raise ValueError("neighbor chain window must be >= 1")

    @classmethod
    def neighbor_chain(cls, window: int = 1) -> "SyncSchema":
        return cls("neighbor_chain", window=window)

    @classmethod
    def all_to_all(cls) -> "SyncSchema":
        return cls("all_to_all")

    @classmethod
    def title_anchors(cls, include_sep_group: bool = True) -> "SyncSchema":
        return cls("title_anchors", include_sep_group=include_sep_group)

    @classmethod
    def none(cls) -> "SyncSchema":
        return cls("none")

    @property
    def is_none(self) -> bool:
        return self.variant == "none"


@dataclass(frozen=True)
class AnchorGroup:
    """Anchors (one span per participating segment) updated together.

    `topology` is "full" or "banded"; banded uses `window` over the
    member order, so member i attends members j with |i - j| <= window.
    """

    members: tuple[tuple[int, tuple[int, int]], ...]
    topology: str = "full"
    window: int = 1

    def __post_init__(self):
        if self.topology not in ("full", "banded"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if not self.members:
            raise ValueError("anchor group must have at least one member")
        lengths = {span[1] for _, span in self.members}
        if len(lengths) != 1:
            raise ValueError("all spans in an anchor group must share one length")
        if min(lengths) < 1:
            raise ValueError("anchor spans must be non-empty")
        if self.topology == "banded" and self.window < 1:
            raise ValueError("banded window must be >= 1")

    @property
    def span_len(self) -> int:
        return self.members[0][1][1]

    @property
    def size(self) -> int:
        return len(self.members)

    def positions(self) -> list[tuple[int, int]]:
        """Flattened (segment, position) pairs, member-major order."""
        out = []
        for seg, (start, length) in self.members:
            out.extend((seg, start + j) for j in range(length))
        return out

    def attention_mask(self):
        """Boolean (K, K) member-level visibility, K = size * span_len."""
        import numpy as np

        m, s = self.size, self.span_len
        if self.topology == "full":
            return np.ones((m * s, m * s), dtype=bool)
        member = np.abs(np.arange(m)[:, None] - np.arange(m)[None, :]) <= self.window
        return np.repeat(np.repeat(member, s, axis=0), s, axis=1)


@dataclass(frozen=True)
class AnchorPlan:
    groups: tuple[AnchorGroup, ...] = ()

    def __post_init__(self):
        seen: set[tuple[int, int]] = set()
        for group in self.groups:
            for pos in group.positions():
                if pos in seen:
                    raise ValueError(
                        f"position {pos} belongs to two anchor groups")
                seen.add(pos)

    @property
    def is_empty(self) -> bool:
        return not self.groups

    def to_json_dict(self) -> dict:
        return {
            "groups": [
                {
                    "members": [
                        {"segment": seg, "span": list(span)}
                        for seg, span in g.members
                    ],
                    "topology": g.topology,
                    "window": g.window if g.topology == "banded" else None,
                }
                for g in self.groups
            ]
        }

    def describe(self) -> str:
        """Human-readable membership listing (one line per member)."""
        lines = []
        for gi, g in enumerate(self.groups):
            topo = g.topology if g.topology == "full" else f"banded(window={g.window})"
            lines.append(f"group {gi}: {g.size} members, topology {topo}")
            for mi, (seg, (start, length)) in enumerate(g.members):
                if g.topology == "banded":
                    lo, hi = max(0, mi - g.window), min(g.size - 1, mi + g.window)
                    sees = f" attends members {lo}..{hi}"
                else:
                    sees = " attends all members"
                lines.append(
                    f"  member {mi}: segment {seg}, span start={start} len={length}{sees}")
        return "\n".join(lines) if lines else "empty plan (no synchronization)"


def _sep_members(inp: SegmentedInput) -> tuple:
    return tuple((i, (seg.sep_position, 1)) for i, seg in enumerate(inp.segments))


def build_anchor_plan(inp: SegmentedInput, schema: SyncSchema) -> AnchorPlan:
    """Materialize a schema against a concrete segmented input."""
    if schema.is_none:
        return AnchorPlan(())
    if schema.variant == "neighbor_chain":
        return AnchorPlan((AnchorGroup(_sep_members(inp), topology="banded",
                                       window=schema.window),))
    if schema.variant == "all_to_all":
        return AnchorPlan((AnchorGroup(_sep_members(inp), topology="full"),))
    if schema.variant == "title_anchors":
        missing = [i for i, s in enumerate(inp.segments) if s.title_span is None]
        if missing:
            raise ValueError(
                f"title anchors need a title in every segment; missing in {missing}")
        title_members = tuple(
            (i, (s.title_marker_position, 1)) for i, s in enumerate(inp.segments))
        groups = [AnchorGroup(title_members, topology="full")]
        if schema.include_sep_group:
            groups.append(AnchorGroup(_sep_members(inp), topology="full"))
        return AnchorPlan(tuple(groups))
    raise ValueError(f"unhandled schema {schema.variant!r}")


def build_pseudo_plan(inp: SegmentedInput) -> AnchorPlan:
    """Full-topology group over the per-segment pseudo tokens.

    Used by the pseudo-token baseline: the prepended learned tokens
    attend one another across segments each layer.
    """
    missing = [i for i, s in enumerate(inp.segments) if s.pseudo_position is None]
    if missing:
        raise ValueError(f"segments {missing} carry no pseudo token")
    members = tuple(
        (i, (s.pseudo_position, 1)) for i, s in enumerate(inp.segments))
    return AnchorPlan((AnchorGroup(members, topology="full"),))


def validate_segment_length(question_len: int, segment_len: int) -> bool:
    """Check the segments-vs-question sizing heuristic.

    Returns True when `segment_len >= 2 * question_len` (boundary
    inclusive); otherwise warns and returns False. Segments much
    shorter than their question prefix spend most of their attention
    budget re-reading the question.
    """
    if question_len <= 0 or segment_len <= 0:
        raise ValueError("lengths must be positive")
    if segment_len < 2 * question_len:
        warnings.warn(
            f"segment length {segment_len} is under twice the question "
            f"length {question_len}; prefix overhead will dominate",
            UserWarning,
            stacklevel=2,
        )
        return False
    return True
