"""Role-interactive input sequences and dynamic-window encoding.

The assembled sequence for an event lays out, in order: [CLS], the event
block ([E] event-name pieces [E]), a separator, the document word pieces,
a separator, one block per role ([R] role-name pieces [R]) and a final
separator that anchors the none category. Long sequences are encoded with
a sliding window over the context slice while the fixed prefix and role
suffix ride along in every window; overlapping token embeddings are
averaged and attention rows re-normalized over the full sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corpus import Document, EventFrame
from .errors import ConfigError, ContractError, VocabError

PAD, CLS, SEP, UNK = "[PAD]", "[CLS]", "[SEP]", "[UNK]"


def event_token(event_type: str) -> str:
    return f"[E_{event_type}]"


def role_token(role: str) -> str:
    return f"[R_{role}]"


@dataclass
class TokenizerSpec:
    """Lower-cased greedy longest-match word pieces plus special tokens."""

    vocab: dict[str, int]
    specials: dict[str, int]
    max_window: int = 512
    window_stride: int = 128

    def __post_init__(self):
        overlap = set(self.vocab) & set(self.specials)
        if overlap:
            raise ConfigError(f"special tokens collide with word pieces: {sorted(overlap)[:5]}")
        ids = list(self.vocab.values()) + list(self.specials.values())
        if len(ids) != len(set(ids)):
            raise ConfigError("token ids are not disjoint")
        if self.max_window < 8:
            raise ConfigError(f"max_window too small: {self.max_window}")
        if self.window_stride < 1:
            raise ConfigError(f"window_stride must be >= 1, got {self.window_stride}")

    @property
    def size(self) -> int:
        return len(self.vocab) + len(self.specials)

    @classmethod
    def build(cls, documents, event_types, roles,
              max_window: int = 512, window_stride: int = 128) -> "TokenizerSpec":
        """Derive word-piece vocab from corpus words; register special tokens."""
        specials = {}
        for name in (PAD, CLS, SEP, UNK):
            specials[name] = len(specials)
        for e in event_types:
            specials[event_token(e)] = len(specials)
        for r in roles:
            specials[role_token(r)] = len(specials)
        pieces: set[str] = set()
        for doc in documents:
            for w in doc.words:
                pieces.add(w.lower())
                pieces.update(w.lower())
        for label in list(event_types) + list(roles):
            for part in _label_words(label):
                pieces.add(part)
                pieces.update(part)
        vocab = {p: i + len(specials) for i, p in enumerate(sorted(pieces))}
        return cls(vocab=vocab, specials=specials, max_window=max_window,
                   window_stride=window_stride)

    def special_id(self, name: str) -> int:
        if name not in self.specials:
            raise VocabError(f"special token {name!r} is not registered")
        return self.specials[name]

    def word_pieces(self, word: str) -> list[int]:
        """Greedy longest-match over the piece vocabulary."""
        text = word.lower()
        out: list[int] = []
        pos = 0
        while pos < len(text):
            end = len(text)
            while end > pos and text[pos:end] not in self.vocab:
                end -= 1
            if end == pos:
                out.append(self.specials[UNK])
                pos += 1
            else:
                out.append(self.vocab[text[pos:end]])
                pos = end
        return out or [self.specials[UNK]]

    def to_json(self) -> dict:
        return {"vocab": self.vocab, "specials": self.specials,
                "max_window": self.max_window, "window_stride": self.window_stride}

    @classmethod
    def from_json(cls, obj: dict) -> "TokenizerSpec":
        return cls(vocab={str(k): int(v) for k, v in obj["vocab"].items()},
                   specials={str(k): int(v) for k, v in obj["specials"].items()},
                   max_window=int(obj["max_window"]),
                   window_stride=int(obj["window_stride"]))


def _label_words(label: str) -> list[str]:
    """Split an event-type or role label into plain words for tokenization."""
    out = []
    for chunk in label.replace("_", ".").replace("/", ".").split("."):
        chunk = chunk.strip().lower()
        if chunk:
            out.append(chunk)
    return out or [label.lower()]


@dataclass
class AssembledSequence:
    token_ids: tuple[int, ...]
    event_token_pos: int
    context_range: tuple[int, int]
    role_token_pos: tuple[int, ...]
    none_pos: int
    word_to_token: tuple[tuple[int, int], ...]
    roles: tuple[str, ...]
    event_type: str
    doc_id: str = ""
    event_index: int = 0

    @property
    def length(self) -> int:
        return len(self.token_ids)

    @property
    def l_w(self) -> int:
        return self.context_range[1] - self.context_range[0] + 1

    @property
    def l_r(self) -> int:
        return len(self.role_token_pos)

    def context_token_indices(self) -> np.ndarray:
        lo, hi = self.context_range
        return np.arange(lo, hi + 1)

    def word_context_range(self, word_index: int) -> tuple[int, int]:
        """Token range of a word, relative to the context slice."""
        lo = self.context_range[0]
        ts, te = self.word_to_token[word_index]
        return ts - lo, te - lo

    def span_context_tokens(self, start_word: int, end_word: int) -> np.ndarray:
        a, _ = self.word_context_range(start_word)
        _, b = self.word_context_range(end_word)
        return np.arange(a, b + 1)


def assemble_sequence(doc: Document, frame: EventFrame, spec: TokenizerSpec) -> AssembledSequence:
    """Build the role-interactive sequence for one event of a document."""
    etok = event_token(frame.event_type)
    if etok not in spec.specials:
        raise VocabError(f"event type {frame.event_type!r} has no registered special token")
    for role in frame.roles:
        if role_token(role) not in spec.specials:
            raise VocabError(f"role {role!r} has no registered special token")

    ids: list[int] = [spec.special_id(CLS)]
    event_pos = len(ids)
    ids.append(spec.special_id(etok))
    for part in _label_words(frame.event_type):
        ids.extend(spec.word_pieces(part))
    ids.append(spec.special_id(etok))
    ids.append(spec.special_id(SEP))

    context_start = len(ids)
    word_to_token: list[tuple[int, int]] = []
    for w in doc.words:
        pieces = spec.word_pieces(w)
        word_to_token.append((len(ids), len(ids) + len(pieces) - 1))
        ids.extend(pieces)
    context_end = len(ids) - 1
    ids.append(spec.special_id(SEP))

    role_pos: list[int] = []
    for role in frame.roles:
        rtok = spec.special_id(role_token(role))
        role_pos.append(len(ids))
        ids.append(rtok)
        for part in _label_words(role):
            ids.extend(spec.word_pieces(part))
        ids.append(rtok)
    none_pos = len(ids)
    ids.append(spec.special_id(SEP))

    return AssembledSequence(
        token_ids=tuple(ids),
        event_token_pos=event_pos,
        context_range=(context_start, context_end),
        role_token_pos=tuple(role_pos),
        none_pos=none_pos,
        word_to_token=tuple(word_to_token),
        roles=frame.roles,
        event_type=frame.event_type,
        doc_id=doc.doc_id,
        event_index=frame.event_index,
    )


def layout_positions(event_piece_count: int, word_piece_counts: list[int],
                     role_piece_counts: list[int]) -> dict:
    """Anchor positions implied by the sequence layout, given piece counts.

    Lets an external encoder exporter that tokenizes with its own model be
    cross-checked: the layout is fully determined by how many pieces each
    block contributes.
    """
    pos = 1  # [CLS]
    event_token_pos = pos
    pos += 1 + event_piece_count + 1  # [E] pieces [E]
    pos += 1  # [SEP]
    context_start = pos
    word_to_token = []
    for n in word_piece_counts:
        if n < 1:
            raise ContractError("every word must map to at least one piece")
        word_to_token.append((pos, pos + n - 1))
        pos += n
    context_end = pos - 1
    pos += 1  # [SEP]
    role_token_pos = []
    for n in role_piece_counts:
        role_token_pos.append(pos)
        pos += 1 + n + 1
    none_pos = pos
    pos += 1
    return {
        "event_token_pos": event_token_pos,
        "context_range": [context_start, context_end],
        "role_token_pos": role_token_pos,
        "none_pos": none_pos,
        "word_to_token": word_to_token,
        "l_s": pos,
    }


# ---------------------------------------------------------------------------
# dynamic windows
# ---------------------------------------------------------------------------


@dataclass
class WindowPlan:
    """Absolute token indices of one window: fixed prefix, context slice, suffix."""

    indices: np.ndarray
    context_slice: tuple[int, int]  # relative to the context range, inclusive


def plan_windows(seq: AssembledSequence, spec: TokenizerSpec) -> list[WindowPlan]:
    lo, hi = seq.context_range
    prefix = np.arange(0, lo)
    suffix = np.arange(hi + 1, seq.length)
    mandatory = len(prefix) + len(suffix)
    budget = spec.max_window - mandatory
    if budget < 1:
        raise ConfigError(
            f"mandatory blocks ({mandatory} tokens) leave no room for context "
            f"within max_window={spec.max_window}")
    l_w = seq.l_w
    if l_w <= budget:
        return [WindowPlan(np.arange(seq.length), (0, l_w - 1))]
    stride = spec.window_stride
    if stride > budget:
        raise ConfigError(
            f"window_stride={stride} exceeds the context budget {budget}; windows would skip tokens")
    plans = []
    start = 0
    while True:
        end = min(start + budget, l_w)
        ctx = np.arange(lo + start, lo + end)
        plans.append(WindowPlan(np.concatenate([prefix, ctx, suffix]), (start, end - 1)))
        if end >= l_w:
            break
        start += stride
        if start + budget > l_w:
            start = l_w - budget
    return plans


def window_encode(seq: AssembledSequence, encode_fn: Callable, spec: TokenizerSpec,
                  window_attention: str = "average") -> tuple[np.ndarray, np.ndarray]:
    """Encode via the window plan; average overlaps, re-normalize attention.

    ``encode_fn(token_ids) -> (hidden (n, d), attn (H, n, n))`` runs the
    underlying encoder on one window. Token embeddings of a position are the
    arithmetic mean over every window containing it. Attention cells are
    averaged over the windows covering both endpoints (or taken from the
    first covering window when ``window_attention='first'``), then each row
    is re-normalized over the full sequence.
    """
    if window_attention not in ("average", "first"):
        raise ConfigError(f"window_attention must be 'average' or 'first', got {window_attention!r}")
    plans = plan_windows(seq, spec)
    n = seq.length
    hidden_sum = None
    hidden_cnt = np.zeros(n)
    attn_sum = None
    attn_cnt = None
    for plan in plans:
        idx = plan.indices
        ids = [seq.token_ids[i] for i in idx]
        hidden_w, attn_w = encode_fn(ids)
        hidden_w = np.asarray(hidden_w, dtype=np.float64)
        attn_w = np.asarray(attn_w, dtype=np.float64)
        if hidden_sum is None:
            hidden_sum = np.zeros((n, hidden_w.shape[1]))
            attn_sum = np.zeros((attn_w.shape[0], n, n))
            attn_cnt = np.zeros((n, n))
        hidden_sum[idx] += hidden_w
        hidden_cnt[idx] += 1
        cell = np.ix_(idx, idx)
        if window_attention == "average":
            attn_sum[(slice(None),) + cell] += attn_w
            attn_cnt[cell] += 1
        else:
            fresh = attn_cnt[cell] == 0
            attn_sum[(slice(None),) + cell] += attn_w * fresh[None, :, :]
            attn_cnt[cell] += fresh
    if np.any(hidden_cnt == 0):
        raise ContractError("window plan failed to cover every token")
    hidden = hidden_sum / hidden_cnt[:, None]
    covered = attn_cnt > 0
    attn = np.divide(attn_sum, attn_cnt[None, :, :], out=np.zeros_like(attn_sum), where=covered[None, :, :])
    row_sums = attn.sum(axis=2, keepdims=True)
    if np.any(row_sums <= 0):
        raise ContractError("window averaging produced an empty attention row")
    return hidden, attn / row_sums
