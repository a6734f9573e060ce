"""Candidate span enumeration, argument-impossible span exclusion and
average-pooled span representations."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numkit as nk
from .corpus import Document
from .errors import ContractError
from .numkit import Tensor
from .sequence import AssembledSequence

DEFAULT_PUNCTUATION = frozenset({",", ";", ":", ".", "?", "!"})


@dataclass(frozen=True)
class CandidateSpan:
    start: int
    end: int
    token_range: tuple[int, int] | None = None  # context-relative piece indices

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def bind(self, seq: AssembledSequence) -> "CandidateSpan":
        ts, _ = seq.word_context_range(self.start)
        _, te = seq.word_context_range(self.end)
        return replace(self, token_range=(ts, te))


def enumerate_spans(doc: Document, max_span_len: int) -> list[CandidateSpan]:
    """Every contiguous word span up to the length cap, in (i, j) order."""
    if max_span_len < 1:
        raise ContractError(f"max_span_len must be >= 1, got {max_span_len}")
    n = doc.n_words
    out = []
    for i in range(n):
        for j in range(i, min(i + max_span_len, n)):
            out.append(CandidateSpan(i, j))
    return out


def is_argument_impossible(span: CandidateSpan, doc: Document,
                           punctuation: frozenset[str] = DEFAULT_PUNCTUATION) -> bool:
    """Pure predicate behind the exclusion pass."""
    words = doc.words
    if all(words[k] in punctuation for k in range(span.start, span.end + 1)):
        return True
    for k in range(span.start + 1, span.end):
        if words[k] in punctuation:
            return True
    if doc.sentence_of(span.start) != doc.sentence_of(span.end):
        return True
    return False


def exclude_impossible(spans: list[CandidateSpan], doc: Document,
                       punctuation: frozenset[str] = DEFAULT_PUNCTUATION) -> list[CandidateSpan]:
    """Drop spans with interior punctuation, sentence crossings, or nothing
    but punctuation. Idempotent; a subset of its input."""
    return [s for s in spans if not is_argument_impossible(s, doc, punctuation)]


def average_pool(span: CandidateSpan, context_hidden: Tensor) -> Tensor:
    """Mean of the span's word-piece rows of the context view, shape (1, d)."""
    if span.token_range is None:
        raise ContractError("span has no token range; bind it to a sequence first")
    ts, te = span.token_range
    if te < ts:
        raise ContractError(f"span token range {span.token_range} is empty")
    k = te - ts + 1
    weights = np.zeros((1, context_hidden.shape[0]))
    weights[0, ts:te + 1] = 1.0 / k
    return nk.matmul(Tensor(weights), context_hidden)


def span_average_matrix(spans: list[CandidateSpan], l_w: int) -> np.ndarray:
    """Stacked pooling weights: row k averages span k's piece rows, (n_spans, l_w)."""
    m = np.zeros((len(spans), l_w))
    for r, s in enumerate(spans):
        if s.token_range is None:
            raise ContractError("span has no token range; bind it to a sequence first")
        ts, te = s.token_range
        m[r, ts:te + 1] = 1.0 / (te - ts + 1)
    return m
