"""Span-trigger contextual pooling and latent role guidance.

Both mechanisms reuse the encoder's last-layer attention instead of learning
new attention layers. For a candidate span, its context attention is the
mean over heads and span piece rows of the context-to-context attention;
the elementwise product with the trigger's vector, softmax-normalized,
weights the context rows into a clue vector. The role-side twin pools the
context-to-role-anchor attention and mixes role anchor embeddings into a
latent role vector. The fused span representation is a tanh projection of
[average-pool; clue vector; role vector].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .errors import ContractError, ShapeError
from .numkit import Tensor
from .spans import CandidateSpan, average_pool


def _pool_rows(weights: np.ndarray, attn_heads: list[Tensor]) -> Tensor:
    """Mean over heads of (weights @ head); weights rows average span pieces."""
    if not attn_heads:
        raise ContractError("no attention heads supplied")
    w = Tensor(weights)
    acc = nk.matmul(w, attn_heads[0])
    for a in attn_heads[1:]:
        acc = nk.add(acc, nk.matmul(w, a))
    return nk.scale(acc, 1.0 / len(attn_heads))


def _span_weights(span: CandidateSpan, width: int) -> np.ndarray:
    if span.token_range is None:
        raise ContractError("span has no token range; bind it to a sequence first")
    ts, te = span.token_range
    if te < ts:
        raise ContractError(f"span token range {span.token_range} is empty")
    if te >= width:
        raise ShapeError(f"span token range {span.token_range} exceeds view width {width}")
    w = np.zeros((1, width))
    w[0, ts:te + 1] = 1.0 / (te - ts + 1)
    return w


def span_context_attention(span: CandidateSpan, context_attention: list[Tensor]) -> Tensor:
    """Head-and-piece mean of the span's context attention rows, (1, l_w)."""
    width = context_attention[0].shape[0]
    return _pool_rows(_span_weights(span, width), context_attention)


def stcp_context_vector(span: CandidateSpan, trigger: CandidateSpan,
                        context_attention: list[Tensor],
                        context_hidden: Tensor) -> tuple[Tensor, Tensor]:
    """Clue distribution and clue vector for a span-trigger pair.

    Returns ``(p_c, c)``: p_c = softmax(span attention * trigger attention)
    over context positions, c = p_c-weighted sum of context hidden rows.
    """
    a_span = span_context_attention(span, context_attention)
    a_trig = span_context_attention(trigger, context_attention)
    if a_span.shape != a_trig.shape:
        raise ShapeError(f"attention widths differ: {a_span.shape} vs {a_trig.shape}")
    p_c = nk.softmax(nk.mul(a_span, a_trig))
    c = nk.matmul(p_c, context_hidden)
    return p_c, c


def span_role_attention(span: CandidateSpan, role_attention: list[Tensor]) -> Tensor:
    """Head-and-piece mean of the span's role-anchor attention rows, (1, l_r)."""
    if role_attention[0].shape[1] == 0:
        raise ContractError("event declares no roles; latent role pooling undefined")
    width = role_attention[0].shape[0]
    return _pool_rows(_span_weights(span, width), role_attention)


def rlig_role_vector(span: CandidateSpan, trigger: CandidateSpan,
                     role_attention: list[Tensor],
                     role_hidden: Tensor) -> tuple[Tensor, Tensor]:
    """Latent role distribution and role vector for a span-trigger pair."""
    if role_hidden.shape[0] == 0:
        raise ContractError("event declares no roles; latent role pooling undefined")
    a_span = span_role_attention(span, role_attention)
    a_trig = span_role_attention(trigger, role_attention)
    p_r = nk.softmax(nk.mul(a_span, a_trig))
    r = nk.matmul(p_r, role_hidden)
    return p_r, r


@dataclass
class SpanFeatures:
    """Everything the fusion stage derives for one candidate span."""

    avg: Tensor                  # (1, d) average pool
    context_attention: Tensor    # (1, l_w) pooled span attention
    p_clue: Tensor               # (1, l_w) clue distribution
    clue: Tensor                 # (1, d) context clue vector
    role_attention: Tensor | None  # (1, l_r) pooled role attention
    p_role: Tensor | None        # (1, l_r) latent role distribution
    role: Tensor                 # (1, d) latent role vector (zeros if no roles)
    fused: Tensor                # (1, d) tanh-fused representation


def span_features(span: CandidateSpan, trigger: CandidateSpan, enc,
                  fuse_weight: Tensor) -> SpanFeatures:
    """Per-span fusion pipeline over an encoder output (reference path; the
    head batches the same math over all spans of an event)."""
    ctx_heads = enc.context_attention()
    hidden = enc.context_hidden()
    avg = average_pool(span, hidden)
    a_c = span_context_attention(span, ctx_heads)
    p_clue, clue = stcp_context_vector(span, trigger, ctx_heads, hidden)
    if enc.seq.l_r > 0:
        a_r = span_role_attention(span, enc.role_attention())
        p_role, role = rlig_role_vector(span, trigger, enc.role_attention(),
                                        enc.role_hidden())
    else:
        a_r = p_role = None
        role = Tensor(np.zeros((1, hidden.shape[1])))
    fused = fuse_span(avg, clue, role, fuse_weight)
    return SpanFeatures(avg=avg, context_attention=a_c, p_clue=p_clue, clue=clue,
                        role_attention=a_r, p_role=p_role, role=role, fused=fused)


def fuse_span(avg: Tensor, clue: Tensor, role: Tensor, fuse_weight: Tensor) -> Tensor:
    """tanh(W [avg; clue; role]) with concatenation in that order."""
    for name, t in (("avg", avg), ("clue", clue), ("role", role)):
        if t.ndim != 2 or t.shape[0] != avg.shape[0] or t.shape[1] != avg.shape[1]:
            raise ShapeError(f"{name} must match avg shape {avg.shape}, got {t.shape}")
    cat = nk.concat([avg, clue, role], axis=1)
    if fuse_weight.shape != (3 * avg.shape[1], avg.shape[1]):
        raise ShapeError(
            f"fusion weight must be (3d, d) = {(3 * avg.shape[1], avg.shape[1])}, got {fuse_weight.shape}")
    return nk.tanh(nk.matmul(cat, fuse_weight))
