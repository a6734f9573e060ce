"""Metrics and analysis exports.

Span F1 is exact-match micro F1 over (doc, event, role, span) items. Head F1
matches on the argument's head word when gold heads are available (a
predicted span matches if it contains the gold head and roles agree); with
no heads it degrades to a first-word proxy and the report says so.
Coreference-based scoring is out of scope and reported as unsupported.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import CooccurrenceMatrix, Document, EventFrame, role_frequencies
from .errors import ContractError
from .head import Model, forward_for_eval, predict

Item = tuple[str, int, str, str, tuple[int, int]]  # doc, event idx, event type, role, span


@dataclass
class MetricReport:
    name: str
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    per_event_type: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"p": self.precision, "r": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def gold_items(frames: list[EventFrame]) -> set[Item]:
    return {(f.doc_id, f.event_index, f.event_type, role, span)
            for f in frames for role, span in f.gold_args}


def predicted_items(model: Model, doc_index: dict[str, Document],
                    frames: list[EventFrame], mode: str | None = None) -> set[Item]:
    items: set[Item] = set()
    for f in frames:
        for role, span in predict(doc_index[f.doc_id], f, model, mode):
            items.add((f.doc_id, f.event_index, f.event_type, role, span))
    return items


def span_f1(pred: set[Item], gold: set[Item]) -> MetricReport:
    """Exact-match micro-averaged precision/recall/F1."""
    tp = len(pred & gold)
    fp = len(pred - gold)
    fn = len(gold - pred)
    p, r, f1 = _prf(tp, fp, fn)
    per_type: dict[str, dict] = {}
    for etype in sorted({it[2] for it in pred | gold}):
        pe = {it for it in pred if it[2] == etype}
        ge = {it for it in gold if it[2] == etype}
        tp_e, fp_e, fn_e = len(pe & ge), len(pe - ge), len(ge - pe)
        pp, rr, ff = _prf(tp_e, fp_e, fn_e)
        per_type[etype] = {"p": pp, "r": rr, "f1": ff, "tp": tp_e, "fp": fp_e, "fn": fn_e}
    return MetricReport("span", p, r, f1, tp, fp, fn, per_type)


def head_f1(pred: set[Item], gold: set[Item],
            heads: dict[tuple[str, int, tuple[int, int]], int] | None = None) -> MetricReport:
    """Head-word micro F1.

    With gold heads: a prediction matches an unmatched gold item when doc,
    event, and role agree and the predicted span contains the gold head
    word (one-to-one greedy matching). Without heads: proxy mode matches on
    the span's first word and the report is named ``head_proxy``.
    """
    name = "head" if heads is not None else "head_proxy"
    matched_gold: set[Item] = set()
    tp = 0
    for item in sorted(pred):
        doc_id, ev, etype, role, span = item
        found = None
        for g in sorted(gold - matched_gold):
            if g[0] != doc_id or g[1] != ev or g[3] != role:
                continue
            if heads is not None:
                h = heads.get((doc_id, ev, g[4]))
                if h is None:
                    h = g[4][0]
                if span[0] <= h <= span[1]:
                    found = g
                    break
            else:
                if span[0] == g[4][0]:
                    found = g
                    break
        if found is not None:
            matched_gold.add(found)
            tp += 1
    fp = len(pred) - tp
    fn = len(gold) - tp
    p, r, f1 = _prf(tp, fp, fn)
    return MetricReport(name, p, r, f1, tp, fp, fn)


def heads_map(frames: list[EventFrame]) -> dict[tuple[str, int, tuple[int, int]], int] | None:
    out = {}
    for f in frames:
        if f.gold_heads:
            for span, h in f.gold_heads:
                out[(f.doc_id, f.event_index, span)] = h
    return out or None


def full_report(model: Model, docs: list[Document], frames: list[EventFrame],
                mode: str | None = None) -> dict:
    """Metrics JSON in the shape {metric: {p, r, f1, tp, fp, fn}}."""
    doc_index = {d.doc_id: d for d in docs}
    known = set(model.roles)
    unknown = sorted({r for f in frames for r, _ in f.gold_args} - known)
    pred = predicted_items(model, doc_index, frames, mode)
    gold = gold_items(frames)
    span = span_f1(pred, gold)
    head = head_f1(pred, gold, heads_map(frames))
    out = {"span": span.to_json(), head.name: head.to_json(), "coref": "unsupported"}
    out["per_event_type"] = span.per_event_type
    if unknown:
        out["unknown_roles"] = unknown
    return out


# ---------------------------------------------------------------------------
# CSV exports
# ---------------------------------------------------------------------------


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def export_attention(model: Model, docs: list[Document], frames: list[EventFrame],
                     path, max_spans_per_event: int | None = None) -> int:
    """Clue-weight rows (doc, event, span, context token, weight) for every
    scored span; the raw material behind attention heat maps."""
    doc_index = {d.doc_id: d for d in docs}
    rows = []
    for f in frames:
        doc = doc_index[f.doc_id]
        fwd, plan = forward_for_eval(doc, f, model)
        if fwd is None or fwd.p_clue is None:
            continue
        piece_words = _piece_to_word(plan)
        spans = plan.spans if max_spans_per_event is None else plan.spans[:max_spans_per_event]
        for k, span in enumerate(spans):
            weights = fwd.p_clue.data[k]
            for t, weight in enumerate(weights):
                word = piece_words[t]
                rows.append([f.doc_id, f.event_index, span.start, span.end, t,
                             doc.words[word] if word is not None else "",
                             f"{weight:.10g}"])
    _write_csv(path, ["doc_id", "event", "span_i", "span_j",
                      "context_token_index", "token_text", "p_c"], rows)
    return len(rows)


def _piece_to_word(plan) -> list[int | None]:
    seq = plan.seq
    lo = seq.context_range[0]
    out: list[int | None] = [None] * seq.l_w
    for w, (ts, te) in enumerate(seq.word_to_token):
        for t in range(ts, te + 1):
            out[t - lo] = w
    return out


def export_role_similarity(model: Model, docs: list[Document],
                           frames: list[EventFrame], path) -> int:
    """Pairwise cosine similarity of the latent role embeddings per event."""
    doc_index = {d.doc_id: d for d in docs}
    rows = []
    for f in frames:
        if not f.roles:
            continue
        enc = model.encode((doc_index[f.doc_id], f), training=False)
        H = enc.role_hidden().data
        norms = np.linalg.norm(H, axis=1)
        for i, ri in enumerate(f.roles):
            for j, rj in enumerate(f.roles):
                denom = norms[i] * norms[j]
                cos = float(H[i] @ H[j] / denom) if denom > 0 else 0.0
                rows.append([f.doc_id, f.event_index, ri, rj, f"{cos:.10g}"])
    _write_csv(path, ["doc_id", "event", "role_i", "role_j", "cosine"], rows)
    return len(rows)


def export_embeddings(model: Model, docs: list[Document], frames: list[EventFrame],
                      path, targets: str = "arguments") -> int:
    """Raw vectors for downstream projection: gold-argument representations in
    both plain average-pool and fused variants, or role anchor embeddings."""
    if targets not in ("arguments", "roles"):
        raise ContractError(f"targets must be 'arguments' or 'roles', got {targets!r}")
    doc_index = {d.doc_id: d for d in docs}
    rows = []
    dim = model.head.dim
    for f in frames:
        doc = doc_index[f.doc_id]
        if targets == "roles":
            if not f.roles:
                continue
            enc = model.encode((doc, f), training=False)
            H = enc.role_hidden().data
            for i, role in enumerate(f.roles):
                rows.append([f.doc_id, f.event_index, f"role:{role}", "anchor",
                             *(f"{x:.8g}" for x in H[i])])
            continue
        fwd, plan = forward_for_eval(doc, f, model)
        if fwd is None:
            continue
        span_pos = {(s.start, s.end): k for k, s in enumerate(plan.spans)}
        for role, span in f.gold_args:
            k = span_pos.get(span)
            if k is None:
                continue
            ident = f"{role}:{span[0]}-{span[1]}"
            rows.append([f.doc_id, f.event_index, ident, "avg",
                         *(f"{x:.8g}" for x in fwd.avg.data[k])])
            rows.append([f.doc_id, f.event_index, ident, "fused",
                         *(f"{x:.8g}" for x in fwd.fused.data[k])])
    _write_csv(path, ["doc_id", "event", "target", "variant",
                      *(f"v{i}" for i in range(dim))], rows)
    return len(rows)


def export_cooccurrence(matrix: CooccurrenceMatrix, frames: list[EventFrame],
                        path, top_k: int | None = None) -> list[str]:
    """Submatrix of the most frequent roles (by gold-argument count)."""
    matrix.validate()
    freq = role_frequencies(frames, matrix.roles)
    ranked = sorted(matrix.roles, key=lambda r: (-freq[r], r))
    chosen = ranked if top_k is None else ranked[:top_k]
    index = {r: i for i, r in enumerate(matrix.roles)}
    rows = []
    for r in chosen:
        row = [r] + [str(int(matrix.counts[index[r], index[c]])) for c in chosen]
        rows.append(row)
    _write_csv(path, ["role", *chosen], rows)
    return list(chosen)


def metrics_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
