"""Span classification head: boundary-enhanced representations, focal and
boundary losses, the training loop and decoding.

Per event, every candidate span is scored in one batched graph: pooling
matrices (constants) lift the per-span definitions to matrix ops, so the
tape stays small while numpy does the heavy lifting. Ablation flags replace
the clue vector and the latent role vector with zero blocks of the same
width, keeping parameter counts comparable across ablation runs.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkit as nk
from .config import RunConfig
from .corpus import Document, EventFrame, build_vocabularies
from .encoder import EncoderOutput, ToyEncoderParams, toy_encode, write_container, read_container
from .errors import ConfigError, ContractError, DomainError, FormatError
from .numkit import Tensor
from .sequence import AssembledSequence, TokenizerSpec, assemble_sequence
from .spans import CandidateSpan, enumerate_spans, exclude_impossible, span_average_matrix

log = logging.getLogger(__name__)

ATTENTION_VIEW_NAMES = frozenset({"context_attention", "role_attention", "full_attention"})


@dataclass
class HeadParameters:
    """All trainable weights of the classification head."""

    dim: int
    length_dim: int
    n_classes: int
    max_span_len: int
    weights: dict[str, Tensor] = field(default_factory=dict)

    FEATURE_BLOCKS = 5  # fused span, trigger, |diff|, product, event anchor

    @classmethod
    def create(cls, dim: int, n_classes: int, max_span_len: int,
               length_dim: int = 32, seed: int = 0) -> "HeadParameters":
        rng = np.random.default_rng(seed)

        def w(shape):
            # fan-in scaling keeps activations near unit scale through the
            # fuse -> span_out -> ffn chain, which has no normalization
            scale = 1.0 / np.sqrt(shape[0])
            return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

        feat = cls.FEATURE_BLOCKS * dim + length_dim
        weights = {
            "start_proj": w((dim, dim)),
            "end_proj": w((dim, dim)),
            "start_mix": w((2 * dim, dim)),
            "end_mix": w((2 * dim, dim)),
            "fuse": w((3 * dim, dim)),
            "span_out": w((3 * dim, dim)),
            "start_probe": w((dim, 1)),
            "end_probe": w((dim, 1)),
            "length_embed": w((max_span_len, length_dim)),
            "ffn_w1": w((feat, dim)),
            "ffn_b1": Tensor(np.zeros(dim), requires_grad=True),
            "ffn_w2": w((dim, n_classes)),
            "ffn_b2": Tensor(np.zeros(n_classes), requires_grad=True),
        }
        return cls(dim, length_dim, n_classes, max_span_len, weights)

    def params(self) -> list[Tensor]:
        return [self.weights[k] for k in sorted(self.weights)]

    def meta(self) -> dict:
        return {"dim": self.dim, "length_dim": self.length_dim,
                "n_classes": self.n_classes, "max_span_len": self.max_span_len}


# ---------------------------------------------------------------------------
# losses (also usable standalone)
# ---------------------------------------------------------------------------


def boundary_representations(hidden: Tensor, start_proj: Tensor, end_proj: Tensor) -> tuple[Tensor, Tensor]:
    """Per-token linear start and end representations of the full sequence."""
    return nk.matmul(hidden, start_proj), nk.matmul(hidden, end_proj)


def boundary_loss(p_start: Tensor, p_end: Tensor,
                  y_start: np.ndarray, y_end: np.ndarray) -> Tensor:
    """Summed binary cross-entropy over per-word start and end indicators."""
    y_s = np.asarray(y_start, dtype=np.float64).reshape(-1, 1)
    y_e = np.asarray(y_end, dtype=np.float64).reshape(-1, 1)
    if p_start.shape != y_s.shape or p_end.shape != y_e.shape:
        raise ContractError(
            f"boundary_loss: probability shapes {p_start.shape}/{p_end.shape} do not match "
            f"label shapes {y_s.shape}/{y_e.shape}")

    def bce(p: Tensor, y: np.ndarray) -> Tensor:
        pos = nk.mul(Tensor(y), nk.log(p))
        neg = nk.mul(Tensor(1.0 - y), nk.log(nk.add_scalar(nk.scale(p, -1.0), 1.0)))
        return nk.sum_all(nk.add(pos, neg))

    return nk.scale(nk.add(bce(p_start, y_s), bce(p_end, y_e)), -1.0)


def focal_loss(probs: Tensor, labels: np.ndarray, alpha: np.ndarray, gamma: float) -> Tensor:
    """-sum_k alpha[y_k] * (1 - P_k[y_k])^gamma * log P_k[y_k]."""
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    labels = np.asarray(labels, dtype=np.intp)
    alpha = np.asarray(alpha, dtype=np.float64)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ContractError(f"focal_loss: {n} rows but {labels.shape} labels")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    p_y = nk.matmul(nk.mul(probs, Tensor(onehot)), Tensor(np.ones((k, 1))))
    modulator = nk.power(nk.add_scalar(nk.scale(p_y, -1.0), 1.0), gamma)
    weights = Tensor(alpha[labels].reshape(-1, 1))
    terms = nk.mul(nk.mul(modulator, nk.log(p_y)), weights)
    return nk.scale(nk.sum_all(terms), -1.0)


def total_loss(loss_c: Tensor, loss_b: Tensor, boundary_weight: float) -> Tensor:
    if boundary_weight < 0:
        raise ConfigError(f"boundary loss weight must be >= 0, got {boundary_weight}")
    return nk.add(loss_c, nk.scale(loss_b, boundary_weight))


def classify(features: Tensor, head: HeadParameters, class_mask: np.ndarray) -> Tensor:
    """Two-layer feed-forward over the feature rows, masked softmax over
    the event's roles plus none; disallowed roles get exactly zero mass."""
    hidden = nk.tanh(nk.add_rowvec(nk.matmul(features, head.weights["ffn_w1"]),
                                   head.weights["ffn_b1"]))
    logits = nk.add_rowvec(nk.matmul(hidden, head.weights["ffn_w2"]), head.weights["ffn_b2"])
    return nk.masked_softmax(logits, class_mask)


def classification_features(s_tilde: Tensor, trigger_rows: Tensor, event_rows: Tensor,
                            length_rows: Tensor) -> Tensor:
    """[span; trigger; |trigger - span|; trigger * span; event; length]."""
    diff = nk.absolute(nk.sub(trigger_rows, s_tilde))
    prod = nk.mul(trigger_rows, s_tilde)
    return nk.concat([s_tilde, trigger_rows, diff, prod, event_rows, length_rows], axis=1)


def boundary_enhanced(span: CandidateSpan, trigger: CandidateSpan, enc: "EncoderOutput",
                      h_start: Tensor, h_end: Tensor,
                      start_mix: Tensor, end_mix: Tensor) -> tuple[Tensor, Tensor]:
    """Boundary representations of one span, enhanced by pooled context.

    The span-trigger pooled distribution over the whole sequence weights the
    start/end token representations into z vectors, mixed with the span's
    own first/last word-piece rows.
    """
    seq = enc.seq
    sp_w = Tensor(_abs_weights([span], seq))
    tr_w = Tensor(_abs_weights([trigger], seq))
    pooled = enc.full_attention_mean()
    p = nk.softmax(nk.mul(nk.matmul(sp_w, pooled), nk.matmul(tr_w, pooled)))
    z_start = nk.matmul(p, h_start)
    z_end = nk.matmul(p, h_end)
    lo = seq.context_range[0]
    h_i = nk.gather_rows(h_start, [lo + span.token_range[0]])
    h_j = nk.gather_rows(h_end, [lo + span.token_range[1]])
    start_rep = nk.tanh(nk.matmul(nk.concat([h_i, z_start], axis=1), start_mix))
    end_rep = nk.tanh(nk.matmul(nk.concat([h_j, z_end], axis=1), end_mix))
    return start_rep, end_rep


def final_span_rep(start_rep: Tensor, fused: Tensor, end_rep: Tensor, span_out: Tensor) -> Tensor:
    """Linear map of [start; fused; end] into the final span representation."""
    return nk.matmul(nk.concat([start_rep, fused, end_rep], axis=1), span_out)


# ---------------------------------------------------------------------------
# per-event compilation
# ---------------------------------------------------------------------------


@dataclass
class EventPlan:
    """Static per-event structures for the batched forward pass."""

    doc: Document
    frame: EventFrame
    seq: AssembledSequence
    spans: list[CandidateSpan]
    labels: np.ndarray
    avg_m: np.ndarray            # (n_s, l_w) span piece averaging over context rows
    span_full_m: np.ndarray      # (n_s, l_s) same weights at absolute positions
    trig_ctx_w: np.ndarray       # (1, l_w)
    trig_full_w: np.ndarray      # (1, l_s)
    start_tok: np.ndarray        # absolute first-piece index of span start word
    end_tok: np.ndarray          # absolute last-piece index of span end word
    word_start_tok: np.ndarray   # (N,) first piece per word
    word_end_tok: np.ndarray     # (N,)
    y_start: np.ndarray
    y_end: np.ndarray
    length_idx: np.ndarray
    class_mask: np.ndarray       # (n_s, n_classes)
    role_rows: np.ndarray        # (l_r,) role anchor positions


def _abs_weights(spans: list[CandidateSpan], seq: AssembledSequence) -> np.ndarray:
    m = np.zeros((len(spans), seq.length))
    lo = seq.context_range[0]
    for r, s in enumerate(spans):
        ts, te = s.token_range
        m[r, lo + ts:lo + te + 1] = 1.0 / (te - ts + 1)
    return m


def compile_event(doc: Document, frame: EventFrame, spec: TokenizerSpec,
                  cfg: RunConfig, roles_vocab: tuple[str, ...],
                  training: bool, seq: AssembledSequence | None = None) -> EventPlan:
    if seq is None:
        seq = assemble_sequence(doc, frame, spec)
    elif not seq.word_to_token:
        raise ContractError("supplied sequence carries no word-to-token map")
    candidates = enumerate_spans(doc, cfg.max_span_len)
    if cfg.ase:
        kept = exclude_impossible(candidates, doc, cfg.punctuation())
    else:
        kept = candidates
    if training:
        kept_set = {(s.start, s.end) for s in kept}
        for role, sp in frame.gold_args:
            if sp in kept_set:
                continue
            if sp[1] - sp[0] + 1 > cfg.max_span_len:
                log.warning("%s: gold span %s longer than max_span_len=%d; unreachable",
                            frame.doc_id, sp, cfg.max_span_len)
                continue
            log.warning("%s: gold span %s fails the exclusion predicate; force-retained",
                        frame.doc_id, sp)
            kept.append(CandidateSpan(sp[0], sp[1]))
            kept_set.add(sp)
        kept.sort(key=lambda s: (s.start, s.end))
    spans = [s.bind(seq) for s in kept]

    gold_by_span = {}
    for role, sp in frame.gold_args:
        gold_by_span.setdefault(sp, role)
    class_index = {r: i + 1 for i, r in enumerate(roles_vocab)}
    labels = np.array([class_index.get(gold_by_span.get((s.start, s.end)), 0)
                       if (s.start, s.end) in gold_by_span else 0 for s in spans], dtype=np.intp)

    n_classes = len(roles_vocab) + 1
    mask_row = np.zeros(n_classes)
    mask_row[0] = 1.0
    for r in frame.roles:
        if r in class_index:
            mask_row[class_index[r]] = 1.0
    class_mask = np.tile(mask_row, (len(spans), 1))

    trigger = CandidateSpan(frame.trigger[0], frame.trigger[1]).bind(seq)
    trig_ctx_w = span_average_matrix([trigger], seq.l_w)
    trig_full_w = _abs_weights([trigger], seq)

    n = doc.n_words
    y_start = np.zeros(n)
    y_end = np.zeros(n)
    for _, (a, b) in frame.gold_args:
        y_start[a] = 1.0
        y_end[b] = 1.0

    word_start_tok = np.array([seq.word_to_token[i][0] for i in range(n)], dtype=np.intp)
    word_end_tok = np.array([seq.word_to_token[i][1] for i in range(n)], dtype=np.intp)
    lo = seq.context_range[0]
    start_tok = np.array([lo + s.token_range[0] for s in spans], dtype=np.intp)
    end_tok = np.array([lo + s.token_range[1] for s in spans], dtype=np.intp)

    lengths = np.array([s.length for s in spans], dtype=np.intp)
    if len(lengths) and lengths.max() > cfg.max_span_len:
        raise ContractError(
            f"span length {lengths.max()} exceeds length-embedding table of {cfg.max_span_len}")
    length_idx = np.maximum(lengths - 1, 0)

    return EventPlan(
        doc=doc, frame=frame, seq=seq, spans=spans, labels=labels,
        avg_m=span_average_matrix(spans, seq.l_w),
        span_full_m=_abs_weights(spans, seq),
        trig_ctx_w=trig_ctx_w, trig_full_w=trig_full_w,
        start_tok=start_tok, end_tok=end_tok,
        word_start_tok=word_start_tok, word_end_tok=word_end_tok,
        y_start=y_start, y_end=y_end, length_idx=length_idx,
        class_mask=class_mask,
        role_rows=np.asarray(seq.role_token_pos, dtype=np.intp),
    )


# ---------------------------------------------------------------------------
# batched forward
# ---------------------------------------------------------------------------


@dataclass
class EventForward:
    loss: Tensor
    loss_c: Tensor
    loss_b: Tensor
    probs: Tensor
    p_clue: Tensor | None
    p_role: Tensor | None
    avg: Tensor
    fused: Tensor


def _mean_heads(heads: list[Tensor]) -> Tensor:
    acc = heads[0]
    for h in heads[1:]:
        acc = nk.add(acc, h)
    return nk.scale(acc, 1.0 / len(heads))


def _broad(row: Tensor, n: int) -> Tensor:
    return nk.matmul(Tensor(np.ones((n, 1))), row)


def _pair_pooled(avg_rows: Tensor, trig_row: Tensor) -> Tensor:
    """softmax(span attention * trigger attention) per span row."""
    n = avg_rows.shape[0]
    return nk.softmax(nk.mul(avg_rows, _broad(trig_row, n)))


def forward_event(plan: EventPlan, enc: EncoderOutput, head: HeadParameters,
                  cfg: RunConfig, training: bool = False,
                  rng: np.random.Generator | None = None) -> EventForward:
    if not plan.spans:
        raise ContractError(f"{plan.frame.doc_id}: no candidate spans to score")
    w = head.weights
    n_s = len(plan.spans)
    d = head.dim
    hw = enc.context_hidden()

    avg = nk.matmul(Tensor(plan.avg_m), hw)

    p_clue = None
    if cfg.stcp:
        a_mean = _mean_heads(enc.context_attention())
        a_spans = nk.matmul(Tensor(plan.avg_m), a_mean)
        a_trig = nk.matmul(Tensor(plan.trig_ctx_w), a_mean)
        p_clue = _pair_pooled(a_spans, a_trig)
        clue = nk.matmul(p_clue, hw)
    else:
        clue = Tensor(np.zeros((n_s, d)))

    p_role = None
    if cfg.rlig and plan.seq.l_r > 0:
        r_mean = _mean_heads(enc.role_attention())
        r_spans = nk.matmul(Tensor(plan.avg_m), r_mean)
        r_trig = nk.matmul(Tensor(plan.trig_ctx_w), r_mean)
        p_role = _pair_pooled(r_spans, r_trig)
        role_vec = nk.matmul(p_role, enc.role_hidden())
    else:
        role_vec = Tensor(np.zeros((n_s, d)))

    fused = nk.tanh(nk.matmul(nk.concat([avg, clue, role_vec], axis=1), w["fuse"]))

    h_start, h_end = boundary_representations(enc.hidden, w["start_proj"], w["end_proj"])
    if cfg.boundary_pool == "none" or (cfg.boundary_pool == "roles" and plan.seq.l_r == 0):
        z_start = Tensor(np.zeros((n_s, d)))
        z_end = Tensor(np.zeros((n_s, d)))
    else:
        if cfg.boundary_pool == "full":
            pooled = enc.full_attention_mean()
            sp_w, tr_w = Tensor(plan.span_full_m), Tensor(plan.trig_full_w)
            basis_s, basis_e = h_start, h_end
        elif cfg.boundary_pool == "context":
            pooled = _mean_heads(enc.context_attention())
            sp_w, tr_w = Tensor(plan.avg_m), Tensor(plan.trig_ctx_w)
            ctx = plan.seq.context_token_indices()
            basis_s, basis_e = nk.gather_rows(h_start, ctx), nk.gather_rows(h_end, ctx)
        else:  # roles
            pooled = _mean_heads(enc.role_attention())
            sp_w, tr_w = Tensor(plan.avg_m), Tensor(plan.trig_ctx_w)
            basis_s = nk.gather_rows(h_start, plan.role_rows)
            basis_e = nk.gather_rows(h_end, plan.role_rows)
        p_bound = _pair_pooled(nk.matmul(sp_w, pooled), nk.matmul(tr_w, pooled))
        z_start = nk.matmul(p_bound, basis_s)
        z_end = nk.matmul(p_bound, basis_e)

    h_i = nk.gather_rows(h_start, plan.start_tok)
    h_j = nk.gather_rows(h_end, plan.end_tok)
    start_rep = nk.tanh(nk.matmul(nk.concat([h_i, z_start], axis=1), w["start_mix"]))
    end_rep = nk.tanh(nk.matmul(nk.concat([h_j, z_end], axis=1), w["end_mix"]))
    s_tilde = nk.matmul(nk.concat([start_rep, fused, end_rep], axis=1), w["span_out"])

    trig_rows = _broad(nk.matmul(Tensor(plan.trig_ctx_w), hw), n_s)
    event_rows = _broad(enc.event_hidden(), n_s)
    length_rows = nk.gather_rows(w["length_embed"], plan.length_idx)
    feats = classification_features(s_tilde, trig_rows, event_rows, length_rows)
    feats = nk.dropout(feats, cfg.dropout, rng, training)
    probs = classify(feats, head, plan.class_mask)

    loss_c = focal_loss(probs, plan.labels,
                        np.concatenate([[cfg.alpha_none], np.full(head.n_classes - 1, cfg.alpha_role)]),
                        cfg.gamma)
    p_s = nk.sigmoid(nk.matmul(nk.gather_rows(h_start, plan.word_start_tok), w["start_probe"]))
    p_e = nk.sigmoid(nk.matmul(nk.gather_rows(h_end, plan.word_end_tok), w["end_probe"]))
    loss_b = boundary_loss(p_s, p_e, plan.y_start, plan.y_end)
    loss = total_loss(loss_c, loss_b, cfg.boundary_lambda)
    return EventForward(loss=loss, loss_c=loss_c, loss_b=loss_b, probs=probs,
                        p_clue=p_clue, p_role=p_role, avg=avg, fused=fused)


def attention_reads(loss: Tensor) -> set[str]:
    """Which attention views the loss graph actually consumed."""
    return nk.graph_names(loss) & ATTENTION_VIEW_NAMES


# ---------------------------------------------------------------------------
# model bundle, decoding, checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Model:
    spec: TokenizerSpec
    cfg: RunConfig
    event_types: tuple[str, ...]
    roles: tuple[str, ...]
    encoder: ToyEncoderParams | None
    head: HeadParameters

    def params(self) -> list[Tensor]:
        out = list(self.head.params())
        if self.encoder is not None and not self.cfg.freeze_encoder:
            out += self.encoder.params()
        return out

    def role_of_class(self, cls: int) -> str:
        return self.roles[cls - 1]

    def encode(self, seq_or_pair, training: bool = False,
               rng: np.random.Generator | None = None) -> EncoderOutput:
        if self.encoder is None:
            raise ContractError("model has no built-in encoder; supply an imported encoder output")
        doc, frame = seq_or_pair
        seq = assemble_sequence(doc, frame, self.spec)
        dropout = self.cfg.dropout if training else 0.0
        out = toy_encode(seq, self.encoder, self.spec, dropout, rng, training,
                         self.cfg.window_attention)
        if self.cfg.freeze_encoder:
            out = EncoderOutput(seq=seq, hidden=out.hidden.detach(),
                                attn_heads=[a.detach() for a in out.attn_heads])
        return out

    def save(self, path: str | Path) -> None:
        tensors: dict[str, np.ndarray] = {}
        for k, t in self.head.weights.items():
            tensors[f"head/{k}"] = t.data
        if self.encoder is not None:
            for k, t in self.encoder.weights.items():
                tensors[f"enc/{k}"] = t.data
        meta = {
            "kind": "scprg-checkpoint",
            "config": self.cfg.to_dict(),
            "tokenizer": self.spec.to_json(),
            "event_types": list(self.event_types),
            "roles": list(self.roles),
            "head": self.head.meta(),
            "encoder": self.encoder.meta() if self.encoder is not None else None,
        }
        write_container(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        tensors, meta = read_container(path)
        if meta.get("kind") != "scprg-checkpoint":
            raise FormatError(f"not a checkpoint file: kind={meta.get('kind')!r}")
        cfg = RunConfig.from_dict(meta["config"])
        spec = TokenizerSpec.from_json(meta["tokenizer"])
        hm = meta["head"]
        head = HeadParameters.create(hm["dim"], hm["n_classes"], hm["max_span_len"],
                                     hm["length_dim"])
        for k in head.weights:
            full = f"head/{k}"
            if full not in tensors:
                raise FormatError(f"checkpoint missing tensor {full!r}")
            head.weights[k] = Tensor(tensors[full], requires_grad=True)
        encoder = None
        if meta.get("encoder"):
            em = meta["encoder"]
            encoder = ToyEncoderParams.create(em["vocab_size"], em["layers"], em["heads"],
                                              em["dim"], em["ff_dim"], em["max_pos"])
            for k in encoder.weights:
                full = f"enc/{k}"
                if full not in tensors:
                    raise FormatError(f"checkpoint missing tensor {full!r}")
                encoder.weights[k] = Tensor(tensors[full], requires_grad=True)
        return cls(spec=spec, cfg=cfg, event_types=tuple(meta["event_types"]),
                   roles=tuple(meta["roles"]), encoder=encoder, head=head)


def decode(probs: np.ndarray, spans: list[CandidateSpan], model: Model,
           frame_roles: tuple[str, ...], mode: str) -> set[tuple[str, tuple[int, int]]]:
    """per-span-argmax emits every span whose best class is a role;
    per-role-top1 keeps only the strongest span per role (ties favor the
    earlier span start, then the earlier end)."""
    picks: list[tuple[int, CandidateSpan, float]] = []
    for k, span in enumerate(spans):
        cls = int(probs[k].argmax())
        if cls != 0:
            picks.append((cls, span, float(probs[k, cls])))
    if mode == "per-role-top1":
        best: dict[int, tuple[int, CandidateSpan, float]] = {}
        for cls, span, p in picks:
            cur = best.get(cls)
            if cur is None or p > cur[2] or (p == cur[2] and (span.start, span.end) < (cur[1].start, cur[1].end)):
                best[cls] = (cls, span, p)
        picks = list(best.values())
    elif mode != "per-span-argmax":
        raise ConfigError(f"unknown decode mode {mode!r}")
    return {(model.role_of_class(cls), (span.start, span.end)) for cls, span, p in picks}


def predict(doc: Document, frame: EventFrame, model: Model,
            mode: str | None = None,
            enc: EncoderOutput | None = None) -> set[tuple[str, tuple[int, int]]]:
    """Decode the (role, span) set for one event; pure ASE at inference."""
    mode = mode or model.cfg.decode
    fwd, plan = forward_for_eval(doc, frame, model, enc)
    if fwd is None:
        return set()
    return decode(fwd.probs.data, plan.spans, model, frame.roles, mode)


def forward_for_eval(doc: Document, frame: EventFrame, model: Model,
                     enc: EncoderOutput | None = None):
    known = set(model.roles)
    if not set(frame.roles) <= known:
        # roles unseen at train time cannot be predicted; they surface in the
        # evaluation report as unknown and their gold items count as misses
        import dataclasses
        frame = dataclasses.replace(frame, roles=tuple(r for r in frame.roles if r in known))
    plan = compile_event(doc, frame, model.spec, model.cfg, model.roles, training=False,
                         seq=enc.seq if enc is not None else None)
    if not plan.spans:
        return None, plan
    if enc is None:
        enc = model.encode((doc, frame), training=False)
    return forward_event(plan, enc, model.head, model.cfg, training=False), plan


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    history: list[dict]
    best_epoch: int
    best_dev_f1: float


def build_model(train_frames: list[EventFrame], dev_frames: list[EventFrame],
                docs: list[Document], cfg: RunConfig) -> Model:
    """Vocabularies come from train plus dev so evaluation never crashes on
    a role unseen in train; unknown roles at test time are reported instead."""
    event_types, roles = build_vocabularies(list(train_frames) + list(dev_frames))
    spec = TokenizerSpec.build(docs, event_types, roles, cfg.max_window, cfg.window_stride)
    encoder = ToyEncoderParams.create(
        spec.size, cfg.toy_layers, cfg.toy_heads, cfg.toy_dim, cfg.toy_ff_dim,
        cfg.max_window, seed=cfg.seed)
    if cfg.freeze_encoder:
        encoder.set_trainable(False)
    head = HeadParameters.create(cfg.toy_dim, len(roles) + 1, cfg.max_span_len,
                                 cfg.length_embed_dim, seed=cfg.seed + 1)
    return Model(spec=spec, cfg=cfg, event_types=event_types, roles=roles,
                 encoder=encoder, head=head)


def train(train_data: tuple[list[Document], list[EventFrame]],
          dev_data: tuple[list[Document], list[EventFrame]] | None,
          cfg: RunConfig,
          stop_at_dev_f1: float | None = None,
          progress: bool = False) -> TrainResult:
    """Deterministic training given the seed; keeps the best-dev checkpoint."""
    from .evaluation import gold_items, predicted_items, span_f1

    cfg.validate()
    if cfg.encoder_mode != "toy":
        raise ConfigError("training requires the built-in toy encoder (encoder_mode=toy)")
    train_docs, train_frames = train_data
    if not train_frames:
        raise ConfigError("training corpus has no events")
    dev_docs, dev_frames = dev_data if dev_data else ([], [])

    model = build_model(train_frames, dev_frames, train_docs + dev_docs, cfg)
    doc_index = {d.doc_id: d for d in train_docs}
    plans = [compile_event(doc_index[f.doc_id], f, model.spec, model.cfg, model.roles,
                           training=True) for f in train_frames]
    dev_doc_index = {d.doc_id: d for d in dev_docs}
    dev_plans = [compile_event(dev_doc_index[f.doc_id], f, model.spec, model.cfg,
                               model.roles, training=False) for f in dev_frames]
    dev_gold = gold_items(dev_frames)
    params = model.params()
    opt = nk.adam_init(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    history: list[dict] = []
    best_f1 = -1.0
    best_epoch = -1
    best_weights: dict[str, np.ndarray] | None = None

    def snapshot() -> dict[str, np.ndarray]:
        snap = {f"head/{k}": t.data.copy() for k, t in model.head.weights.items()}
        if model.encoder is not None:
            snap.update({f"enc/{k}": t.data.copy() for k, t in model.encoder.weights.items()})
        return snap

    def restore(snap: dict[str, np.ndarray]) -> None:
        for k, t in model.head.weights.items():
            t.data = snap[f"head/{k}"].copy()
        if model.encoder is not None:
            for k, t in model.encoder.weights.items():
                t.data = snap[f"enc/{k}"].copy()

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(plans))
        epoch_loss = 0.0
        for lo in range(0, len(order), cfg.batch):
            batch = order[lo:lo + cfg.batch]
            nk.zero_grads(params)
            losses = []
            try:
                for i in batch:
                    plan = plans[i]
                    enc = model.encode((plan.doc, plan.frame), training=True, rng=rng)
                    fwd = forward_event(plan, enc, model.head, cfg, training=True, rng=rng)
                    losses.append(fwd.loss)
                acc = losses[0]
                for other in losses[1:]:
                    acc = nk.add(acc, other)
                batch_loss = nk.scale(acc, 1.0 / len(losses))
                value = batch_loss.item()
            except DomainError as exc:
                raise RuntimeError(
                    f"training diverged: {exc} at epoch {epoch}, batch starting at {lo} "
                    f"(lr={cfg.lr}, batch={cfg.batch})") from exc
            if not np.isfinite(value):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch starting at {lo} (lr={cfg.lr}, batch={cfg.batch})")
            batch_loss.backward()
            nk.adam_step(opt, params)
            epoch_loss += value * len(losses)
        epoch_loss /= len(plans)

        entry = {"epoch": epoch, "train_loss": epoch_loss}
        if dev_frames:
            pred = set()
            for plan in dev_plans:
                if not plan.spans:
                    continue
                enc = model.encode((plan.doc, plan.frame), training=False)
                fwd = forward_event(plan, enc, model.head, cfg, training=False)
                for role, span in decode(fwd.probs.data, plan.spans, model,
                                         plan.frame.roles, cfg.decode):
                    pred.add((plan.frame.doc_id, plan.frame.event_index,
                              plan.frame.event_type, role, span))
            report = span_f1(pred, dev_gold)
            entry["dev_span_f1"] = report.f1
            if report.f1 > best_f1:
                best_f1 = report.f1
                best_epoch = epoch
                best_weights = snapshot()
        history.append(entry)
        if progress:
            log.info("epoch %d: loss %.4f dev_f1 %s", epoch, epoch_loss,
                     f"{entry.get('dev_span_f1', float('nan')):.4f}" if dev_frames else "-")
        if stop_at_dev_f1 is not None and dev_frames and best_f1 >= stop_at_dev_f1:
            break

    if best_weights is not None:
        restore(best_weights)
    else:
        best_epoch = len(history) - 1
        best_f1 = float("nan")
    return TrainResult(model=model, history=history, best_epoch=best_epoch, best_dev_f1=best_f1)
