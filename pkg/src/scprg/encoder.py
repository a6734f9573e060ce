"""Encoders and the binary interchange format.

Two ways to obtain hidden states plus last-layer attention for an assembled
sequence: a built-in toy transformer (trainable end to end, or frozen), and
an importer for interchange files produced by an external exporter wrapping
a real pretrained model. Either path yields an :class:`EncoderOutput` whose
views slice out the event anchor, context rows, role anchors and the none
row, with attention view rows re-normalized into distributions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .errors import ContractError, FormatError, VocabError
from .numkit import Tensor
from .sequence import AssembledSequence, TokenizerSpec, plan_windows, window_encode

MAGIC = b"SCPRGTNS"
VERSION = 1


@dataclass
class ToyEncoderParams:
    """Weights of the toy multi-head self-attention stack."""

    layers: int
    heads: int
    dim: int
    ff_dim: int
    vocab_size: int
    max_pos: int
    weights: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def create(cls, vocab_size: int, layers: int = 2, heads: int = 4, dim: int = 64,
               ff_dim: int = 128, max_pos: int = 512, seed: int = 0) -> "ToyEncoderParams":
        if layers < 1:
            raise ContractError(f"toy encoder needs at least one layer, got {layers}")
        if dim % heads != 0:
            raise ContractError(f"model dim {dim} not divisible by {heads} heads")
        rng = np.random.default_rng(seed)

        def w(shape, scale=None):
            if scale is None:
                scale = 1.0 / np.sqrt(shape[0])
            return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

        weights: dict[str, Tensor] = {
            "tok": w((vocab_size, dim), 0.02),
            "pos": w((max_pos, dim), 0.02),
        }
        for i in range(layers):
            weights[f"l{i}.wq"] = w((dim, dim))
            weights[f"l{i}.wk"] = w((dim, dim))
            weights[f"l{i}.wv"] = w((dim, dim))
            weights[f"l{i}.wo"] = w((dim, dim))
            weights[f"l{i}.ln1_g"] = Tensor(np.ones(dim), requires_grad=True)
            weights[f"l{i}.ln1_b"] = Tensor(np.zeros(dim), requires_grad=True)
            weights[f"l{i}.ff1"] = w((dim, ff_dim))
            weights[f"l{i}.ff1_b"] = Tensor(np.zeros(ff_dim), requires_grad=True)
            weights[f"l{i}.ff2"] = w((ff_dim, dim))
            weights[f"l{i}.ff2_b"] = Tensor(np.zeros(dim), requires_grad=True)
            weights[f"l{i}.ln2_g"] = Tensor(np.ones(dim), requires_grad=True)
            weights[f"l{i}.ln2_b"] = Tensor(np.zeros(dim), requires_grad=True)
        return cls(layers, heads, dim, ff_dim, vocab_size, max_pos, weights)

    def params(self) -> list[Tensor]:
        return [self.weights[k] for k in sorted(self.weights)]

    def set_trainable(self, trainable: bool) -> None:
        for t in self.weights.values():
            t.requires_grad = trainable

    def meta(self) -> dict:
        return {"layers": self.layers, "heads": self.heads, "dim": self.dim,
                "ff_dim": self.ff_dim, "vocab_size": self.vocab_size, "max_pos": self.max_pos}


def toy_forward(token_ids, params: ToyEncoderParams, dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None,
                training: bool = False) -> tuple[Tensor, list[Tensor]]:
    """Run the stack on raw token ids; returns final hidden states and the
    last layer's per-head attention matrices."""
    ids = np.asarray(token_ids, dtype=np.intp)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError("toy_forward expects a nonempty 1-D token id list")
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise VocabError(f"token id out of range [0, {params.vocab_size})")
    if ids.size > params.max_pos:
        raise ContractError(f"sequence of {ids.size} tokens exceeds max positions {params.max_pos}")
    if training and dropout_rate > 0 and rng is None:
        raise ContractError("training-mode dropout needs a seeded generator")
    w = params.weights
    n = ids.size
    dh = params.dim // params.heads
    scale = 1.0 / np.sqrt(dh)

    x = nk.add(nk.gather_rows(w["tok"], ids), nk.gather_rows(w["pos"], np.arange(n)))
    last_attn: list[Tensor] = []
    for i in range(params.layers):
        q = nk.matmul(x, w[f"l{i}.wq"])
        k = nk.matmul(x, w[f"l{i}.wk"])
        v = nk.matmul(x, w[f"l{i}.wv"])
        heads_out: list[Tensor] = []
        attn_heads: list[Tensor] = []
        for h in range(params.heads):
            cols = np.arange(h * dh, (h + 1) * dh)
            qh = nk.submatrix(q, cols=cols)
            kh = nk.submatrix(k, cols=cols)
            vh = nk.submatrix(v, cols=cols)
            scores = nk.scale(nk.matmul(qh, nk.transpose(kh)), scale)
            attn = nk.softmax(scores)
            attn_heads.append(attn)
            heads_out.append(nk.matmul(attn, vh))
        ctx = nk.matmul(nk.concat(heads_out, axis=1), w[f"l{i}.wo"])
        ctx = nk.dropout(ctx, dropout_rate, rng, training)
        x = nk.layernorm(nk.add(x, ctx), w[f"l{i}.ln1_g"], w[f"l{i}.ln1_b"])
        ff = nk.add_rowvec(nk.matmul(x, w[f"l{i}.ff1"]), w[f"l{i}.ff1_b"])
        ff = nk.add_rowvec(nk.matmul(nk.gelu(ff), w[f"l{i}.ff2"]), w[f"l{i}.ff2_b"])
        ff = nk.dropout(ff, dropout_rate, rng, training)
        x = nk.layernorm(nk.add(x, ff), w[f"l{i}.ln2_g"], w[f"l{i}.ln2_b"])
        if i == params.layers - 1:
            last_attn = attn_heads
    return x, last_attn


@dataclass
class EncoderOutput:
    """Hidden states, last-layer attention heads and anchored views."""

    seq: AssembledSequence
    hidden: Tensor             # (l_s, d)
    attn_heads: list[Tensor]   # per head, (l_s, l_s), rows are distributions
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_heads(self) -> int:
        return len(self.attn_heads)

    @property
    def dim(self) -> int:
        return self.hidden.shape[1]

    def _ctx_idx(self) -> np.ndarray:
        return self.seq.context_token_indices()

    def event_hidden(self) -> Tensor:
        """Hidden row of the first event special token, shape (1, d)."""
        return self._memo("event_hidden", lambda: nk.gather_rows(
            self.hidden, [self.seq.event_token_pos]))

    def context_hidden(self) -> Tensor:
        """Context word-piece rows, shape (l_w, d)."""
        return self._memo("context_hidden", lambda: nk.gather_rows(self.hidden, self._ctx_idx()))

    def role_hidden(self) -> Tensor:
        """Role anchor rows (first special token of each role block), (l_r, d)."""
        if self.seq.l_r == 0:
            raise ContractError("event declares no roles; no role view exists")
        return self._memo("role_hidden", lambda: nk.gather_rows(
            self.hidden, np.asarray(self.seq.role_token_pos)))

    def none_hidden(self) -> Tensor:
        return self._memo("none_hidden", lambda: nk.gather_rows(self.hidden, [self.seq.none_pos]))

    def context_attention(self) -> list[Tensor]:
        """Per head: context-to-context attention, rows re-normalized, (l_w, l_w)."""
        def build():
            idx = self._ctx_idx()
            out = []
            for h, a in enumerate(self.attn_heads):
                sub = nk.submatrix(a, rows=idx, cols=idx)
                sub = nk.normalize_rows(sub)
                sub.name = "context_attention"
                out.append(sub)
            return out
        return self._memo("context_attention", build)

    def role_attention(self) -> list[Tensor]:
        """Per head: context-to-role-anchor attention, rows re-normalized, (l_w, l_r)."""
        if self.seq.l_r == 0:
            raise ContractError("event declares no roles; no role attention exists")
        def build():
            ridx = np.asarray(self.seq.role_token_pos)
            cidx = self._ctx_idx()
            out = []
            for a in self.attn_heads:
                sub = nk.submatrix(a, rows=cidx, cols=ridx)
                sub = nk.normalize_rows(sub)
                sub.name = "role_attention"
                out.append(sub)
            return out
        return self._memo("role_attention", build)

    def full_attention_mean(self) -> Tensor:
        """Mean over heads of the full attention matrix, (l_s, l_s)."""
        def build():
            acc = self.attn_heads[0]
            for a in self.attn_heads[1:]:
                acc = nk.add(acc, a)
            out = nk.scale(acc, 1.0 / self.n_heads)
            out.name = "full_attention"
            return out
        return self._memo("full_attention_mean", build)

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def validate(self, atol: float = 1e-5) -> None:
        for h, a in enumerate(self.attn_heads):
            sums = a.data.sum(axis=1)
            if not np.allclose(sums, 1.0, atol=atol):
                raise ContractError(f"attention head {h} rows do not sum to 1 (max dev {np.abs(sums - 1).max():g})")
        seq = self.seq
        specials = {0, seq.event_token_pos, seq.none_pos}
        ctx = set(range(seq.context_range[0], seq.context_range[1] + 1))
        anchors = set(seq.role_token_pos)
        if ctx & anchors or seq.none_pos in ctx or seq.none_pos in anchors:
            raise ContractError("views overlap: context, role anchors and none must be disjoint")
        if max(ctx | anchors | specials) >= seq.length:
            raise ContractError("view index out of sequence range")


def toy_encode(seq: AssembledSequence, params: ToyEncoderParams, spec: TokenizerSpec,
               dropout_rate: float = 0.0, rng: np.random.Generator | None = None,
               training: bool = False, window_attention: str = "average") -> EncoderOutput:
    """Encode an assembled sequence with the toy stack.

    Sequences that fit in one window keep gradients flowing end to end;
    longer ones fall back to dynamic-window encoding whose averaged outputs
    are constants (train such corpora with the encoder frozen).
    """
    plans = plan_windows(seq, spec)
    if len(plans) == 1:
        hidden, attn = toy_forward(list(seq.token_ids), params, dropout_rate, rng, training)
        return EncoderOutput(seq=seq, hidden=hidden, attn_heads=attn)

    def encode_window(ids):
        h, a = toy_forward(ids, params)
        return h.data, np.stack([t.data for t in a])

    hidden, attn = window_encode(seq, encode_window, spec, window_attention)
    return EncoderOutput(seq=seq, hidden=Tensor(hidden),
                         attn_heads=[Tensor(attn[h]) for h in range(attn.shape[0])])


# ---------------------------------------------------------------------------
# interchange container
# ---------------------------------------------------------------------------


def write_container(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write the binary container: magic, version, metadata JSON, f32 payload."""
    payload = bytearray()
    entries = {}
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        entries[name] = {"dtype": "f32", "shape": list(arr32.shape), "offset": len(payload)}
        payload.extend(arr32.tobytes())
    doc = dict(meta)
    doc.update(entries)
    blob = json.dumps(doc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read and validate a container; tensors come back as float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 8:
        raise FormatError(f"file too short to be a container: {len(raw)} bytes")
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    version, meta_len = struct.unpack("<II", raw[len(MAGIC):len(MAGIC) + 8])
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}, expected {VERSION}")
    meta_start = len(MAGIC) + 8
    if meta_start + meta_len > len(raw):
        raise FormatError("metadata block extends past end of file")
    try:
        doc = json.loads(raw[meta_start:meta_start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}") from exc
    payload = raw[meta_start + meta_len:]

    tensors: dict[str, np.ndarray] = {}
    meta: dict = {}
    expected_end = 0
    for key, val in doc.items():
        if isinstance(val, dict) and val.get("dtype") == "f32" and "shape" in val and "offset" in val:
            shape = tuple(int(s) for s in val["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = int(val["offset"])
            end = start + count * 4
            if start < 0 or end > len(payload):
                raise FormatError(
                    f"tensor {key!r} needs bytes [{start}, {end}) but payload has {len(payload)}")
            tensors[key] = np.frombuffer(payload, dtype="<f4", count=count,
                                         offset=start).reshape(shape).astype(np.float64)
            expected_end = max(expected_end, end)
        else:
            meta[key] = val
    if expected_end != len(payload):
        raise FormatError(f"payload length mismatch: expected {expected_end} bytes, found {len(payload)}")
    return tensors, meta


REQUIRED_META = ("event_token_pos", "context_range", "role_token_pos", "none_pos", "H", "d", "l_s")


def export_encoder_output(path, out: EncoderOutput, extra_meta: dict | None = None) -> None:
    """Write an EncoderOutput to the interchange format."""
    seq = out.seq
    meta = {
        "kind": "encoder-output",
        "event_token_pos": seq.event_token_pos,
        "context_range": list(seq.context_range),
        "role_token_pos": list(seq.role_token_pos),
        "none_pos": seq.none_pos,
        "H": out.n_heads,
        "d": out.dim,
        "l_s": seq.length,
        "word_to_token": [list(t) for t in seq.word_to_token],
        "roles": list(seq.roles),
        "event_type": seq.event_type,
        "doc_id": seq.doc_id,
        "event_index": seq.event_index,
    }
    if extra_meta:
        meta.update(extra_meta)
    tensors = {
        "H_s": out.hidden.data,
        "A": np.stack([a.data for a in out.attn_heads]),
    }
    write_container(path, tensors, meta)


def import_encoder_output(path) -> EncoderOutput:
    """Load an interchange file into a constant EncoderOutput."""
    tensors, meta = read_container(path)
    for key in ("H_s", "A"):
        if key not in tensors:
            raise FormatError(f"required tensor {key!r} missing from container")
    missing = [k for k in REQUIRED_META if k not in meta]
    if missing:
        raise FormatError(f"required metadata keys missing: {missing}")
    H_s, A = tensors["H_s"], tensors["A"]
    H, d, l_s = int(meta["H"]), int(meta["d"]), int(meta["l_s"])
    if H < 1 or d < 1 or l_s < 1:
        raise FormatError(f"metadata requires H >= 1, d >= 1, l_s >= 1; got H={H}, d={d}, l_s={l_s}")
    if H_s.shape != (l_s, d):
        raise FormatError(f"H_s shape {H_s.shape} inconsistent with metadata (l_s={l_s}, d={d})")
    if A.shape != (H, l_s, l_s):
        raise FormatError(f"A shape {A.shape} inconsistent with metadata (H={H}, l_s={l_s})")
    row_sums = A.sum(axis=2)
    dev = np.abs(row_sums - 1.0).max()
    if dev > 1e-3:
        raise FormatError(f"attention rows do not sum to 1 within 1e-3 (max deviation {dev:g})")

    word_to_token = tuple(tuple(int(x) for x in t) for t in meta.get("word_to_token", []))
    seq = AssembledSequence(
        token_ids=tuple([0] * l_s),
        event_token_pos=int(meta["event_token_pos"]),
        context_range=tuple(int(x) for x in meta["context_range"]),
        role_token_pos=tuple(int(x) for x in meta["role_token_pos"]),
        none_pos=int(meta["none_pos"]),
        word_to_token=word_to_token,
        roles=tuple(str(r) for r in meta.get("roles", [])),
        event_type=str(meta.get("event_type", "")),
        doc_id=str(meta.get("doc_id", "")),
        event_index=int(meta.get("event_index", 0)),
    )
    out = EncoderOutput(seq=seq, hidden=Tensor(H_s),
                        attn_heads=[Tensor(A[h]) for h in range(H)])
    out.validate(atol=2e-3)
    return out
